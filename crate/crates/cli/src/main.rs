//! `vern`: synthesize cohorts, train, evaluate, predict and export heatmaps.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 data, 5 checkpoint.

mod commands;
mod error;
mod heatmap;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "vern", version, about = "Graph-based slide-level STAS classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct OutDir {
    /// Output directory.
    #[arg(long, env = "VERN_OUT_DIR", default_value = "vern-out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic cohort with a planted signal.
    Synth {
        #[command(flatten)]
        out: OutDir,
        #[arg(long, default_value_t = 20)]
        slides: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Shift applied to the planted cluster; 0 gives a null cohort.
        #[arg(long, default_value_t = 2.0)]
        signal: f64,
        #[arg(long, default_value_t = 16)]
        min_patches: usize,
        #[arg(long, default_value_t = 48)]
        max_patches: usize,
    },
    /// Stratified k-fold cross-validation.
    Train(commands::TrainArgs),
    /// Score a labelled manifest with a checkpoint.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        out: OutDir,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Per-slide probabilities, plus patient flags when the manifest has patient ids.
    Predict {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        out: OutDir,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Per-patch contributions for one slide.
    Heatmap {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        slide_id: String,
        #[command(flatten)]
        out: OutDir,
        /// Also render a PNG scatter.
        #[arg(long)]
        png: bool,
    },
    /// Build a manifest from a label listing and a directory of feature files.
    Convert {
        #[arg(long)]
        listing: PathBuf,
        #[arg(long)]
        features_dir: PathBuf,
        /// Manifest to write.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "slide_id")]
        id_column: String,
        #[arg(long, default_value = "label")]
        label_column: String,
        #[arg(long)]
        section_column: Option<String>,
        #[arg(long)]
        patient_column: Option<String>,
    },
    /// Write the KNN graph of one slide as node and edge CSVs.
    GraphExport {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        slide_id: String,
        #[command(flatten)]
        out: OutDir,
        #[arg(long, default_value_t = vern::graph::DEFAULT_K)]
        k: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth {
            out,
            slides,
            seed,
            signal,
            min_patches,
            max_patches,
        } => commands::synth(&out.out, slides, seed, signal, min_patches, max_patches),
        Command::Train(args) => commands::train(&args),
        Command::Eval {
            manifest,
            checkpoint,
            out,
            threshold,
        } => commands::eval(&manifest, &checkpoint, &out.out, threshold),
        Command::Predict {
            manifest,
            checkpoint,
            out,
            threshold,
        } => commands::predict(&manifest, &checkpoint, &out.out, threshold),
        Command::Heatmap {
            manifest,
            checkpoint,
            slide_id,
            out,
            png,
        } => commands::heatmap(&manifest, &checkpoint, &slide_id, &out.out, png),
        Command::Convert {
            listing,
            features_dir,
            manifest,
            id_column,
            label_column,
            section_column,
            patient_column,
        } => commands::convert(
            &listing,
            &features_dir,
            &manifest,
            vern::data::ListingColumns {
                slide_id: id_column,
                label: label_column,
                section_kind: section_column,
                patient_id: patient_column,
            },
        ),
        Command::GraphExport {
            manifest,
            slide_id,
            out,
            k,
        } => commands::graph_export(&manifest, &slide_id, &out.out, k),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vern: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
