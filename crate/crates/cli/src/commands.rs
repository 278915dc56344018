use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::json;
use vern::data::{
    convert_label_listing, load_manifest, synth_dataset, Dataset, ListingColumns, SectionKind, SlideEntry, SynthConfig,
    FEAT_A_DIM, FEAT_B_DIM,
};
use vern::graph::{build_wsi_graph, WsiGraph, DEFAULT_K};
use vern::metrics::EvalReport;
use vern::model::{load_checkpoint, save_checkpoint, VernConfig, VernParams};
use vern::train::{dataset_graphs, run_cv_graphs, training_log_csv, TrainConfig};
use vern::{vern_forward, Mode, VernOutput};

use crate::error::CliError;
use crate::heatmap::{sanitize, HeatmapArtifact};
use crate::report::{patient_flags, patients_csv, predictions_csv, slide_predictions};

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub out: crate::OutDir,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// RMSprop smoothing constant.
    #[arg(long, default_value_t = 0.9)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 512)]
    pub hidden: usize,
    #[arg(long, default_value_t = 256)]
    pub embed: usize,
    /// Loss weight on positive slides.
    #[arg(long, default_value_t = 1.0)]
    pub pos_weight: f64,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Neighbours per patch in the slide graph.
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, body).map_err(|e| CliError::io(path, e))
}

fn out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn load_model(path: &Path) -> Result<VernParams, CliError> {
    let p = load_checkpoint(path)?;
    if (p.config.dim_a, p.config.dim_b) != (FEAT_A_DIM, FEAT_B_DIM) {
        return Err(CliError::Checkpoint(format!(
            "{} expects feature dims ({}, {}), slide files hold ({FEAT_A_DIM}, {FEAT_B_DIM})",
            path.display(),
            p.config.dim_a,
            p.config.dim_b
        )));
    }
    Ok(p)
}

/// Graph neighbourhood size the checkpoint was trained with.
fn graph_k(p: &VernParams) -> usize {
    p.notes.get("k").and_then(|k| k.parse().ok()).unwrap_or(DEFAULT_K)
}

fn slide_graph(ds: &Dataset, e: &SlideEntry, k: usize) -> Result<WsiGraph, CliError> {
    let records = ds.load_slide(e)?;
    Ok(build_wsi_graph(e.slide_id.clone(), &records, k, e.label)?)
}

fn find<'d>(ds: &'d Dataset, slide_id: &str) -> Result<&'d SlideEntry, CliError> {
    ds.get(slide_id)
        .ok_or_else(|| CliError::Usage(format!("slide {slide_id:?} is not in the manifest")))
}

/// Eval-mode probability for every manifest entry, in order. Slides are
/// scored on scoped worker threads.
fn score(ds: &Dataset, p: &VernParams) -> Result<Vec<f64>, CliError> {
    let k = graph_k(p);
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let chunk = ds.entries.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = ds
            .entries
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|e| {
                            let g = slide_graph(ds, e, k)?;
                            Ok(vern_forward(&g, p, &mut Mode::Eval)?.prob)
                        })
                        .collect::<Result<Vec<f64>, CliError>>()
                })
            })
            .collect();
        let mut probs = Vec::with_capacity(ds.entries.len());
        for h in handles {
            probs.extend(h.join().expect("scoring thread panicked")?);
        }
        Ok(probs)
    })
}

pub fn synth(
    out: &Path,
    slides: usize,
    seed: u64,
    signal: f64,
    min_patches: usize,
    max_patches: usize,
) -> Result<(), CliError> {
    let cfg = SynthConfig {
        n_slides: slides,
        patches_min: min_patches,
        patches_max: max_patches,
        signal_strength: signal,
        seed,
    };
    cfg.validate()?;
    out_dir(out)?;
    let ds = synth_dataset(&cfg, out)?;
    let [neg, pos] = ds.dataset.class_counts();
    let patches: usize = ds.dataset.entries.iter().map(|e| e.patch_count).sum();
    println!(
        "{} slides ({pos} positive, {neg} negative), {patches} patches, signal {signal}",
        ds.dataset.len()
    );
    println!("manifest: {}", out.join("manifest.csv").display());
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let ds = load_manifest(&a.manifest)?;
    let cfg = TrainConfig {
        model: VernConfig::with_sizes(a.hidden, a.embed),
        lr: a.lr,
        alpha: a.alpha,
        epochs: a.epochs,
        seed: a.seed,
        pos_weight: a.pos_weight,
        folds: a.folds,
        k: a.k,
        threshold: a.threshold,
        ..Default::default()
    };
    cfg.validate()?;
    let out = &a.out.out;
    out_dir(out)?;
    let graphs = dataset_graphs(&ds, cfg.k)?;
    let cv = run_cv_graphs(&ds, &graphs, &cfg)?;

    let mut folds_csv = String::from("slide_id,fold\n");
    for (id, f) in &cv.split.assignments {
        let _ = writeln!(folds_csv, "{id},{f}");
    }
    let mut preds = String::from("fold,slide_id,label,prob\n");
    for f in &cv.folds {
        let mut params = f.result.params.clone();
        params.notes.insert("k".into(), cfg.k.to_string());
        save_checkpoint(&params, &out.join(format!("fold_{}.ckpt", f.fold)))?;
        write(&out.join(format!("fold_{}_report.json", f.fold)), f.report.to_json())?;
        for (id, p) in f.val_ids.iter().zip(&f.val_probs) {
            let label = ds.get(id).and_then(|e| e.label).map_or(String::new(), |l| l.as_u8().to_string());
            let _ = writeln!(preds, "{},{id},{label},{p}", f.fold);
        }
        let auroc = f.report.auroc.map_or("undefined".into(), |v| format!("{v:.4}"));
        let best = f.result.best_epoch.map_or("-".into(), |e| e.to_string());
        println!("fold {}: best epoch {best}, val AUROC {auroc}", f.fold);
    }
    write(&out.join("folds.csv"), folds_csv)?;
    write(&out.join("val_predictions.csv"), preds)?;
    write(&out.join("training_log.csv"), training_log_csv(&cv.folds))?;

    let metrics: serde_json::Map<String, serde_json::Value> = cv
        .summary
        .metrics
        .iter()
        .map(|(name, ms)| (name.clone(), json!(ms)))
        .collect();
    let summary = json!({
        "source": ds.source_tag,
        "slides": ds.len(),
        "config": {
            "folds": cfg.folds,
            "epochs": cfg.epochs,
            "lr": cfg.lr,
            "alpha": cfg.alpha,
            "seed": cfg.seed,
            "hidden": cfg.model.hidden,
            "embed": cfg.model.embed,
            "pos_weight": cfg.pos_weight,
            "k": cfg.k,
            "threshold": cfg.threshold,
        },
        "metrics": metrics,
        "pooled_confusion": cv.summary.pooled_confusion,
    });
    write(
        &out.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    for (name, ms) in &cv.summary.metrics {
        println!("{name:>12}: {:.4} ± {:.4} ({} folds)", ms.mean, ms.std, ms.folds);
    }
    Ok(())
}

fn labels(entries: &[SlideEntry]) -> Result<Vec<bool>, CliError> {
    entries
        .iter()
        .map(|e| {
            e.label
                .map(|l| l.is_positive())
                .ok_or_else(|| CliError::Data(format!("slide {} has no label", e.slide_id)))
        })
        .collect()
}

fn print_report(name: &str, r: &EvalReport) {
    let cells: Vec<String> = r
        .scalars()
        .iter()
        .map(|(k, v)| format!("{k} {}", v.map_or("undefined".into(), |v| format!("{v:.4}"))))
        .collect();
    println!("{name} (n={}): {}", r.n, cells.join(", "));
}

pub fn eval(manifest: &Path, checkpoint: &Path, out: &Path, threshold: f64) -> Result<(), CliError> {
    let ds = load_manifest(manifest)?;
    let p = load_model(checkpoint)?;
    let labels = labels(&ds.entries)?;
    out_dir(out)?;
    let probs = score(&ds, &p)?;
    let overall = EvalReport::new(&probs, &labels, threshold)?;
    write(&out.join("report.json"), overall.to_json())?;
    print_report("overall", &overall);

    for (kind, file) in [
        (SectionKind::Frozen, "report_frozen.json"),
        (SectionKind::Paraffin, "report_paraffin.json"),
    ] {
        let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.entries[i].section_kind == kind).collect();
        if idx.is_empty() {
            continue;
        }
        let sp: Vec<f64> = idx.iter().map(|&i| probs[i]).collect();
        let sl: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        let r = EvalReport::new(&sp, &sl, threshold)?;
        write(&out.join(file), r.to_json())?;
        print_report(kind.as_str(), &r);
    }
    let preds = slide_predictions(&ds.entries, &probs, threshold);
    write(&out.join("scores.csv"), predictions_csv(&preds))?;
    Ok(())
}

pub fn predict(manifest: &Path, checkpoint: &Path, out: &Path, threshold: f64) -> Result<(), CliError> {
    let ds = load_manifest(manifest)?;
    let p = load_model(checkpoint)?;
    out_dir(out)?;
    let probs = score(&ds, &p)?;
    let preds = slide_predictions(&ds.entries, &probs, threshold);
    write(&out.join("predictions.csv"), predictions_csv(&preds))?;
    let positive = preds.iter().filter(|p| p.positive).count();
    println!("{} slides, {positive} predicted STAS", preds.len());
    if ds.has_patient_ids() {
        let flags = patient_flags(&preds);
        write(&out.join("patients.csv"), patients_csv(&flags))?;
        let flagged = flags.values().filter(|&&f| f).count();
        println!("{} patients, {flagged} flagged", flags.len());
    }
    Ok(())
}

pub fn heatmap(manifest: &Path, checkpoint: &Path, slide_id: &str, out: &Path, png: bool) -> Result<(), CliError> {
    let ds = load_manifest(manifest)?;
    let entry = find(&ds, slide_id)?;
    let p = load_model(checkpoint)?;
    let g = slide_graph(&ds, entry, graph_k(&p))?;
    let output: VernOutput = vern_forward(&g, &p, &mut Mode::Eval)?;
    let art = HeatmapArtifact::new(&g, &output);
    out_dir(out)?;
    for path in art.write(out, png)? {
        println!("{}", path.display());
    }
    println!("prob {:.4}, top patches {:?}", output.prob, art.top);
    Ok(())
}

pub fn convert(listing: &Path, features_dir: &Path, manifest: &Path, columns: ListingColumns) -> Result<(), CliError> {
    if let Some(parent) = manifest.parent().filter(|p| !p.as_os_str().is_empty()) {
        out_dir(parent)?;
    }
    let ds = convert_label_listing(listing, features_dir, &columns, manifest)?;
    let [neg, pos] = ds.class_counts();
    println!("{} slides ({pos} positive, {neg} negative) -> {}", ds.len(), manifest.display());
    Ok(())
}

pub fn graph_export(manifest: &Path, slide_id: &str, out: &Path, k: usize) -> Result<(), CliError> {
    if k == 0 {
        return Err(CliError::Usage("k must be at least 1".into()));
    }
    let ds = load_manifest(manifest)?;
    let entry = find(&ds, slide_id)?;
    let g = slide_graph(&ds, entry, k)?;
    out_dir(out)?;
    let (edges, nodes) = g.export_csv(out, &sanitize(slide_id))?;
    println!("{} nodes, {} edges", g.node_count(), g.adj.undirected_edges().len());
    println!("{}\n{}", nodes.display(), edges.display());
    Ok(())
}
