//! Slide manifests, patch-feature files, synthetic cohorts and fold splits.

mod convert;
mod features;
mod folds;
mod manifest;
mod synth;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub use convert::{convert_label_listing, ListingColumns};
pub use features::{decode_slide, encode_slide, read_slide, read_slide_header, write_slide, SlideHeader};
pub use folds::{stratified_kfold, FoldSplit};
pub use manifest::{load_manifest, write_manifest};
pub use synth::{read_planted, synth_dataset, synth_slides, SynthConfig, SynthDataset, SynthSlide};

/// Width of the first feature family (one row per patch).
pub const FEAT_A_DIM: usize = 1024;
/// Width of the second feature family.
pub const FEAT_B_DIM: usize = 768;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("slide {slide_id}: feature file {} not found", path.display())]
    MissingFeatures { slide_id: String, path: PathBuf },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("non-finite value in patch {patch_index}")]
    NonFinite { patch_index: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Slide-level STAS label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    NonStas = 0,
    Stas = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::NonStas),
            1 => Some(Label::Stas),
            _ => None,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Stas
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SectionKind {
    Frozen,
    Paraffin,
    Unknown,
}

impl SectionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SectionKind::Frozen => "frozen",
            SectionKind::Paraffin => "paraffin",
            SectionKind::Unknown => "unknown",
        }
    }
}

impl fmt::Display for SectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SectionKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "frozen" | "fs" => Ok(SectionKind::Frozen),
            "paraffin" | "ps" => Ok(SectionKind::Paraffin),
            "unknown" | "" => Ok(SectionKind::Unknown),
            other => Err(DataError::Validation(format!("unknown section kind {other:?}"))),
        }
    }
}

/// One patch: its centre on the slide and both feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchRecord {
    pub patch_id: u32,
    pub x: f64,
    pub y: f64,
    pub feat_a: Vec<f64>,
    pub feat_b: Vec<f64>,
}

/// One manifest row.
#[derive(Clone, Debug, PartialEq)]
pub struct SlideEntry {
    pub slide_id: String,
    /// `None` for prediction-only manifests.
    pub label: Option<Label>,
    pub section_kind: SectionKind,
    /// As written in the manifest; relative paths resolve against the
    /// manifest's directory.
    pub feature_path: PathBuf,
    pub patch_count: usize,
    pub patient_id: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub entries: Vec<SlideEntry>,
    pub source_tag: String,
    /// Directory that relative feature paths are resolved against.
    pub root: PathBuf,
}

impl Dataset {
    pub fn resolve(&self, entry: &SlideEntry) -> PathBuf {
        self.root.join(&entry.feature_path)
    }

    /// Reads the patches of `entry`, checking the count against the manifest.
    pub fn load_slide(&self, entry: &SlideEntry) -> Result<Vec<PatchRecord>, DataError> {
        let path = self.resolve(entry);
        if !path.exists() {
            return Err(DataError::MissingFeatures {
                slide_id: entry.slide_id.clone(),
                path,
            });
        }
        let records = read_slide(&path)?;
        if records.len() != entry.patch_count {
            return Err(DataError::Format(format!(
                "slide {}: manifest declares {} patches, file holds {}",
                entry.slide_id,
                entry.patch_count,
                records.len()
            )));
        }
        Ok(records)
    }

    pub fn get(&self, slide_id: &str) -> Option<&SlideEntry> {
        self.entries.iter().find(|e| e.slide_id == slide_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of slides per label, `[negatives, positives]`.
    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for e in &self.entries {
            if let Some(l) = e.label {
                counts[l.as_u8() as usize] += 1;
            }
        }
        counts
    }

    pub fn has_patient_ids(&self) -> bool {
        self.entries.iter().any(|e| e.patient_id.is_some())
    }
}
