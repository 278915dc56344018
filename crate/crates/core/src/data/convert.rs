//! Builds a manifest from an externally published label listing plus
//! locally extracted feature files. Columns are remapped; values are not.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use super::{read_slide_header, write_manifest, DataError, Dataset, Label, SectionKind, SlideEntry};

/// Which listing columns hold which manifest fields.
#[derive(Clone, Debug)]
pub struct ListingColumns {
    pub slide_id: String,
    pub label: String,
    pub section_kind: Option<String>,
    pub patient_id: Option<String>,
}

impl Default for ListingColumns {
    fn default() -> Self {
        Self {
            slide_id: "slide_id".into(),
            label: "label".into(),
            section_kind: None,
            patient_id: None,
        }
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| DataError::Format(format!("listing has no column {name:?}")))
}

/// Reads `listing` (CSV with a header row), looks up
/// `<features_dir>/<slide_id>.wsgf` for every row, and writes a manifest to
/// `out_manifest`. Labels must already be `0` or `1`.
pub fn convert_label_listing(
    listing: &Path,
    features_dir: &Path,
    columns: &ListingColumns,
    out_manifest: &Path,
) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(listing)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => DataError::io(listing, io),
            other => DataError::Format(format!("{other:?}")),
        })?;
    let headers = reader.headers()?.clone();
    let id_col = column(&headers, &columns.slide_id)?;
    let label_col = column(&headers, &columns.label)?;
    let kind_col = columns
        .section_kind
        .as_deref()
        .map(|c| column(&headers, c))
        .transpose()?;
    let patient_col = columns
        .patient_id
        .as_deref()
        .map(|c| column(&headers, c))
        .transpose()?;

    let root = out_manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for row in reader.records() {
        let row = row?;
        let slide_id = row[id_col].to_string();
        if !seen.insert(slide_id.clone()) {
            return Err(DataError::Validation(format!("duplicate slide_id {slide_id:?}")));
        }
        let label = match &row[label_col] {
            "0" => Label::NonStas,
            "1" => Label::Stas,
            other => {
                return Err(DataError::Validation(format!(
                    "slide {slide_id}: label {other:?} is not 0 or 1"
                )))
            }
        };
        let section_kind = match kind_col {
            Some(c) => row[c].parse()?,
            None => SectionKind::Unknown,
        };
        let patient_id = patient_col.map(|c| row[c].to_string()).filter(|s| !s.is_empty());
        let path = features_dir.join(format!("{slide_id}.wsgf"));
        if !path.is_file() {
            return Err(DataError::MissingFeatures { slide_id, path });
        }
        let header = read_slide_header(&path)?;
        let feature_path: PathBuf = match path.strip_prefix(&root) {
            Ok(rel) if !root.as_os_str().is_empty() => rel.to_path_buf(),
            _ => std::path::absolute(&path).map_err(|e| DataError::io(&path, e))?,
        };
        entries.push(SlideEntry {
            slide_id,
            label: Some(label),
            section_kind,
            feature_path,
            patch_count: header.patch_count,
            patient_id,
        });
    }
    write_manifest(out_manifest, &entries)?;
    Ok(Dataset {
        entries,
        source_tag: listing.display().to_string(),
        root,
    })
}
