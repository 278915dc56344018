//! Line-oriented slide manifest:
//! `slide_id,label,section_kind,feature_path,patch_count[,patient_id]`.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::{DataError, Dataset, Label, SectionKind, SlideEntry};

const COLUMNS: [&str; 5] = ["slide_id", "label", "section_kind", "feature_path", "patch_count"];
const PATIENT_COLUMN: &str = "patient_id";

/// Reads and validates a manifest. Feature files must exist.
pub fn load_manifest(path: &Path) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers = reader.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let with_patient = match names.as_slice() {
        [a, b, c, d, e] if [*a, *b, *c, *d, *e] == COLUMNS => false,
        [a, b, c, d, e, f] if [*a, *b, *c, *d, *e] == COLUMNS && *f == PATIENT_COLUMN => true,
        _ => {
            return Err(DataError::Format(format!(
                "manifest header {names:?}, expected {}[,{PATIENT_COLUMN}]",
                COLUMNS.join(",")
            )))
        }
    };

    let mut entries = Vec::new();
    let mut ids = HashSet::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let line = line + 2;
        let slide_id = row[0].to_string();
        if slide_id.is_empty() {
            return Err(DataError::Validation(format!("line {line}: empty slide_id")));
        }
        if !ids.insert(slide_id.clone()) {
            return Err(DataError::Validation(format!(
                "line {line}: duplicate slide_id {slide_id:?}"
            )));
        }
        let label = match &row[1] {
            "" => None,
            "0" => Some(Label::NonStas),
            "1" => Some(Label::Stas),
            other => {
                return Err(DataError::Validation(format!(
                    "line {line}: label {other:?} for {slide_id} is not 0 or 1"
                )))
            }
        };
        let section_kind: SectionKind = row[2].parse()?;
        let feature_path = PathBuf::from(&row[3]);
        let patch_count: usize = row[4].parse().map_err(|_| {
            DataError::Validation(format!("line {line}: bad patch_count {:?}", &row[4]))
        })?;
        if patch_count == 0 {
            return Err(DataError::Validation(format!(
                "line {line}: slide {slide_id} has zero patches"
            )));
        }
        let patient_id = if with_patient {
            Some(row[5].to_string()).filter(|s| !s.is_empty())
        } else {
            None
        };
        let resolved = root.join(&feature_path);
        if !resolved.is_file() {
            return Err(DataError::MissingFeatures {
                slide_id,
                path: resolved,
            });
        }
        entries.push(SlideEntry {
            slide_id,
            label,
            section_kind,
            feature_path,
            patch_count,
            patient_id,
        });
    }

    Ok(Dataset {
        entries,
        source_tag: path.display().to_string(),
        root,
    })
}

pub fn write_manifest(path: &Path, entries: &[SlideEntry]) -> Result<(), DataError> {
    let with_patient = entries.iter().any(|e| e.patient_id.is_some());
    let mut w = csv::Writer::from_writer(Vec::new());
    if with_patient {
        let mut header = COLUMNS.to_vec();
        header.push(PATIENT_COLUMN);
        w.write_record(&header)?;
    } else {
        w.write_record(COLUMNS)?;
    }
    for e in entries {
        let label = e.label.map(|l| l.as_u8().to_string()).unwrap_or_default();
        let count = e.patch_count.to_string();
        let fp = e.feature_path.to_string_lossy();
        let mut row = vec![
            e.slide_id.as_str(),
            label.as_str(),
            e.section_kind.as_str(),
            fp.as_ref(),
            count.as_str(),
        ];
        if with_patient {
            row.push(e.patient_id.as_deref().unwrap_or(""));
        }
        w.write_record(&row)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| DataError::io(path, e.into_error()))?;
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}
