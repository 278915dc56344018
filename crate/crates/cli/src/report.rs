//! Slide- and patient-level prediction tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use vern::data::SlideEntry;

#[derive(Clone, Debug, PartialEq)]
pub struct SlidePrediction {
    pub slide_id: String,
    pub patient_id: Option<String>,
    pub prob: f64,
    pub positive: bool,
}

/// A patient is flagged when any of their slides is predicted positive.
pub fn patient_flags(preds: &[SlidePrediction]) -> BTreeMap<String, bool> {
    let mut flags = BTreeMap::new();
    for p in preds {
        if let Some(id) = &p.patient_id {
            *flags.entry(id.clone()).or_insert(false) |= p.positive;
        }
    }
    flags
}

pub fn slide_predictions(entries: &[SlideEntry], probs: &[f64], threshold: f64) -> Vec<SlidePrediction> {
    entries
        .iter()
        .zip(probs)
        .map(|(e, &prob)| SlidePrediction {
            slide_id: e.slide_id.clone(),
            patient_id: e.patient_id.clone(),
            prob,
            positive: prob >= threshold,
        })
        .collect()
}

pub fn predictions_csv(preds: &[SlidePrediction]) -> String {
    let mut out = String::from("slide_id,prob,predicted_label\n");
    for p in preds {
        let _ = writeln!(out, "{},{},{}", p.slide_id, p.prob, u8::from(p.positive));
    }
    out
}

pub fn patients_csv(flags: &BTreeMap<String, bool>) -> String {
    let mut out = String::from("patient_id,patient_flag\n");
    for (id, &flag) in flags {
        let _ = writeln!(out, "{id},{}", u8::from(flag));
    }
    out
}
