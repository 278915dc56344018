use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset, Label};

/// Assignment of every slide to one of `k` folds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldSplit {
    pub fn fold_of(&self, slide_id: &str) -> Option<usize> {
        self.assignments.get(slide_id).copied()
    }

    /// Indices into `ds.entries` of the (train, validation) partitions of `fold`.
    pub fn partition(&self, ds: &Dataset, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..ds.entries.len()).partition(|&i| self.fold_of(&ds.entries[i].slide_id) != Some(fold))
    }
}

/// Stratified k-fold split.
///
/// Slides of each class are shuffled with a seeded generator and dealt
/// round-robin; the dealing position carries over from one class to the
/// next so fold sizes stay balanced overall, not just per class.
pub fn stratified_kfold(ds: &Dataset, k: usize, seed: u64) -> Result<FoldSplit, DataError> {
    if k < 2 {
        return Err(DataError::Parameter(format!("k must be at least 2, got {k}")));
    }
    let mut by_class: [Vec<&str>; 2] = [Vec::new(), Vec::new()];
    for e in &ds.entries {
        let label = e.label.ok_or_else(|| {
            DataError::Stratification(format!("slide {} has no label", e.slide_id))
        })?;
        by_class[label.as_u8() as usize].push(&e.slide_id);
    }
    for (class, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            let label = Label::from_u8(class as u8).unwrap();
            return Err(DataError::Stratification(format!(
                "no slides with label {} ({label:?})",
                class
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = BTreeMap::new();
    let mut next = 0usize;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for id in members.iter() {
            assignments.insert(id.to_string(), next % k);
            next += 1;
        }
    }
    Ok(FoldSplit { k, assignments })
}
