//! Synthetic cohorts with a planted, spatially localized slide-level signal.
//!
//! Every slide is a jittered grid of patches containing a contiguous tumour
//! core whose features carry a class-neutral offset. Positive slides also
//! get a small cluster of patches just outside the core whose features are
//! shifted by `signal_strength` along fixed unit directions, one per
//! feature family. With `signal_strength == 0` the two classes are
//! identically distributed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    write_manifest, write_slide, DataError, Dataset, Label, PatchRecord, SectionKind, SlideEntry,
    FEAT_A_DIM, FEAT_B_DIM,
};

/// Source-magnification patch pitch in pixels.
const PATCH_PITCH: f64 = 512.0;
const JITTER: f64 = 96.0;
const CORE_FRACTION: f64 = 0.35;
const CORE_OFFSET: f64 = 1.5;
const LATENT_RANK: usize = 8;
const SLIDE_EFFECT: f64 = 0.5;
const NOISE: f64 = 0.3;
const CLUSTER_MIN: usize = 3;
const CLUSTER_MAX: usize = 8;
const FROZEN_RATE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_slides: usize,
    pub patches_min: usize,
    pub patches_max: usize,
    pub signal_strength: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_slides: 20,
            patches_min: 16,
            patches_max: 48,
            signal_strength: 2.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_slides < 4 {
            return Err(DataError::Parameter(format!(
                "n_slides must be at least 4, got {}",
                self.n_slides
            )));
        }
        if self.patches_min < 3 {
            return Err(DataError::Parameter(format!(
                "patches_min must be at least 3, got {}",
                self.patches_min
            )));
        }
        if self.patches_max < self.patches_min {
            return Err(DataError::Parameter(format!(
                "patches_max {} below patches_min {}",
                self.patches_max, self.patches_min
            )));
        }
        if !(self.signal_strength >= 0.0 && self.signal_strength.is_finite()) {
            return Err(DataError::Parameter(format!(
                "signal_strength must be finite and non-negative, got {}",
                self.signal_strength
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthSlide {
    pub entry: SlideEntry,
    pub records: Vec<PatchRecord>,
    /// Patch ids of the planted cluster (empty for negatives).
    pub planted: Vec<u32>,
    /// Patch ids of the tumour core.
    pub core: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub dataset: Dataset,
    pub planted: BTreeMap<String, Vec<u32>>,
}

struct FeatureSpace {
    dim: usize,
    basis: Vec<Vec<f64>>,
    core_dir: Vec<f64>,
    signal_dir: Vec<f64>,
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

impl FeatureSpace {
    fn new(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        Self {
            dim,
            basis: (0..LATENT_RANK).map(|_| unit_vector(rng, dim)).collect(),
            core_dir: unit_vector(rng, dim),
            signal_dir: unit_vector(rng, dim),
        }
    }

    fn sample(
        &self,
        rng: &mut ChaCha8Rng,
        slide_effect: &[f64],
        in_core: bool,
        planted: f64,
    ) -> Vec<f64> {
        let latent: Vec<f64> = (0..LATENT_RANK)
            .map(|l| slide_effect[l] + rng.sample::<f64, _>(StandardNormal))
            .collect();
        (0..self.dim)
            .map(|j| {
                let mut v = NOISE * rng.sample::<f64, _>(StandardNormal);
                for (z, b) in latent.iter().zip(&self.basis) {
                    v += z * b[j];
                }
                if in_core {
                    v += CORE_OFFSET * self.core_dir[j];
                }
                v += planted * self.signal_dir[j];
                // stored as f32 on disk; keep memory and disk identical
                v as f32 as f64
            })
            .collect()
    }
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

/// Indices of `candidates` sorted by distance to `from`, ties by index.
fn nearest(coords: &[(f64, f64)], from: (f64, f64), candidates: &[usize]) -> Vec<usize> {
    let mut c = candidates.to_vec();
    c.sort_by(|&a, &b| {
        dist2(coords[a], from)
            .total_cmp(&dist2(coords[b], from))
            .then(a.cmp(&b))
    });
    c
}

fn make_slide(
    rng: &mut ChaCha8Rng,
    idx: usize,
    label: Label,
    cfg: &SynthConfig,
    space_a: &FeatureSpace,
    space_b: &FeatureSpace,
) -> SynthSlide {
    let n = rng.random_range(cfg.patches_min..=cfg.patches_max);
    let width = (n as f64).sqrt().ceil() as usize;
    let coords: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let (col, row) = ((i % width) as f64, (i / width) as f64);
            let jx = rng.random_range(-JITTER..=JITTER);
            let jy = rng.random_range(-JITTER..=JITTER);
            (
                col * PATCH_PITCH + PATCH_PITCH / 2.0 + jx,
                row * PATCH_PITCH + PATCH_PITCH / 2.0 + jy,
            )
        })
        .collect();

    let all: Vec<usize> = (0..n).collect();
    let centre = rng.random_range(0..n);
    let core_size = ((n as f64 * CORE_FRACTION).ceil() as usize).clamp(1, n - 2);
    let core: Vec<usize> = nearest(&coords, coords[centre], &all)[..core_size].to_vec();
    let outside: Vec<usize> = all.iter().copied().filter(|i| !core.contains(i)).collect();

    // Cluster seed: one of the three outside patches closest to the core centre.
    let ring = nearest(&coords, coords[centre], &outside);
    let seed_patch = ring[rng.random_range(0..ring.len().min(3))];
    let cluster_size = rng
        .random_range(CLUSTER_MIN..=CLUSTER_MAX)
        .min(outside.len() - 1)
        .max(1);
    let cluster: Vec<usize> = nearest(&coords, coords[seed_patch], &outside)[..cluster_size].to_vec();
    let planted_shift = if label.is_positive() {
        cfg.signal_strength
    } else {
        0.0
    };

    let effect_a: Vec<f64> = (0..LATENT_RANK)
        .map(|_| SLIDE_EFFECT * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let effect_b: Vec<f64> = (0..LATENT_RANK)
        .map(|_| SLIDE_EFFECT * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let records = (0..n)
        .map(|i| {
            let in_core = core.contains(&i);
            let shift = if cluster.contains(&i) { planted_shift } else { 0.0 };
            PatchRecord {
                patch_id: i as u32,
                x: coords[i].0,
                y: coords[i].1,
                feat_a: space_a.sample(rng, &effect_a, in_core, shift),
                feat_b: space_b.sample(rng, &effect_b, in_core, shift),
            }
        })
        .collect();

    let section_kind = if rng.random::<f64>() < FROZEN_RATE {
        SectionKind::Frozen
    } else {
        SectionKind::Paraffin
    };
    let slide_id = format!("S{idx:04}");
    let mut planted: Vec<u32> = if label.is_positive() {
        cluster.iter().map(|&i| i as u32).collect()
    } else {
        Vec::new()
    };
    planted.sort_unstable();
    let mut core: Vec<u32> = core.iter().map(|&i| i as u32).collect();
    core.sort_unstable();
    SynthSlide {
        entry: SlideEntry {
            feature_path: PathBuf::from("features").join(format!("{slide_id}.wsgf")),
            slide_id,
            label: Some(label),
            section_kind,
            patch_count: n,
            patient_id: None,
        },
        records,
        planted,
        core,
    }
}

/// Generates the slides in memory. Slide `i` is positive iff `i` is even,
/// giving `ceil(n / 2)` positives.
pub fn synth_slides(cfg: &SynthConfig) -> Result<Vec<SynthSlide>, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let space_a = FeatureSpace::new(&mut rng, FEAT_A_DIM);
    let space_b = FeatureSpace::new(&mut rng, FEAT_B_DIM);
    let seeds: Vec<u64> = (0..cfg.n_slides).map(|_| rng.random()).collect();
    Ok(seeds
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut slide_rng = ChaCha8Rng::seed_from_u64(s);
            let label = if i % 2 == 0 { Label::Stas } else { Label::NonStas };
            make_slide(&mut slide_rng, i, label, cfg, &space_a, &space_b)
        })
        .collect())
}

/// Writes `manifest.csv`, `planted.csv` and `features/*.wsgf` under `out`.
pub fn synth_dataset(cfg: &SynthConfig, out: &Path) -> Result<SynthDataset, DataError> {
    let slides = synth_slides(cfg)?;
    let features = out.join("features");
    fs::create_dir_all(&features).map_err(|e| DataError::io(&features, e))?;

    let mut planted = BTreeMap::new();
    let mut planted_csv = String::from("slide_id,patch_id\n");
    for s in &slides {
        write_slide(&out.join(&s.entry.feature_path), &s.records)?;
        for p in &s.planted {
            planted_csv.push_str(&format!("{},{p}\n", s.entry.slide_id));
        }
        planted.insert(s.entry.slide_id.clone(), s.planted.clone());
    }
    let planted_path = out.join("planted.csv");
    fs::write(&planted_path, planted_csv).map_err(|e| DataError::io(&planted_path, e))?;

    let entries: Vec<SlideEntry> = slides.into_iter().map(|s| s.entry).collect();
    write_manifest(&out.join("manifest.csv"), &entries)?;
    Ok(SynthDataset {
        dataset: Dataset {
            entries,
            source_tag: format!(
                "synthetic(seed={}, signal={})",
                cfg.seed, cfg.signal_strength
            ),
            root: out.to_path_buf(),
        },
        planted,
    })
}

/// Reads a `planted.csv` written by [`synth_dataset`].
pub fn read_planted(path: &Path) -> Result<BTreeMap<String, Vec<u32>>, DataError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => DataError::io(path, io),
        other => DataError::Format(format!("{other:?}")),
    })?;
    let mut out: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        let id: u32 = row[1]
            .parse()
            .map_err(|_| DataError::Format(format!("bad patch id {:?}", &row[1])))?;
        out.entry(row[0].to_string()).or_default().push(id);
    }
    Ok(out)
}
