//! Binary cross-entropy training with RMSprop, one slide per step, and
//! k-fold cross-validation with best-epoch retention.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{stratified_kfold, DataError, Dataset, FoldSplit};
use crate::graph::{build_wsi_graph, GraphError, WsiGraph, DEFAULT_K};
use crate::metrics::{mean_std, roc_auc, Confusion, EvalReport, MetricError};
use crate::model::{forward_on_tape, vern_forward, ModelError, VernConfig, VernParams, PARAM_NAMES};
use crate::numerics::{softplus, sigmoid, Mode, NumericsError, Tape, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training set must contain both classes: {0}")]
    SingleClass(String),
    #[error("slide {0} has no label")]
    Unlabeled(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: VernConfig,
    pub lr: f64,
    pub alpha: f64,
    pub eps_rms: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Loss weight on positive slides; 1 means unweighted.
    pub pos_weight: f64,
    pub folds: usize,
    /// Neighbours per patch when building slide graphs.
    pub k: usize,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: VernConfig::default(),
            lr: 0.001,
            alpha: 0.9,
            eps_rms: 1e-8,
            epochs: 200,
            seed: 0,
            pos_weight: 1.0,
            folds: 5,
            k: DEFAULT_K,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.eps_rms > 0.0 && self.eps_rms.is_finite()) {
            return bad(format!("eps_rms must be positive, got {}", self.eps_rms));
        }
        if !(self.pos_weight > 0.0 && self.pos_weight.is_finite()) {
            return bad(format!("pos_weight must be positive, got {}", self.pos_weight));
        }
        if self.folds < 2 {
            return bad(format!("need at least 2 folds, got {}", self.folds));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        self.model.validate()?;
        Ok(())
    }
}

/// Stable `w·y·softplus(-z) + (1-y)·softplus(z)`.
pub fn bce_loss(logit: f64, label: f64, pos_weight: f64) -> f64 {
    pos_weight * label * softplus(-logit) + (1.0 - label) * softplus(logit)
}

/// `d bce_loss / d logit`.
pub fn bce_grad(logit: f64, label: f64, pos_weight: f64) -> f64 {
    let s = sigmoid(logit);
    pos_weight * label * (s - 1.0) + (1.0 - label) * s
}

/// Running mean of squared gradients, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsState {
    pub v: Vec<Tensor>,
}

impl RmsState {
    pub fn for_params(params: &VernParams) -> Self {
        Self {
            v: params.params().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect(),
        }
    }
}

/// `v ← αv + (1-α)g²; θ ← θ - lr·g/(√v + eps)`, elementwise.
pub fn rmsprop_update(
    theta: &mut Tensor,
    grad: &Tensor,
    v: &mut Tensor,
    lr: f64,
    alpha: f64,
    eps: f64,
) -> Result<(), TrainError> {
    if theta.shape() != grad.shape() || theta.shape() != v.shape() {
        return Err(TrainError::Shape(format!(
            "rmsprop: param {:?}, grad {:?}, state {:?}",
            theta.shape(),
            grad.shape(),
            v.shape()
        )));
    }
    for ((t, &g), s) in theta.data_mut().iter_mut().zip(grad.data()).zip(v.data_mut()) {
        *s = alpha * *s + (1.0 - alpha) * g * g;
        *t -= lr * g / (s.sqrt() + eps);
    }
    Ok(())
}

pub fn rmsprop_step(
    params: &mut VernParams,
    grads: &[Tensor],
    state: &mut RmsState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if grads.len() != PARAM_NAMES.len() || state.v.len() != PARAM_NAMES.len() {
        return Err(TrainError::Shape(format!(
            "rmsprop: {} grads and {} state tensors for {} parameters",
            grads.len(),
            state.v.len(),
            PARAM_NAMES.len()
        )));
    }
    for ((theta, g), v) in params.params_mut().into_iter().zip(grads).zip(&mut state.v) {
        rmsprop_update(theta, g, v, cfg.lr, cfg.alpha, cfg.eps_rms)?;
    }
    Ok(())
}

/// Loss on one labelled slide and the gradient of every parameter, in
/// [`PARAM_NAMES`] order.
pub fn loss_and_grads(
    params: &VernParams,
    g: &WsiGraph,
    pos_weight: f64,
    mode: &mut Mode<'_>,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let label = g.label.ok_or_else(|| TrainError::Unlabeled(g.slide_id.clone()))?;
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let f = forward_on_tape(&tape, g, params, &bound, mode)?;
    let loss = tape.bce_with_logits(f.logit, label.as_f64(), pos_weight)?;
    let mut grads = tape.backward(loss)?;
    let value = tape.value(loss).data()[0];
    Ok((value, bound.collect_grads(&mut grads)))
}

/// Eval-mode probabilities for each graph.
pub fn predict_probs(params: &VernParams, graphs: &[&WsiGraph]) -> Result<Vec<f64>, TrainError> {
    graphs
        .iter()
        .map(|g| Ok(vern_forward(g, params, &mut Mode::Eval)?.prob))
        .collect()
}

fn labels_of(graphs: &[&WsiGraph]) -> Result<Vec<bool>, TrainError> {
    graphs
        .iter()
        .map(|g| {
            g.label
                .map(|l| l.is_positive())
                .ok_or_else(|| TrainError::Unlabeled(g.slide_id.clone()))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when the validation set holds a single class.
    pub val_auroc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub params: VernParams,
    /// `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_val_auroc: Option<f64>,
    pub log: Vec<EpochLog>,
}

/// Trains from `VernParams::init(cfg.model, cfg.seed)` and keeps the epoch
/// with the highest validation AUROC (earliest on ties). When the
/// validation AUROC is undefined throughout, the last epoch is kept.
pub fn train_fold(train: &[&WsiGraph], val: &[&WsiGraph], cfg: &TrainConfig) -> Result<FoldResult, TrainError> {
    cfg.validate()?;
    let train_labels = labels_of(train)?;
    let pos = train_labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == train_labels.len() {
        return Err(TrainError::SingleClass(format!(
            "{pos} positive of {} training slides",
            train_labels.len()
        )));
    }
    let val_labels = labels_of(val)?;

    let mut params = VernParams::init(cfg.model.clone(), cfg.seed)?;
    let mut state = RmsState::for_params(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(usize, Option<f64>, VernParams)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (loss, grads) = loss_and_grads(&params, train[i], cfg.pos_weight, &mut Mode::Train(&mut rng))?;
            total += loss;
            rmsprop_step(&mut params, &grads, &mut state, cfg)?;
        }
        let val_auroc = match roc_auc(&predict_probs(&params, val)?, &val_labels) {
            Ok((a, _)) => Some(a),
            Err(MetricError::SingleClass) => None,
            Err(e) => return Err(e.into()),
        };
        log.push(EpochLog {
            epoch,
            train_loss: total / train.len() as f64,
            val_auroc,
        });
        let improves = match (&best, val_auroc) {
            (None, _) => true,
            (Some((_, Some(b), _)), Some(a)) => a > *b,
            (Some((_, None, _)), Some(_)) => true,
            (Some((_, Some(_), _)), None) => false,
            (Some((_, None, _)), None) => true,
        };
        if improves {
            best = Some((epoch, val_auroc, params.clone()));
        }
    }

    Ok(match best {
        Some((epoch, auroc, p)) => FoldResult {
            params: p,
            best_epoch: Some(epoch),
            best_val_auroc: auroc,
            log,
        },
        None => FoldResult {
            params,
            best_epoch: None,
            best_val_auroc: None,
            log,
        },
    })
}

/// Builds the graph of every manifest entry, in manifest order.
pub fn dataset_graphs(ds: &Dataset, k: usize) -> Result<Vec<WsiGraph>, TrainError> {
    ds.entries
        .iter()
        .map(|e| {
            let records = ds.load_slide(e)?;
            Ok(build_wsi_graph(e.slide_id.clone(), &records, k, e.label)?)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub fold: usize,
    pub result: FoldResult,
    pub val_ids: Vec<String>,
    pub val_probs: Vec<f64>,
    pub report: EvalReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    /// Folds contributing (undefined AUROC/AUPRC folds are skipped).
    pub folds: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CvSummary {
    pub metrics: Vec<(String, MeanStd)>,
    pub pooled_confusion: Confusion,
}

#[derive(Clone, Debug)]
pub struct CvResult {
    pub split: FoldSplit,
    pub folds: Vec<FoldOutcome>,
    pub summary: CvSummary,
}

pub fn summarize(reports: &[EvalReport]) -> CvSummary {
    let names = ["accuracy", "precision", "recall", "f1", "specificity", "auroc", "auprc"];
    let metrics = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let values: Vec<f64> = reports.iter().filter_map(|r| r.scalars()[i].1).collect();
            let (mean, std) = mean_std(&values);
            (
                name.to_string(),
                MeanStd {
                    mean,
                    std,
                    folds: values.len(),
                },
            )
        })
        .collect();
    let pooled_confusion = reports
        .iter()
        .fold(Confusion::default(), |acc, r| acc.merge(&r.confusion));
    CvSummary {
        metrics,
        pooled_confusion,
    }
}

/// Stratified k-fold cross-validation over prebuilt graphs (`graphs[i]`
/// belongs to `ds.entries[i]`). Fold `f` trains with seed `cfg.seed + f`.
pub fn run_cv_graphs(ds: &Dataset, graphs: &[WsiGraph], cfg: &TrainConfig) -> Result<CvResult, TrainError> {
    cfg.validate()?;
    if graphs.len() != ds.len() {
        return Err(TrainError::Shape(format!("{} graphs for {} slides", graphs.len(), ds.len())));
    }
    let split = stratified_kfold(ds, cfg.folds, cfg.seed)?;
    let mut folds = Vec::with_capacity(cfg.folds);
    for fold in 0..cfg.folds {
        let (train_idx, val_idx) = split.partition(ds, fold);
        let train: Vec<&WsiGraph> = train_idx.iter().map(|&i| &graphs[i]).collect();
        let val: Vec<&WsiGraph> = val_idx.iter().map(|&i| &graphs[i]).collect();
        let fold_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(fold as u64),
            ..cfg.clone()
        };
        let mut result = train_fold(&train, &val, &fold_cfg)?;
        result.params.notes.insert("fold".into(), fold.to_string());
        if let Some(e) = result.best_epoch {
            result.params.notes.insert("best_epoch".into(), e.to_string());
        }
        let val_probs = predict_probs(&result.params, &val)?;
        let report = EvalReport::new(&val_probs, &labels_of(&val)?, cfg.threshold)?;
        folds.push(FoldOutcome {
            fold,
            result,
            val_ids: val.iter().map(|g| g.slide_id.clone()).collect(),
            val_probs,
            report,
        });
    }
    let reports: Vec<EvalReport> = folds.iter().map(|f| f.report.clone()).collect();
    Ok(CvResult {
        split,
        folds,
        summary: summarize(&reports),
    })
}

pub fn run_cv(ds: &Dataset, cfg: &TrainConfig) -> Result<CvResult, TrainError> {
    cfg.validate()?;
    let graphs = dataset_graphs(ds, cfg.k)?;
    run_cv_graphs(ds, &graphs, cfg)
}

/// CSV `fold,epoch,train_loss,val_auroc`; an undefined AUROC is written as
/// `undefined`.
pub fn training_log_csv(folds: &[FoldOutcome]) -> String {
    let mut out = String::from("fold,epoch,train_loss,val_auroc\n");
    for f in folds {
        for e in &f.result.log {
            let auroc = e.val_auroc.map_or("undefined".to_string(), |a| a.to_string());
            let _ = writeln!(out, "{},{},{},{}", f.fold, e.epoch, e.train_loss, auroc);
        }
    }
    out
}

pub fn write_training_log(path: &Path, folds: &[FoldOutcome]) -> Result<(), DataError> {
    std::fs::write(path, training_log_csv(folds)).map_err(|e| DataError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
