//! Threshold-free ranking metrics and the thresholded confusion block.

use serde::{Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("{scores} scores but {labels} labels")]
    Length { scores: usize, labels: usize },
    #[error("score {index} is not finite")]
    NonFinite { index: usize },
    #[error("AUROC is undefined without both classes")]
    SingleClass,
    #[error("AUPRC is undefined without positives")]
    NoPositives,
}

/// How [`pr_auc`] integrates the precision-recall curve.
pub const AUPRC_CONVENTION: &str = "step-wise: sum over thresholds of (recall increment) x (precision at that threshold)";

fn check(scores: &[f64], labels: &[bool]) -> Result<(), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    match scores.iter().position(|s| !s.is_finite()) {
        Some(index) => Err(MetricError::NonFinite { index }),
        None => Ok(()),
    }
}

/// Indices by descending score, split into groups of equal score.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Area under the ROC curve from the Mann-Whitney rank statistic (ties get
/// midranks), plus the curve as `(fpr, tpr)` points from `(0,0)` to `(1,1)`.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<(f64, Vec<(f64, f64)>), MetricError> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let groups = tie_groups(scores);

    // Ranks ascend from the lowest score, so walk the groups in reverse.
    let mut rank_sum = 0.0;
    let mut next_rank = 1.0;
    for g in groups.iter().rev() {
        let mid = next_rank + (g.len() as f64 - 1.0) / 2.0;
        rank_sum += mid * g.iter().filter(|&&i| labels[i]).count() as f64;
        next_rank += g.len() as f64;
    }
    let (p, n) = (pos as f64, neg as f64);
    let auc = (rank_sum - p * (p + 1.0) / 2.0) / (p * n);

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for g in &groups {
        let gp = g.iter().filter(|&&i| labels[i]).count();
        tp += gp;
        fp += g.len() - gp;
        points.push((fp as f64 / n, tp as f64 / p));
    }
    Ok((auc, points))
}

/// Trapezoidal area under a piecewise-linear curve.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Average precision over descending thresholds (see [`AUPRC_CONVENTION`]),
/// with the curve as `(recall, precision)` points starting at `(0, 1)`.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<(f64, Vec<(f64, f64)>), MetricError> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut points = vec![(0.0, 1.0)];
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    let (mut tp, mut seen) = (0usize, 0usize);
    for g in tie_groups(scores) {
        tp += g.iter().filter(|&&i| labels[i]).count();
        seen += g.len();
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / seen as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push((recall, precision));
    }
    Ok((area, points))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(&self, other: &Confusion) -> Confusion {
        Confusion {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
            fn_: self.fn_ + other.fn_,
        }
    }
}

/// Scalar metrics derived from a confusion matrix. Any ratio with a zero
/// denominator is reported as 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConfusionMetrics {
    pub confusion: Confusion,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub specificity: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl From<Confusion> for ConfusionMetrics {
    fn from(c: Confusion) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            confusion: c,
            accuracy: ratio(c.tp + c.tn, c.total()),
            precision,
            recall,
            f1,
            specificity: ratio(c.tn, c.tn + c.fp),
        }
    }
}

/// A slide is predicted positive when its probability is `>= threshold`.
pub fn confusion_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Result<ConfusionMetrics, MetricError> {
    check(scores, labels)?;
    let mut c = Confusion::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c.into())
}

fn or_undefined<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_str("undefined"),
    }
}

/// Everything reported for one evaluated set of slides.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub threshold: f64,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub specificity: f64,
    /// `None` when only one class is present.
    #[serde(serialize_with = "or_undefined")]
    pub auroc: Option<f64>,
    /// `None` when there are no positives.
    #[serde(serialize_with = "or_undefined")]
    pub auprc: Option<f64>,
    pub auprc_convention: &'static str,
    pub roc_points: Vec<(f64, f64)>,
    pub pr_points: Vec<(f64, f64)>,
}

impl EvalReport {
    pub fn new(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Self, MetricError> {
        let cm = confusion_metrics(scores, labels, threshold)?;
        let (auroc, roc_points) = match roc_auc(scores, labels) {
            Ok((a, pts)) => (Some(a), pts),
            Err(MetricError::SingleClass) => (None, Vec::new()),
            Err(e) => return Err(e),
        };
        let (auprc, pr_points) = match pr_auc(scores, labels) {
            Ok((a, pts)) => (Some(a), pts),
            Err(MetricError::NoPositives) => (None, Vec::new()),
            Err(e) => return Err(e),
        };
        Ok(Self {
            n: scores.len(),
            threshold,
            confusion: cm.confusion,
            accuracy: cm.accuracy,
            precision: cm.precision,
            recall: cm.recall,
            f1: cm.f1,
            specificity: cm.specificity,
            auroc,
            auprc,
            auprc_convention: AUPRC_CONVENTION,
            roc_points,
            pr_points,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `(name, value)` for each scalar metric, in a fixed order.
    pub fn scalars(&self) -> [(&'static str, Option<f64>); 7] {
        [
            ("accuracy", Some(self.accuracy)),
            ("precision", Some(self.precision)),
            ("recall", Some(self.recall)),
            ("f1", Some(self.f1)),
            ("specificity", Some(self.specificity)),
            ("auroc", self.auroc),
            ("auprc", self.auprc),
        ]
    }
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
