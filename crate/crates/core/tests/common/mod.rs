#![allow(dead_code)]

pub mod dd;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vern::data::{Dataset, Label, SynthSlide};
use vern::graph::{build_wsi_graph, WsiGraph};
use vern::model::{VernConfig, VernParams, PARAM_NAMES};
use vern::numerics::{softplus, Tensor};
use vern::train::loss_and_grads;
use vern::Mode;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

pub fn random_coords(rng: &mut ChaCha8Rng, n: usize, span: f64) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| [rng.random_range(0.0..span), rng.random_range(0.0..span)])
        .collect()
}

/// A graph with uniform features in [-1, 1] and a random label.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, dim_a: usize, dim_b: usize, k: usize) -> WsiGraph {
    let coords = random_coords(rng, n, 10.0);
    let feat_a = uniform(rng, n, dim_a, -1.0, 1.0);
    let feat_b = uniform(rng, n, dim_b, -1.0, 1.0);
    let label = if rng.random::<bool>() { Label::Stas } else { Label::NonStas };
    WsiGraph::from_parts("g", (0..n as u32).collect(), coords, feat_a, feat_b, k, Some(label)).unwrap()
}

/// Applies the node relabelling `new index i ← old index perm[i]`.
pub fn permute_graph(g: &WsiGraph, perm: &[usize], k: usize) -> WsiGraph {
    WsiGraph::from_parts(
        g.slide_id.clone(),
        perm.iter().map(|&i| g.patch_ids[i]).collect(),
        perm.iter().map(|&i| g.coords[i]).collect(),
        g.feat_a.select_rows(perm),
        g.feat_b.select_rows(perm),
        k,
        g.label,
    )
    .unwrap()
}

pub fn shuffled(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// O(n²) KNN reference: sort every other node by (distance², index).
pub fn brute_force_knn(coords: &[[f64; 2]], k: usize) -> Vec<(usize, usize)> {
    let n = coords.len();
    let mut edges = std::collections::BTreeSet::new();
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let dx = coords[i][0] - coords[j][0];
                let dy = coords[i][1] - coords[j][1];
                (dx * dx + dy * dy, j)
            })
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in others.iter().take(k) {
            edges.insert((i, j));
            edges.insert((j, i));
        }
    }
    edges.into_iter().collect()
}

/// Fraction of (positive, negative) pairs ordered correctly, ties counting ½.
pub fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

/// Average precision by sweeping every distinct score as a threshold and
/// recounting the confusion matrix from scratch each time.
pub fn sweep_average_precision(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let mut tp = 0.0;
        let mut fp = 0.0;
        for (&s, &l) in scores.iter().zip(labels) {
            if s >= t {
                if l {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let recall = tp / pos;
        ap += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
    }
    ap
}

fn dense_relu(z: &mut Tensor, min_abs: &mut f64) {
    for v in z.data_mut() {
        *min_abs = min_abs.min(v.abs());
        *v = v.max(0.0);
    }
}

fn add_row(z: &mut Tensor, b: &Tensor) {
    for r in 0..z.rows() {
        for (o, v) in z.row_mut(r).iter_mut().zip(b.data()) {
            *o += v;
        }
    }
}

/// Eval-mode forward written directly against `Tensor`, independent of the
/// tape. Returns the logit and the smallest |pre-activation| seen by any
/// ReLU, so callers can steer clear of kinks.
pub fn reference_logit(g: &WsiGraph, p: &VernParams) -> (f64, f64) {
    let mut min_abs = f64::INFINITY;
    let mut encode = |x: &Tensor, gcn: &vern::layers::GcnParams, skip: Option<&Tensor>| {
        let mut h = g.norm_adj.matmul(&x.matmul(&gcn.weight).unwrap()).unwrap();
        add_row(&mut h, &gcn.bias);
        dense_relu(&mut h, &mut min_abs);
        let n = h.rows();
        let d = h.cols();
        let mut cat = Tensor::zeros(n, 2 * d);
        for v in 0..n {
            cat.row_mut(v)[..d].copy_from_slice(h.row(v));
            let nbrs = g.adj.neighbors()[v].clone();
            for &u in &nbrs {
                for c in 0..d {
                    let val = cat.get(v, d + c) + h.get(u, c) / nbrs.len() as f64;
                    cat.set(v, d + c, val);
                }
            }
        }
        let mut s = cat.matmul(&p.sage.weight).unwrap();
        add_row(&mut s, &p.sage.bias);
        dense_relu(&mut s, &mut min_abs);
        let mut m = s.matmul(&p.mlp.w1).unwrap();
        add_row(&mut m, &p.mlp.b1);
        dense_relu(&mut m, &mut min_abs);
        let mut out = m.matmul(&p.mlp.w2).unwrap();
        add_row(&mut out, &p.mlp.b2);
        if let Some(w) = skip {
            let sk = x.matmul(w).unwrap();
            for (o, v) in out.data_mut().iter_mut().zip(sk.data()) {
                *o += v;
            }
        }
        out.row_l2_normalize(1e-8)
    };
    let za = encode(&g.feat_a, &p.gcn_a, None);
    let zb = encode(&g.feat_b, &p.gcn_b, Some(&p.skip_b));
    let n = za.rows() as f64;
    let mut pooled = vec![0.0; za.cols()];
    for r in 0..za.rows() {
        for (c, o) in pooled.iter_mut().enumerate() {
            *o += (za.get(r, c) + zb.get(r, c)) / 2.0 / n;
        }
    }
    let logit = pooled
        .iter()
        .zip(p.cls_weight.data())
        .map(|(a, b)| a * b)
        .sum::<f64>()
        + p.cls_bias.get(0, 0);
    (logit, min_abs)
}

pub fn bce(logit: f64, label: f64) -> f64 {
    label * softplus(-logit) + (1.0 - label) * softplus(logit)
}

/// Worst `|analytic - numeric| / (|analytic| + 1e-8)` over every entry of
/// every parameter, with central differences of step `eps` on the BCE loss
/// evaluated by the double-double reference in [`dd`].
pub struct GradCheck {
    pub worst_rel: f64,
    pub worst_at: String,
    pub entries: usize,
}

pub fn check_model_gradients(g: &WsiGraph, p: &VernParams, eps: f64) -> GradCheck {
    let label = g.label.unwrap().as_f64();
    let (_, analytic) = loss_and_grads(p, g, 1.0, &mut Mode::Eval).unwrap();
    let base = dd::DdModel::new(g, p);
    let mut worst = GradCheck {
        worst_rel: 0.0,
        worst_at: String::new(),
        entries: 0,
    };
    for (pi, name) in PARAM_NAMES.iter().enumerate() {
        for e in 0..p.params()[pi].len() {
            let numeric = dd::central_difference(&base, pi, e, eps, label);
            let a = analytic[pi].data()[e];
            let rel = (a - numeric).abs() / (a.abs() + 1e-8);
            worst.entries += 1;
            if rel > worst.worst_rel {
                worst.worst_rel = rel;
                worst.worst_at = format!("{name}[{e}]: analytic {a:e}, numeric {numeric:e}");
            }
        }
    }
    worst
}

pub fn small_config(dim_a: usize, dim_b: usize, hidden: usize, embed: usize) -> VernConfig {
    VernConfig {
        dim_a,
        dim_b,
        hidden,
        embed,
        mlp_hidden: embed,
        dropout: 0.2,
    }
}

/// Draws graphs and parameters until every ReLU pre-activation is at least
/// `margin` away from zero.
pub fn kink_free_case(
    rng: &mut ChaCha8Rng,
    n: usize,
    config: &VernConfig,
    margin: f64,
) -> (WsiGraph, VernParams) {
    loop {
        let g = random_graph(rng, n, config.dim_a, config.dim_b, 9);
        let mut p = VernParams::init(config.clone(), rng.random()).unwrap();
        for b in [&mut p.gcn_a.bias, &mut p.gcn_b.bias, &mut p.sage.bias, &mut p.mlp.b1, &mut p.mlp.b2, &mut p.cls_bias] {
            let (r, c) = b.shape();
            *b = uniform(rng, r, c, -0.5, 0.5);
        }
        if reference_logit(&g, &p).1 >= margin {
            return (g, p);
        }
    }
}

/// In-memory dataset and graphs for synthetic slides, in slide order.
pub fn dataset_of(slides: &[SynthSlide]) -> (Dataset, Vec<WsiGraph>) {
    let ds = Dataset {
        entries: slides.iter().map(|s| s.entry.clone()).collect(),
        source_tag: "synthetic".into(),
        root: ".".into(),
    };
    let graphs = slides
        .iter()
        .map(|s| build_wsi_graph(s.entry.slide_id.clone(), &s.records, 9, s.entry.label).unwrap())
        .collect();
    (ds, graphs)
}
