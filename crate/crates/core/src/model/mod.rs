//! The two-branch Siamese graph encoder.
//!
//! Each branch runs GCN → SAGE → dropout → MLP → row L2 rescale over the
//! slide graph, on its own feature family. The GCN stage is branch-specific
//! (input widths differ); the SAGE and MLP stages are one parameter set
//! used by both branches. Branch B additionally adds a learned projection
//! of its raw input before the rescale. Node embeddings of the two branches
//! are averaged, mean-pooled over nodes and scored by a linear head.

mod checkpoint;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::WsiGraph;
use crate::layers::{
    gcn_forward, glorot_uniform, mlp_forward, sage_forward, GcnParams, GcnVars, MlpParams, MlpVars,
    SageParams, SageVars,
};
use crate::numerics::{sigmoid, Gradients, Mode, NumericsError, Tape, Tensor, Var, NORMALIZE_EPS};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_expecting,
    save_checkpoint, CheckpointError,
};

/// Number of highest-contribution patches reported per slide.
pub const TOP_PATCHES: usize = 9;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct VernConfig {
    pub dim_a: usize,
    pub dim_b: usize,
    pub hidden: usize,
    pub embed: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,
}

impl Default for VernConfig {
    fn default() -> Self {
        Self {
            dim_a: crate::data::FEAT_A_DIM,
            dim_b: crate::data::FEAT_B_DIM,
            hidden: 512,
            embed: 256,
            mlp_hidden: 256,
            dropout: 0.2,
        }
    }
}

impl VernConfig {
    /// Default feature widths with the given hidden and embedding sizes;
    /// the MLP's inner width follows `embed`.
    pub fn with_sizes(hidden: usize, embed: usize) -> Self {
        Self {
            hidden,
            embed,
            mlp_hidden: embed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if [self.dim_a, self.dim_b, self.hidden, self.embed, self.mlp_hidden].contains(&0) {
            return Err(ModelError::Shape(format!("zero-sized layer in {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Shape(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    /// 1024-wide features.
    A,
    /// 768-wide features, with the skip projection.
    B,
}

/// Every learnable weight of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct VernParams {
    pub config: VernConfig,
    pub seed: u64,
    pub gcn_a: GcnParams,
    pub gcn_b: GcnParams,
    /// Shared by both branches.
    pub sage: SageParams,
    /// Shared by both branches.
    pub mlp: MlpParams,
    /// `dim_b × embed`
    pub skip_b: Tensor,
    /// `embed × 1`
    pub cls_weight: Tensor,
    /// `1 × 1`
    pub cls_bias: Tensor,
    /// Free-form metadata carried through checkpoints.
    pub notes: BTreeMap<String, String>,
}

/// Canonical parameter order used by checkpoints, gradients and optimizer state.
pub const PARAM_NAMES: [&str; 13] = [
    "gcn_a.weight",
    "gcn_a.bias",
    "gcn_b.weight",
    "gcn_b.bias",
    "sage.weight",
    "sage.bias",
    "mlp.w1",
    "mlp.b1",
    "mlp.w2",
    "mlp.b2",
    "skip_b.weight",
    "classifier.weight",
    "classifier.bias",
];

/// Borrowed view of the weights one branch runs with.
pub struct EncoderView<'p> {
    pub gcn: &'p GcnParams,
    pub sage: &'p SageParams,
    pub mlp: &'p MlpParams,
    pub skip: Option<&'p Tensor>,
}

pub struct EncoderViewMut<'p> {
    pub gcn: &'p mut GcnParams,
    pub sage: &'p mut SageParams,
    pub mlp: &'p mut MlpParams,
    pub skip: Option<&'p mut Tensor>,
}

impl VernParams {
    pub fn init(config: VernConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let gcn_a = GcnParams::init(c.dim_a, c.hidden, &mut rng);
        let gcn_b = GcnParams::init(c.dim_b, c.hidden, &mut rng);
        let sage = SageParams::init(c.hidden, c.hidden, &mut rng);
        let mlp = MlpParams::init(c.hidden, c.mlp_hidden, c.embed, &mut rng);
        let skip_b = glorot_uniform(c.dim_b, c.embed, &mut rng);
        let cls_weight = glorot_uniform(c.embed, 1, &mut rng);
        Ok(Self {
            config,
            seed,
            gcn_a,
            gcn_b,
            sage,
            mlp,
            skip_b,
            cls_weight,
            cls_bias: Tensor::zeros(1, 1),
            notes: BTreeMap::new(),
        })
    }

    /// Parameters in [`PARAM_NAMES`] order.
    pub fn params(&self) -> [&Tensor; 13] {
        [
            &self.gcn_a.weight,
            &self.gcn_a.bias,
            &self.gcn_b.weight,
            &self.gcn_b.bias,
            &self.sage.weight,
            &self.sage.bias,
            &self.mlp.w1,
            &self.mlp.b1,
            &self.mlp.w2,
            &self.mlp.b2,
            &self.skip_b,
            &self.cls_weight,
            &self.cls_bias,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 13] {
        [
            &mut self.gcn_a.weight,
            &mut self.gcn_a.bias,
            &mut self.gcn_b.weight,
            &mut self.gcn_b.bias,
            &mut self.sage.weight,
            &mut self.sage.bias,
            &mut self.mlp.w1,
            &mut self.mlp.b1,
            &mut self.mlp.w2,
            &mut self.mlp.b2,
            &mut self.skip_b,
            &mut self.cls_weight,
            &mut self.cls_bias,
        ]
    }

    /// Expected `(rows, cols)` of every parameter under `config`.
    pub fn expected_shapes(config: &VernConfig) -> [(usize, usize); 13] {
        let c = config;
        [
            (c.dim_a, c.hidden),
            (1, c.hidden),
            (c.dim_b, c.hidden),
            (1, c.hidden),
            (2 * c.hidden, c.hidden),
            (1, c.hidden),
            (c.hidden, c.mlp_hidden),
            (1, c.mlp_hidden),
            (c.mlp_hidden, c.embed),
            (1, c.embed),
            (c.dim_b, c.embed),
            (c.embed, 1),
            (1, 1),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn branch(&self, branch: Branch) -> EncoderView<'_> {
        EncoderView {
            gcn: match branch {
                Branch::A => &self.gcn_a,
                Branch::B => &self.gcn_b,
            },
            sage: &self.sage,
            mlp: &self.mlp,
            skip: (branch == Branch::B).then_some(&self.skip_b),
        }
    }

    pub fn branch_mut(&mut self, branch: Branch) -> EncoderViewMut<'_> {
        let (gcn, skip) = match branch {
            Branch::A => (&mut self.gcn_a, None),
            Branch::B => (&mut self.gcn_b, Some(&mut self.skip_b)),
        };
        EncoderViewMut {
            gcn,
            sage: &mut self.sage,
            mlp: &mut self.mlp,
            skip,
        }
    }

    /// Registers every parameter once; both branches read the same SAGE and
    /// MLP leaves, so their gradients accumulate in one place.
    pub fn bind<'a>(&'a self, tape: &Tape<'a>) -> BoundVern {
        let sage = self.sage.bind(tape);
        let mlp = self.mlp.bind(tape);
        self.bind_with(tape, (sage, sage), (mlp, mlp))
    }

    /// Registers the shared SAGE and MLP weights separately per branch, as
    /// if they were two untied copies that happen to hold equal values.
    pub fn bind_untied<'a>(&'a self, tape: &Tape<'a>) -> BoundVern {
        let sage = (self.sage.bind(tape), self.sage.bind(tape));
        let mlp = (self.mlp.bind(tape), self.mlp.bind(tape));
        self.bind_with(tape, sage, mlp)
    }

    fn bind_with<'a>(
        &'a self,
        tape: &Tape<'a>,
        sage: (SageVars, SageVars),
        mlp: (MlpVars, MlpVars),
    ) -> BoundVern {
        let gcn_a = self.gcn_a.bind(tape);
        let gcn_b = self.gcn_b.bind(tape);
        let skip = tape.param(&self.skip_b);
        let cls_w = tape.param(&self.cls_weight);
        let cls_b = tape.param(&self.cls_bias);
        let mut slots = vec![
            vec![gcn_a.weight],
            vec![gcn_a.bias],
            vec![gcn_b.weight],
            vec![gcn_b.bias],
            vec![sage.0.weight],
            vec![sage.0.bias],
            vec![mlp.0.w1],
            vec![mlp.0.b1],
            vec![mlp.0.w2],
            vec![mlp.0.b2],
            vec![skip],
            vec![cls_w],
            vec![cls_b],
        ];
        let second = [sage.1.weight, sage.1.bias, mlp.1.w1, mlp.1.b1, mlp.1.w2, mlp.1.b2];
        for (slot, v) in slots[4..10].iter_mut().zip(second) {
            if slot[0] != v {
                slot.push(v);
            }
        }
        BoundVern {
            a: BoundEncoder {
                gcn: gcn_a,
                sage: sage.0,
                mlp: mlp.0,
                skip: None,
            },
            b: BoundEncoder {
                gcn: gcn_b,
                sage: sage.1,
                mlp: mlp.1,
                skip: Some(skip),
            },
            cls_weight: cls_w,
            cls_bias: cls_b,
            slots,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundEncoder {
    pub gcn: GcnVars,
    pub sage: SageVars,
    pub mlp: MlpVars,
    pub skip: Option<Var>,
}

/// Tape handles for one forward pass.
#[derive(Clone, Debug)]
pub struct BoundVern {
    pub a: BoundEncoder,
    pub b: BoundEncoder,
    pub cls_weight: Var,
    pub cls_bias: Var,
    slots: Vec<Vec<Var>>,
}

impl BoundVern {
    pub fn encoder(&self, branch: Branch) -> &BoundEncoder {
        match branch {
            Branch::A => &self.a,
            Branch::B => &self.b,
        }
    }

    /// Gradient of every parameter in [`PARAM_NAMES`] order, summing over
    /// all leaves a parameter was bound to.
    pub fn collect_grads(&self, grads: &mut Gradients) -> Vec<Tensor> {
        self.slots
            .iter()
            .map(|vars| {
                let mut total = grads.take(vars[0]);
                for &v in &vars[1..] {
                    let g = grads.take(v);
                    for (t, x) in total.data_mut().iter_mut().zip(g.data()) {
                        *t += x;
                    }
                }
                total
            })
            .collect()
    }

    /// Per-leaf gradients of one parameter (two entries for untied copies).
    pub fn leaf_grads(&self, index: usize, grads: &Gradients) -> Vec<Tensor> {
        self.slots[index].iter().map(|&v| grads.get(v)).collect()
    }
}

fn check_features(g: &WsiGraph, config: &VernConfig) -> Result<(), ModelError> {
    if g.feat_a.cols() != config.dim_a || g.feat_b.cols() != config.dim_b {
        return Err(ModelError::Shape(format!(
            "slide {} has feature widths ({}, {}), model expects ({}, {})",
            g.slide_id,
            g.feat_a.cols(),
            g.feat_b.cols(),
            config.dim_a,
            config.dim_b
        )));
    }
    if g.node_count() == 0 {
        return Err(ModelError::Shape(format!("slide {} has no patches", g.slide_id)));
    }
    Ok(())
}

/// One branch on an existing tape: returns the `n × embed` node embeddings.
pub fn encode_on_tape<'a>(
    tape: &Tape<'a>,
    g: &'a WsiGraph,
    norm_adj: Var,
    x: Var,
    enc: &BoundEncoder,
    dropout: f64,
    mode: &mut Mode<'_>,
) -> Result<Var, ModelError> {
    let h = gcn_forward(tape, norm_adj, x, &enc.gcn)?;
    let h = sage_forward(tape, g.adj.neighbors(), h, &enc.sage)?;
    let h = tape.dropout(h, dropout, mode)?;
    let mut h = mlp_forward(tape, h, &enc.mlp)?;
    if let Some(skip) = enc.skip {
        let s = tape.matmul(x, skip)?;
        h = tape.add(h, s)?;
    }
    Ok(tape.row_l2_normalize(h, NORMALIZE_EPS)?)
}

/// Tape handles of a full forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub z_a: Var,
    pub z_b: Var,
    pub pooled: Var,
    pub logit: Var,
}

pub fn forward_on_tape<'a>(
    tape: &Tape<'a>,
    g: &'a WsiGraph,
    p: &VernParams,
    bound: &BoundVern,
    mode: &mut Mode<'_>,
) -> Result<ForwardVars, ModelError> {
    check_features(g, &p.config)?;
    let norm_adj = tape.constant(&g.norm_adj);
    let xa = tape.constant(&g.feat_a);
    let xb = tape.constant(&g.feat_b);
    let dropout = p.config.dropout;
    let z_a = encode_on_tape(tape, g, norm_adj, xa, &bound.a, dropout, mode)?;
    let z_b = encode_on_tape(tape, g, norm_adj, xb, &bound.b, dropout, mode)?;
    let fused = tape.scale(tape.add(z_a, z_b)?, 0.5)?;
    let pooled = tape.mean_rows(fused)?;
    let logit = tape.add(tape.matmul(pooled, bound.cls_weight)?, bound.cls_bias)?;
    Ok(ForwardVars {
        z_a,
        z_b,
        pooled,
        logit,
    })
}

/// Node embeddings of one branch for features `x` on the graph `g`.
pub fn encoder_forward(
    g: &WsiGraph,
    x: &Tensor,
    branch: Branch,
    p: &VernParams,
    mode: &mut Mode<'_>,
) -> Result<Tensor, ModelError> {
    let width = match branch {
        Branch::A => p.config.dim_a,
        Branch::B => p.config.dim_b,
    };
    if x.shape() != (g.node_count(), width) {
        return Err(ModelError::Shape(format!(
            "branch {branch:?} expects {} × {width} features, got {:?}",
            g.node_count(),
            x.shape()
        )));
    }
    let tape = Tape::new();
    let bound = p.bind(&tape);
    let z = encode_on_tape(
        &tape,
        g,
        tape.constant(&g.norm_adj),
        tape.constant(x),
        bound.encoder(branch),
        p.config.dropout,
        mode,
    )?;
    let out = tape.value(z).clone();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VernOutput {
    pub logit: f64,
    pub prob: f64,
    /// Per-node logit contribution averaged over both branches.
    pub raw_contributions: Vec<f64>,
    /// `raw_contributions` min-max scaled to `[0, 1]`.
    pub contributions: Vec<f64>,
    /// Up to [`TOP_PATCHES`] node indices, highest contribution first.
    pub top_patches: Vec<usize>,
}

pub fn vern_forward(g: &WsiGraph, p: &VernParams, mode: &mut Mode<'_>) -> Result<VernOutput, ModelError> {
    let tape = Tape::new();
    let bound = p.bind(&tape);
    let vars = forward_on_tape(&tape, g, p, &bound, mode)?;
    let logit = tape.value(vars.logit).data()[0];
    let raw = raw_contributions(&tape.value(vars.z_a), &tape.value(vars.z_b), &p.cls_weight)?;
    let contributions = normalize_contributions(&raw);
    let top_patches = top_k(&contributions, TOP_PATCHES);
    Ok(VernOutput {
        logit,
        prob: sigmoid(logit),
        raw_contributions: raw,
        contributions,
        top_patches,
    })
}

/// `((z_a[i] · w) + (z_b[i] · w)) / 2` for every node `i`.
///
/// Averaging these over nodes and adding the classifier bias recovers the
/// slide logit.
pub fn raw_contributions(z_a: &Tensor, z_b: &Tensor, cls_weight: &Tensor) -> Result<Vec<f64>, ModelError> {
    if z_a.shape() != z_b.shape() || cls_weight.shape() != (z_a.cols(), 1) {
        return Err(ModelError::Shape(format!(
            "contributions from {:?}, {:?} with classifier {:?}",
            z_a.shape(),
            z_b.shape(),
            cls_weight.shape()
        )));
    }
    let w = cls_weight.data();
    let dot = |row: &[f64]| row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    Ok((0..z_a.rows())
        .map(|i| (dot(z_a.row(i)) + dot(z_b.row(i))) / 2.0)
        .collect())
}

/// Min-max scaling to `[0, 1]`; a constant input maps to all `0.5`.
pub fn normalize_contributions(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if raw.is_empty() || hi == lo {
        return vec![0.5; raw.len()];
    }
    raw.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
}

/// Per-node scores in `[0, 1]` from both branches' embeddings.
pub fn contribution_scores(z_a: &Tensor, z_b: &Tensor, cls_weight: &Tensor) -> Result<Vec<f64>, ModelError> {
    Ok(normalize_contributions(&raw_contributions(z_a, z_b, cls_weight)?))
}

/// Indices of the `k` largest scores, descending, ties to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn small_config() -> VernConfig {
        VernConfig {
            dim_a: 6,
            dim_b: 5,
            hidden: 4,
            embed: 3,
            mlp_hidden: 3,
            dropout: 0.2,
        }
    }

    fn graph(n: usize, seed: u64) -> WsiGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = (0..n)
            .map(|_| [rng.next_u32() as f64 / 1e6, rng.next_u32() as f64 / 1e6])
            .collect();
        WsiGraph::from_parts(
            "g",
            (0..n as u32).collect(),
            coords,
            glorot_uniform(n, 6, &mut rng),
            glorot_uniform(n, 5, &mut rng),
            3,
            None,
        )
        .unwrap()
    }

    #[test]
    fn default_shapes() {
        let p = VernParams::init(VernConfig::default(), 1).unwrap();
        assert_eq!(p.gcn_a.weight.shape(), (1024, 512));
        assert_eq!(p.gcn_b.weight.shape(), (768, 512));
        let expected = VernParams::expected_shapes(&p.config);
        for (t, s) in p.params().iter().zip(expected) {
            assert_eq!(t.shape(), s);
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = VernParams::init(small_config(), 9).unwrap();
        assert_eq!(a, VernParams::init(small_config(), 9).unwrap());
        assert_ne!(a, VernParams::init(small_config(), 10).unwrap());
    }

    #[test]
    fn shared_stages_are_tied() {
        let mut p = VernParams::init(small_config(), 3).unwrap();
        p.branch_mut(Branch::A).sage.weight.set(0, 0, 42.0);
        p.branch_mut(Branch::A).mlp.b2.set(0, 1, -7.0);
        let b = p.branch(Branch::B);
        assert_eq!(b.sage.weight.get(0, 0), 42.0);
        assert_eq!(b.mlp.b2.get(0, 1), -7.0);
        assert!(p.branch(Branch::A).skip.is_none() && b.skip.is_some());
    }

    #[test]
    fn eval_forward_is_pure_and_rescaled() {
        let p = VernParams::init(small_config(), 4).unwrap();
        let g = graph(7, 1);
        let a = vern_forward(&g, &p, &mut Mode::Eval).unwrap();
        assert_eq!(a, vern_forward(&g, &p, &mut Mode::Eval).unwrap());
        for branch in [Branch::A, Branch::B] {
            let x = if branch == Branch::A { &g.feat_a } else { &g.feat_b };
            let z = encoder_forward(&g, x, branch, &p, &mut Mode::Eval).unwrap();
            for r in 0..z.rows() {
                let norm = z.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(norm == 0.0 || (norm - 1.0).abs() <= 1e-9, "{norm}");
            }
        }
    }

    #[test]
    fn contribution_decomposes_logit() {
        let p = VernParams::init(small_config(), 5).unwrap();
        let out = vern_forward(&graph(9, 2), &p, &mut Mode::Eval).unwrap();
        let mean = out.raw_contributions.iter().sum::<f64>() / 9.0;
        assert!((mean + p.cls_bias.get(0, 0) - out.logit).abs() < 1e-12);
        assert!((out.prob - sigmoid(out.logit)).abs() < 1e-12);
    }

    #[test]
    fn constant_head() {
        let mut p = VernParams::init(small_config(), 6).unwrap();
        p.cls_weight = Tensor::zeros(3, 1);
        p.cls_bias.set(0, 0, 0.7);
        for seed in 0..3 {
            let out = vern_forward(&graph(5 + seed as usize, seed), &p, &mut Mode::Eval).unwrap();
            assert_eq!(out.logit, 0.7);
            assert_eq!(out.prob, sigmoid(0.7));
            assert!(out.contributions.iter().all(|&c| c == 0.5));
        }
    }

    #[test]
    fn single_node_graph() {
        let p = VernParams::init(small_config(), 7).unwrap();
        let g = graph(1, 3);
        let tape = Tape::new();
        let bound = p.bind(&tape);
        let v = forward_on_tape(&tape, &g, &p, &bound, &mut Mode::Eval).unwrap();
        let fused: Vec<f64> = tape
            .value(v.z_a)
            .data()
            .iter()
            .zip(tape.value(v.z_b).data())
            .map(|(a, b)| (a + b) / 2.0)
            .collect();
        assert_eq!(tape.value(v.pooled).data(), fused.as_slice());
        let out = vern_forward(&g, &p, &mut Mode::Eval).unwrap();
        assert_eq!(out.top_patches, vec![0]);
    }

    #[test]
    fn zero_skip_equals_no_skip() {
        let mut p = VernParams::init(small_config(), 8).unwrap();
        p.skip_b = Tensor::zeros(5, 3);
        let g = graph(6, 4);
        let with = encoder_forward(&g, &g.feat_b, Branch::B, &p, &mut Mode::Eval).unwrap();
        assert!(encoder_forward(&g, &g.feat_b, Branch::A, &p, &mut Mode::Eval).is_err());
        let tape = Tape::new();
        let mut bound = p.bind(&tape);
        bound.b.skip = None;
        let z = encode_on_tape(
            &tape,
            &g,
            tape.constant(&g.norm_adj),
            tape.constant(&g.feat_b),
            &bound.b,
            0.2,
            &mut Mode::Eval,
        )
        .unwrap();
        assert_eq!(*tape.value(z), with);
    }

    #[test]
    fn contribution_rules() {
        let za = Tensor::from_rows(&[[2.0, 0.3, 0.1], [0.0, 0.9, -0.4]]).unwrap();
        let w = Tensor::from_rows(&[[1.0], [0.0], [0.0]]).unwrap();
        assert_eq!(contribution_scores(&za, &za, &w).unwrap(), vec![1.0, 0.0]);
        let same = Tensor::from_rows(&[[0.2, 0.1, 0.4], [0.2, 0.1, 0.4], [0.2, 0.1, 0.4]]).unwrap();
        let w = Tensor::from_rows(&[[0.3], [-1.0], [2.0]]).unwrap();
        assert_eq!(contribution_scores(&same, &same, &w).unwrap(), vec![0.5; 3]);
    }

    #[test]
    fn normalization_ignores_positive_affine_maps() {
        let raw = [0.3, -1.2, 4.5, 0.0, 2.2];
        let base = normalize_contributions(&raw);
        for (a, b) in [(2.0, 1.0), (0.01, -50.0), (1e3, 3.0)] {
            let t: Vec<f64> = raw.iter().map(|v| a * v + b).collect();
            for (x, y) in normalize_contributions(&t).iter().zip(&base) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn top_k_order_and_clamp() {
        let s = [0.2, 0.9, 0.9, 0.1, 1.0];
        assert_eq!(top_k(&s, 3), vec![4, 1, 2]);
        assert_eq!(top_k(&s, 9).len(), 5);
    }

    #[test]
    fn wrong_feature_width_is_shape_error() {
        let p = VernParams::init(VernConfig { dim_a: 7, ..small_config() }, 1).unwrap();
        assert!(matches!(
            vern_forward(&graph(4, 1), &p, &mut Mode::Eval),
            Err(ModelError::Shape(_))
        ));
    }
}
