//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of one forward pass as a node whose
//! parents were recorded before it, so replaying the nodes in reverse order
//! is a valid topological traversal. Values are either borrowed from the
//! caller (parameters, graph operators, input features) or owned by the
//! tape (intermediates).
//!
//! ```
//! use vern::numerics::{Tape, Tensor};
//!
//! let x = Tensor::from_rows(&[[-1.0, 1.0]]).unwrap();
//! let tape = Tape::new();
//! let xv = tape.param(&x);
//! let y = tape.relu(xv).unwrap();
//! let loss = tape.sum(y).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(xv).data(), &[0.0, 1.0]);
//! ```

use std::borrow::Cow;
use std::cell::{Ref, RefCell};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, RngCore};

use super::tensor::{gemm, row_norm};
use super::{NumericsError, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    id: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.id
    }
}

/// Whether stochastic layers are active.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut dyn RngCore),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

enum Op<'a> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Mask(usize, Vec<f64>),
    RowL2Normalize(usize, f64),
    MeanRows(usize),
    ConcatCols(usize, usize),
    NeighborMean(usize, &'a [Vec<usize>]),
    Sum(usize),
    BceWithLogits {
        input: usize,
        target: f64,
        pos_weight: f64,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op<'a>,
    requires_grad: bool,
}

/// Single-pass operation recorder. Not `Sync`; one tape per forward pass.
pub struct Tape<'a> {
    id: u64,
    nodes: RefCell<Vec<Node<'a>>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf borrowing `value`.
    pub fn param(&self, value: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    pub fn param_owned(&self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    pub fn constant_owned(&self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| n[v.id].value.as_ref())
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.id].value.shape()
    }

    fn push(&self, value: Cow<'a, Tensor>, op: Op<'a>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            id: nodes.len() - 1,
        }
    }

    fn check(&self, vars: &[Var]) -> Result<(), NumericsError> {
        let len = self.len();
        if vars.iter().any(|v| v.tape != self.id || v.id >= len) {
            return Err(NumericsError::ForeignVar);
        }
        Ok(())
    }

    fn record(
        &self,
        name: &'static str,
        value: Tensor,
        op: Op<'a>,
        parents: &[Var],
    ) -> Result<Var, NumericsError> {
        value.check_finite(name)?;
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        Ok(self.push(Cow::Owned(value), op, requires_grad))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.check(&[a, b])?;
        let out = self.value(a).matmul(&self.value(b))?;
        self.record("matmul", out, Op::MatMul(a.id, b.id), &[a, b])
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.check(&[a, b])?;
        let out = {
            let (av, bv) = (self.value(a), self.value(b));
            if av.shape() != bv.shape() {
                return Err(NumericsError::Shape {
                    op: "add",
                    left: av.shape(),
                    right: bv.shape(),
                });
            }
            let mut out = av.clone();
            out.add_assign(&bv);
            out
        };
        self.record("add", out, Op::Add(a.id, b.id), &[a, b])
    }

    /// Adds the `1 × c` row vector `row` to every row of `x`.
    pub fn add_row(&self, x: Var, row: Var) -> Result<Var, NumericsError> {
        self.check(&[x, row])?;
        let out = {
            let (xv, rv) = (self.value(x), self.value(row));
            if rv.rows() != 1 || rv.cols() != xv.cols() {
                return Err(NumericsError::Shape {
                    op: "add_row",
                    left: xv.shape(),
                    right: rv.shape(),
                });
            }
            let mut out = xv.clone();
            for r in 0..out.rows() {
                for (o, b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                    *o += b;
                }
            }
            out
        };
        self.record("add_row", out, Op::AddRow(x.id, row.id), &[x, row])
    }

    pub fn scale(&self, x: Var, factor: f64) -> Result<Var, NumericsError> {
        self.check(&[x])?;
        let out = self.value(x).map(|v| v * factor);
        self.record("scale", out, Op::Scale(x.id, factor), &[x])
    }

    pub fn relu(&self, x: Var) -> Result<Var, NumericsError> {
        self.check(&[x])?;
        let out = self.value(x).relu();
        self.record("relu", out, Op::Relu(x.id), &[x])
    }

    /// Inverted dropout: in training each entry is zeroed with probability
    /// `p` and survivors are scaled by `1 / (1 - p)`. Eval mode and `p == 0`
    /// return `x` itself without recording anything.
    pub fn dropout(&self, x: Var, p: f64, mode: &mut Mode<'_>) -> Result<Var, NumericsError> {
        self.check(&[x])?;
        if !(0.0..1.0).contains(&p) {
            return Err(NumericsError::Parameter(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        let rng = match mode {
            Mode::Train(rng) if p > 0.0 => rng,
            _ => return Ok(x),
        };
        let keep = 1.0 / (1.0 - p);
        let (mask, out) = {
            let xv = self.value(x);
            let mask: Vec<f64> = (0..xv.len())
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect();
            let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
            (mask, Tensor::new(xv.rows(), xv.cols(), data)?)
        };
        self.record("dropout", out, Op::Mask(x.id, mask), &[x])
    }

    pub fn row_l2_normalize(&self, x: Var, eps: f64) -> Result<Var, NumericsError> {
        self.check(&[x])?;
        if !(eps > 0.0) {
            return Err(NumericsError::Parameter(format!("eps must be positive, got {eps}")));
        }
        let out = self.value(x).row_l2_normalize(eps);
        self.record("row_l2_normalize", out, Op::RowL2Normalize(x.id, eps), &[x])
    }

    /// Column-wise mean over rows, `n × c → 1 × c`.
    pub fn mean_rows(&self, x: Var) -> Result<Var, NumericsError> {
        self.check(&[x])?;
        let out = {
            let xv = self.value(x);
            if xv.rows() == 0 {
                return Err(NumericsError::Parameter("mean over zero rows".into()));
            }
            xv.mean_rows()
        };
        self.record("mean_rows", out, Op::MeanRows(x.id), &[x])
    }

    pub fn concat_cols(&self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.check(&[a, b])?;
        let out = {
            let (av, bv) = (self.value(a), self.value(b));
            if av.rows() != bv.rows() {
                return Err(NumericsError::Shape {
                    op: "concat_cols",
                    left: av.shape(),
                    right: bv.shape(),
                });
            }
            let cols = av.cols() + bv.cols();
            let mut data = Vec::with_capacity(av.rows() * cols);
            for r in 0..av.rows() {
                data.extend_from_slice(av.row(r));
                data.extend_from_slice(bv.row(r));
            }
            Tensor::new(av.rows(), cols, data)?
        };
        self.record("concat_cols", out, Op::ConcatCols(a.id, b.id), &[a, b])
    }

    /// Row `v` of the output is the mean of the rows of `x` listed in
    /// `neighbors[v]`, or zero when that list is empty. The mean is
    /// accumulated incrementally, so equal rows average to themselves exactly.
    pub fn neighbor_mean(&self, x: Var, neighbors: &'a [Vec<usize>]) -> Result<Var, NumericsError> {
        self.check(&[x])?;
        let out = {
            let xv = self.value(x);
            if neighbors.len() != xv.rows() || neighbors.iter().flatten().any(|&u| u >= xv.rows()) {
                return Err(NumericsError::Shape {
                    op: "neighbor_mean",
                    left: (neighbors.len(), 0),
                    right: xv.shape(),
                });
            }
            let mut out = Tensor::zeros(xv.rows(), xv.cols());
            for (v, nbrs) in neighbors.iter().enumerate() {
                let row = out.row_mut(v);
                for (k, &u) in nbrs.iter().enumerate() {
                    let w = 1.0 / (k + 1) as f64;
                    for (o, s) in row.iter_mut().zip(xv.row(u)) {
                        *o += (s - *o) * w;
                    }
                }
            }
            out
        };
        self.record("neighbor_mean", out, Op::NeighborMean(x.id, neighbors), &[x])
    }

    pub fn sum(&self, x: Var) -> Result<Var, NumericsError> {
        self.check(&[x])?;
        let out = Tensor::scalar(self.value(x).sum())?;
        self.record("sum", out, Op::Sum(x.id), &[x])
    }

    /// Weighted binary cross-entropy of a `1 × 1` logit against `target`,
    /// evaluated in the overflow-free form
    /// `w·y·softplus(-z) + (1 - y)·softplus(z)`.
    pub fn bce_with_logits(&self, logit: Var, target: f64, pos_weight: f64) -> Result<Var, NumericsError> {
        self.check(&[logit])?;
        let z = {
            let v = self.value(logit);
            if v.shape() != (1, 1) {
                return Err(NumericsError::Shape {
                    op: "bce_with_logits",
                    left: v.shape(),
                    right: (1, 1),
                });
            }
            v.data()[0]
        };
        let loss = pos_weight * target * softplus(-z) + (1.0 - target) * softplus(z);
        self.record(
            "bce_with_logits",
            Tensor::scalar(loss)?,
            Op::BceWithLogits {
                input: logit.id,
                target,
                pos_weight,
            },
            &[logit],
        )
    }

    /// Propagates d(loss)/d(node) back through the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        self.check(&[loss])?;
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.shape() != (1, 1) {
            return Err(NumericsError::Usage(format!(
                "backward needs a 1x1 loss, got {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::ones(1, 1));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[id].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            let wants = |p: usize| nodes[p].requires_grad;
            let val = |p: usize| nodes[p].value.as_ref();
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if wants(*a) {
                        let bv = val(*b);
                        let mut da = Tensor::zeros(g.rows(), bv.rows());
                        gemm(&g, false, bv, true, &mut da, 0.0);
                        accumulate(&mut grads, *a, da);
                    }
                    if wants(*b) {
                        let av = val(*a);
                        let mut db = Tensor::zeros(av.cols(), g.cols());
                        gemm(av, true, &g, false, &mut db, 0.0);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    if wants(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if wants(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::AddRow(x, row) => {
                    if wants(*row) {
                        let mut db = Tensor::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (o, v) in db.data_mut().iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                        accumulate(&mut grads, *row, db);
                    }
                    if wants(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Scale(x, f) => {
                    let f = *f;
                    accumulate(&mut grads, *x, g.map(|v| v * f));
                }
                Op::Relu(x) => {
                    let xv = val(*x);
                    let mut dx = g;
                    for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Mask(x, mask) => {
                    let mut dx = g;
                    for (d, m) in dx.data_mut().iter_mut().zip(mask) {
                        *d *= m;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::RowL2Normalize(x, eps) => {
                    let xv = val(*x);
                    let y = node.value.as_ref();
                    let mut dx = Tensor::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let norm = row_norm(xv.row(r));
                        let (gr, yr) = (g.row(r), y.row(r));
                        let out = dx.row_mut(r);
                        if norm > *eps {
                            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                            for ((o, gv), yv) in out.iter_mut().zip(gr).zip(yr) {
                                *o = (gv - yv * dot) / norm;
                            }
                        } else {
                            for (o, gv) in out.iter_mut().zip(gr) {
                                *o = gv / eps;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::MeanRows(x) => {
                    let n = val(*x).rows();
                    let inv = 1.0 / n as f64;
                    let mut dx = Tensor::zeros(n, g.cols());
                    for r in 0..n {
                        for (o, v) in dx.row_mut(r).iter_mut().zip(g.data()) {
                            *o = v * inv;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(a, b) => {
                    let ca = val(*a).cols();
                    let cb = g.cols() - ca;
                    if wants(*a) {
                        let mut da = Tensor::zeros(g.rows(), ca);
                        for r in 0..g.rows() {
                            da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        }
                        accumulate(&mut grads, *a, da);
                    }
                    if wants(*b) {
                        let mut db = Tensor::zeros(g.rows(), cb);
                        for r in 0..g.rows() {
                            db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                        }
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::NeighborMean(x, neighbors) => {
                    let mut dx = Tensor::zeros(g.rows(), g.cols());
                    for (v, nbrs) in neighbors.iter().enumerate() {
                        if nbrs.is_empty() {
                            continue;
                        }
                        let inv = 1.0 / nbrs.len() as f64;
                        let src = g.row(v);
                        for &u in nbrs {
                            for (o, s) in dx.row_mut(u).iter_mut().zip(src) {
                                *o += s * inv;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sum(x) => {
                    let (r, c) = val(*x).shape();
                    accumulate(&mut grads, *x, Tensor::filled(r, c, g.data()[0]));
                }
                Op::BceWithLogits {
                    input,
                    target,
                    pos_weight,
                } => {
                    let z = val(*input).data()[0];
                    let s = sigmoid(z);
                    let d = pos_weight * target * (s - 1.0) + (1.0 - target) * s;
                    accumulate(&mut grads, *input, Tensor::scalar(g.data()[0] * d)?);
                }
            }
        }

        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        for g in grads.iter().flatten() {
            g.check_finite("backward")?;
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes,
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to the leaf `v`; zeros if the loss
    /// does not depend on it. Gradients of intermediate nodes are consumed
    /// during the backward pass and also read as zeros.
    ///
    /// # Panics
    /// If `v` was recorded on another tape.
    pub fn get(&self, v: Var) -> Tensor {
        assert_eq!(v.tape, self.tape, "variable from a different tape");
        match self.grads.get(v.id).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.id];
                Tensor::zeros(r, c)
            }
        }
    }

    /// Moves the gradient out, leaving zeros behind.
    pub fn take(&mut self, v: Var) -> Tensor {
        assert_eq!(v.tape, self.tape, "variable from a different tape");
        match self.grads.get_mut(v.id).and_then(Option::take) {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.id];
                Tensor::zeros(r, c)
            }
        }
    }
}
