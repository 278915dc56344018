//! Double-double reference forward for finite-difference gradient checks.
//!
//! Plain `f64` central differences bottom out near `ulp(loss) / 2ε ≈ 1e-11`,
//! which swamps gradients of order 1e-8. Evaluating the perturbed forward
//! passes in ~106-bit arithmetic and forming the loss difference directly
//! removes that floor, leaving only the O(ε²) truncation error.

use std::ops::{Add, Div, Mul, Neg, Sub};
use std::rc::Rc;

use vern::graph::WsiGraph;
use vern::model::VernParams;
use vern::numerics::{sigmoid, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn from_f64(v: f64) -> Dd {
        Dd { hi: v, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn norm(hi: f64, lo: f64) -> Dd {
        let (hi, lo) = quick_two_sum(hi, lo);
        Dd { hi, lo }
    }

    pub fn sqrt(self) -> Dd {
        if self.hi <= 0.0 {
            return Dd::ZERO;
        }
        let x = 1.0 / self.hi.sqrt();
        let ax = self.hi * x;
        let ax_dd = Dd::from_f64(ax);
        let diff = (self - ax_dd * ax_dd).hi;
        Dd::norm(ax, diff * (x * 0.5))
    }

    pub fn max(self, other: Dd) -> Dd {
        if (self - other).hi >= 0.0 {
            self
        } else {
            other
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Dd::norm(s, e + f)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let p = self.hi * b.hi;
        let e = self.hi.mul_add(b.hi, -p);
        Dd::norm(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b * Dd::from_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * Dd::from_f64(q2);
        let q3 = r.hi / b.hi;
        let (q, e) = quick_two_sum(q1, q2);
        Dd { hi: q, lo: e } + Dd::from_f64(q3)
    }
}

#[derive(Clone, Debug)]
pub struct DdMat {
    rows: usize,
    cols: usize,
    data: Vec<Dd>,
}

impl DdMat {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Dd::ZERO; rows * cols],
        }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        Self {
            rows: t.rows(),
            cols: t.cols(),
            data: t.data().iter().map(|&v| Dd::from_f64(v)).collect(),
        }
    }

    fn at(&self, r: usize, c: usize) -> Dd {
        self.data[r * self.cols + c]
    }

    fn at_mut(&mut self, r: usize, c: usize) -> &mut Dd {
        &mut self.data[r * self.cols + c]
    }

    fn matmul(&self, b: &DdMat) -> DdMat {
        assert_eq!(self.cols, b.rows);
        let mut out = DdMat::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a.hi == 0.0 {
                    continue;
                }
                for j in 0..b.cols {
                    let v = out.at(i, j) + a * b.at(k, j);
                    *out.at_mut(i, j) = v;
                }
            }
        }
        out
    }

    fn add_row(mut self, b: &DdMat) -> DdMat {
        for r in 0..self.rows {
            for c in 0..self.cols {
                *self.at_mut(r, c) = self.at(r, c) + b.data[c];
            }
        }
        self
    }

    fn add(mut self, b: &DdMat) -> DdMat {
        for (x, y) in self.data.iter_mut().zip(&b.data) {
            *x = *x + *y;
        }
        self
    }

    fn relu(mut self) -> DdMat {
        for x in &mut self.data {
            if x.hi <= 0.0 {
                *x = Dd::ZERO;
            }
        }
        self
    }
}

/// Indices of the input projections `gcn_a.weight`, `gcn_b.weight`, `skip_b.weight`.
const WIDE: [usize; 3] = [0, 2, 10];

/// All parameters in double-double, plus the wide input projections
/// `x_a·W_a`, `x_b·W_b` and `x_b·S`, which are cached because they dominate
/// the cost and a single-entry perturbation changes just one of their columns.
#[derive(Clone)]
pub struct DdModel {
    params: Vec<DdMat>,
    xa_w: DdMat,
    xb_w: DdMat,
    xb_s: DdMat,
    inputs: Rc<Inputs>,
}

struct Inputs {
    feat_a: DdMat,
    feat_b: DdMat,
    norm_adj: DdMat,
    neighbors: Vec<Vec<usize>>,
}

impl DdModel {
    pub fn new(g: &WsiGraph, p: &VernParams) -> Self {
        let mut params: Vec<DdMat> = p.params().iter().map(|t| DdMat::from_tensor(t)).collect();
        let feat_a = DdMat::from_tensor(&g.feat_a);
        let feat_b = DdMat::from_tensor(&g.feat_b);
        let xa_w = feat_a.matmul(&params[0]);
        let xb_w = feat_b.matmul(&params[2]);
        let xb_s = feat_b.matmul(&params[10]);
        // Only the projections are read downstream, so perturbed copies
        // need not carry the wide weights.
        for i in WIDE {
            params[i] = DdMat::zeros(0, params[i].cols);
        }
        Self {
            xa_w,
            xb_w,
            xb_s,
            params,
            inputs: Rc::new(Inputs {
                feat_a,
                feat_b,
                norm_adj: DdMat::from_tensor(&g.norm_adj),
                neighbors: g.adj.neighbors().to_vec(),
            }),
        }
    }

    fn encode(&self, proj: &DdMat, gcn_bias: &DdMat, skip: Option<&DdMat>) -> DdMat {
        let p = &self.params;
        let h = self.inputs.norm_adj.matmul(proj).add_row(gcn_bias).relu();
        let (n, d) = (h.rows, h.cols);
        let mut cat = DdMat::zeros(n, 2 * d);
        for v in 0..n {
            for c in 0..d {
                *cat.at_mut(v, c) = h.at(v, c);
            }
            let nbrs = &self.inputs.neighbors[v];
            if nbrs.is_empty() {
                continue;
            }
            let count = Dd::from_f64(nbrs.len() as f64);
            for c in 0..d {
                let mut s = Dd::ZERO;
                for &u in nbrs {
                    s = s + h.at(u, c);
                }
                *cat.at_mut(v, d + c) = s / count;
            }
        }
        let s = cat.matmul(&p[4]).add_row(&p[5]).relu();
        let m = s.matmul(&p[6]).add_row(&p[7]).relu();
        let mut out = m.matmul(&p[8]).add_row(&p[9]);
        if let Some(sk) = skip {
            out = out.add(sk);
        }
        let eps = Dd::from_f64(1e-8);
        for r in 0..out.rows {
            let mut sq = Dd::ZERO;
            for c in 0..out.cols {
                sq = sq + out.at(r, c) * out.at(r, c);
            }
            let norm = sq.sqrt().max(eps);
            for c in 0..out.cols {
                *out.at_mut(r, c) = out.at(r, c) / norm;
            }
        }
        out
    }

    pub fn logit(&self) -> Dd {
        let p = &self.params;
        let za = self.encode(&self.xa_w, &p[1], None);
        let zb = self.encode(&self.xb_w, &p[3], Some(&self.xb_s));
        let n = Dd::from_f64(za.rows as f64);
        let mut logit = p[12].data[0];
        for c in 0..za.cols {
            let mut col = Dd::ZERO;
            for r in 0..za.rows {
                col = col + za.at(r, c) + zb.at(r, c);
            }
            logit = logit + col / (n * Dd::from_f64(2.0)) * p[11].data[c];
        }
        logit
    }

    /// The model with entry `e` of parameter `pi` shifted by exactly `delta`.
    pub fn perturbed(&self, pi: usize, e: usize, delta: f64) -> DdModel {
        let mut m = self.clone();
        let d = Dd::from_f64(delta);
        let (r, c) = (e / m.params[pi].cols, e % m.params[pi].cols);
        let (proj, feats) = match pi {
            0 => (&mut m.xa_w, &self.inputs.feat_a),
            2 => (&mut m.xb_w, &self.inputs.feat_b),
            10 => (&mut m.xb_s, &self.inputs.feat_b),
            _ => {
                m.params[pi].data[e] = m.params[pi].data[e] + d;
                return m;
            }
        };
        for i in 0..proj.rows {
            let v = proj.at(i, c) + feats.at(i, r) * d;
            *proj.at_mut(i, c) = v;
        }
        m
    }
}

/// Central difference of the BCE loss for one parameter entry.
pub fn central_difference(base: &DdModel, pi: usize, e: usize, eps: f64, label: f64) -> f64 {
    let up = base.perturbed(pi, e, eps).logit();
    let down = base.perturbed(pi, e, -eps).logit();
    // bce(z) = softplus(z) - y·z, and
    // softplus(z + d) - softplus(z) = ln1p(sigmoid(z)·expm1(d)).
    let d = (up - down).to_f64();
    let dloss = (sigmoid(down.to_f64()) * d.exp_m1()).ln_1p() - label * d;
    dloss / (2.0 * eps)
}
