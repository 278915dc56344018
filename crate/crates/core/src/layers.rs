//! Graph convolution, mean-aggregating SAGE convolution and a two-layer MLP.
//!
//! Parameters are plain tensors; `bind` registers them on a tape for one
//! forward pass. Weights use Glorot-uniform init, biases start at zero.

use rand::{Rng, RngCore};

use crate::numerics::{NumericsError, Tape, Tensor, Var};

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut dyn RngCore) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::new(fan_in, fan_out, data).expect("bounded init is finite")
}

fn shape_err(op: &'static str, left: (usize, usize), right: (usize, usize)) -> NumericsError {
    NumericsError::Shape { op, left, right }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnParams {
    /// `d_in × d_out`
    pub weight: Tensor,
    /// `1 × d_out`
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct GcnVars {
    pub weight: Var,
    pub bias: Var,
}

impl GcnParams {
    pub fn init(d_in: usize, d_out: usize, rng: &mut dyn RngCore) -> Self {
        Self {
            weight: glorot_uniform(d_in, d_out, rng),
            bias: Tensor::zeros(1, d_out),
        }
    }

    pub fn bind<'a>(&'a self, tape: &Tape<'a>) -> GcnVars {
        GcnVars {
            weight: tape.param(&self.weight),
            bias: tape.param(&self.bias),
        }
    }
}

/// `ReLU(norm_adj · h · W + b)`.
///
/// `h · W` is formed first since `d_out` is typically much smaller than
/// `d_in`.
pub fn gcn_forward(tape: &Tape<'_>, norm_adj: Var, h: Var, p: &GcnVars) -> Result<Var, NumericsError> {
    let (an, am) = tape.shape(norm_adj);
    let hs = tape.shape(h);
    if an != am || am != hs.0 {
        return Err(shape_err("gcn_forward", (an, am), hs));
    }
    let z = tape.matmul(h, p.weight)?;
    let z = tape.matmul(norm_adj, z)?;
    let z = tape.add_row(z, p.bias)?;
    tape.relu(z)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SageParams {
    /// `2·d_in × d_out`; the top half multiplies the node's own features,
    /// the bottom half the neighbour mean.
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct SageVars {
    pub weight: Var,
    pub bias: Var,
}

impl SageParams {
    pub fn init(d_in: usize, d_out: usize, rng: &mut dyn RngCore) -> Self {
        Self {
            weight: glorot_uniform(2 * d_in, d_out, rng),
            bias: Tensor::zeros(1, d_out),
        }
    }

    pub fn bind<'a>(&'a self, tape: &Tape<'a>) -> SageVars {
        SageVars {
            weight: tape.param(&self.weight),
            bias: tape.param(&self.bias),
        }
    }
}

/// `ReLU([h_v ‖ mean_{u ∈ N(v)} h_u] · W + b)` for every node `v`, with a
/// zero aggregate for isolated nodes. `neighbors[v]` must not contain `v`.
pub fn sage_forward<'a>(
    tape: &Tape<'a>,
    neighbors: &'a [Vec<usize>],
    h: Var,
    p: &SageVars,
) -> Result<Var, NumericsError> {
    let (n, d) = tape.shape(h);
    let ws = tape.shape(p.weight);
    if neighbors.len() != n || ws.0 != 2 * d {
        return Err(shape_err("sage_forward", (n, d), ws));
    }
    let agg = tape.neighbor_mean(h, neighbors)?;
    let cat = tape.concat_cols(h, agg)?;
    let z = tape.matmul(cat, p.weight)?;
    let z = tape.add_row(z, p.bias)?;
    tape.relu(z)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct MlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl MlpParams {
    pub fn init(d_in: usize, d_hidden: usize, d_out: usize, rng: &mut dyn RngCore) -> Self {
        Self {
            w1: glorot_uniform(d_in, d_hidden, rng),
            b1: Tensor::zeros(1, d_hidden),
            w2: glorot_uniform(d_hidden, d_out, rng),
            b2: Tensor::zeros(1, d_out),
        }
    }

    pub fn bind<'a>(&'a self, tape: &Tape<'a>) -> MlpVars {
        MlpVars {
            w1: tape.param(&self.w1),
            b1: tape.param(&self.b1),
            w2: tape.param(&self.w2),
            b2: tape.param(&self.b2),
        }
    }
}

/// `ReLU(h·W₁ + b₁)·W₂ + b₂`, row by row.
pub fn mlp_forward(tape: &Tape<'_>, h: Var, p: &MlpVars) -> Result<Var, NumericsError> {
    let z = tape.matmul(h, p.w1)?;
    let z = tape.add_row(z, p.b1)?;
    let z = tape.relu(z)?;
    let z = tape.matmul(z, p.w2)?;
    tape.add_row(z, p.b2)
}
