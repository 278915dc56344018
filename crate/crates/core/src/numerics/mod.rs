//! Dense matrices and the gradient tape used to train the model.

mod tape;
mod tensor;

pub use tape::{sigmoid, softplus, Gradients, Mode, Tape, Var};
pub use tensor::Tensor;

/// Default guard for row normalization.
pub const NORMALIZE_EPS: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: incompatible shapes {}x{} and {}x{}", left.0, left.1, right.0, right.1)]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("data length {len} does not match {rows}x{cols}")]
    Length { rows: usize, cols: usize, len: usize },
    #[error("ragged rows: expected {expected} columns, found {found}")]
    Ragged { expected: usize, found: usize },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("{0}")]
    Usage(String),
}
