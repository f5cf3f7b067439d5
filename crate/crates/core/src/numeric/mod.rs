//! Dense numeric substrate: matrices, vector kernels, trainable parameters, a
//! reverse-mode tape, optimizers, a finite-difference checker and the tensor
//! file format.

mod gradcheck;
pub mod io;
mod matrix;
pub mod ops;
mod optim;
mod param;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use matrix::Matrix;
pub use optim::{Optimizer, OptimizerKind};
pub use param::{xavier_bound, ParamId, ParamStore, Parameter};
pub use tape::{Offsets, Tape, Var, PROB_CLAMP};

#[cfg(test)]
pub(crate) use tape::bce_term;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("{op}: shape mismatch (expected {expected:?}, found {found:?})")]
    Shape {
        op: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("index {index} out of bounds for length {len}")]
    OutOfBounds { index: usize, len: usize },
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
