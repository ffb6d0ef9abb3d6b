//! Dense 64-bit matrices and a tape-based reverse-mode differentiation engine.
//!
//! Operations are recorded on a [`Tape`] in execution order. Calling
//! [`Tape::backward`] walks the tape in reverse and accumulates gradients for
//! every recorded value. The primitive set is deliberately small: dense
//! matrix algebra, elementwise nonlinearities, row gathers, segment sums over
//! edge lists, batch normalization, and a logits-based binary cross-entropy.

mod check;
mod matrix;
mod norm;
mod tape;

pub use check::{grad_check, grad_check_sampled};
pub use matrix::Tensor;
pub use norm::{batch_norm, BatchStats, BnMode, RunningStats, BN_EPS, BN_MOMENTUM};
pub use tape::{gate_normalize, sigmoid, BackwardFn, Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("buffer of length {len} cannot form a {rows}x{cols} tensor")]
    Buffer { rows: usize, cols: usize, len: usize },
    #[error("segment id {id} out of range for {segments} segments")]
    Segment { id: usize, segments: usize },
    #[error("row index {index} out of range for {rows} rows")]
    Index { index: usize, rows: usize },
    #[error("backward requires a scalar loss, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("batch normalization in train mode needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("batch normalization in eval mode before running statistics were set")]
    MissingRunningStats,
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;
