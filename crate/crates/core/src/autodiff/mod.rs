//! Define-by-run reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every primitive as it executes. Calling
//! [`Graph::backward`] on a scalar node walks the record once in reverse
//! and leaves accumulated gradients on the leaves that asked for them.
//! The graph is single-use: it is rebuilt on every forward pass.
//!
//! ```
//! use bijepa::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::param(vec![1], vec![3.0]).unwrap());
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[6.0]);
//! ```

mod conv;
mod graph;
pub mod linalg;
mod loss;
mod norm;
mod tensor;

pub use conv::Conv2dGeometry;
pub use graph::{Graph, Var};
pub use norm::{BatchNormMode, RunningStats};
pub use tensor::Tensor;

/// Default epsilon for layer and batch normalization.
pub const NORM_EPS: f64 = 1e-5;

/// Default running-statistics momentum for batch normalization.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: label {label} out of range for {classes} classes")]
    LabelOutOfRange {
        op: &'static str,
        label: usize,
        classes: usize,
    },
    #[error("batch_norm2d: training mode needs at least two samples, got {0}")]
    BatchTooSmall(usize),
    #[error("row {row} has norm {norm:e}, too small to normalize")]
    DegenerateRow { row: usize, norm: f64 },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("graph already consumed by a previous backward pass")]
    GraphConsumed,
}
