//! AdamW with decoupled weight decay and the EMA target-network update.

mod adamw;
mod ema;

pub use adamw::{AdamWConfig, AdamWState};
pub use ema::{ema_update, EmaConfig};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("parameter {index} has no gradient")]
    MissingGradient { index: usize },
    #[error("parameter {index} has a non-finite gradient; step aborted")]
    NonFiniteGradient { index: usize },
    #[error("optimizer tracks {expected} parameters, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("parameter {index} has shape {got:?}, optimizer state has {expected:?}")]
    ParamShape {
        index: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("weight decay must be non-negative, got {0}")]
    NegativeWeightDecay(f64),
    #[error("EMA momentum must lie in [0, 1], got {0}")]
    TauOutOfRange(f64),
    #[error("target and online networks have different layer specs")]
    SpecMismatch,
}
