//! Probes trained on frozen embeddings.
//!
//! Every probe consumes features that were computed once, up front, from
//! the frozen model, so no probe can reach the model's parameters.

mod pgm;
mod probe;

pub use pgm::{write_pgm, write_reconstructions};
pub use probe::{
    forecast_table, generative_decoder, linear_probe_classify, protocol_a, protocol_b,
    train_probe, ForecastRecord, ProbeBudget, ProbeConfig, ProbeKind, ProbeResult, ProbeTarget,
};

use std::path::PathBuf;

use crate::autodiff::AutodiffError;
use crate::jepa::JepaError;
use crate::nn::NnError;
use crate::optim::OptimError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("probe data: {0}")]
    Data(String),
    #[error("probe loss became non-finite at step {0}")]
    NonFinite(usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Jepa(#[from] JepaError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}
