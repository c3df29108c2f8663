//! End-to-end runs: build the model, train, probe, and write artifacts.

mod config;
mod output;
mod run;
mod suite;

pub use config::{Experiment, Hyperparams, MnistSettings, RunConfig, SineSettings, Variant};
pub use output::{emit_outputs, read_report, LOSS_HEADER, FORECAST_HEADER};
pub use run::{build_model, run, run_with, ExperimentReport};
pub use suite::{run_suite, SuiteConfig, SuiteRow, SuiteSummary, SUITE_HEADER};

use std::path::PathBuf;

use crate::data::DataError;
use crate::eval::EvalError;
use crate::jepa::JepaError;
use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    /// Bad flags, overrides or combinations; nothing was run.
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Jepa(#[from] JepaError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

impl ExperimentError {
    pub fn is_config(&self) -> bool {
        matches!(self, Self::Config(_))
    }
}
