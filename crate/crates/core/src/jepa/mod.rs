//! The BiJEPA training system and its classic single-predictor special case.
//!
//! Both prediction directions read the same `(x, y)` minibatch. Their
//! weighted losses are summed into one objective and differentiated once,
//! so gradients from the two branches accumulate in the shared online
//! encoder. The target encoder is only ever moved by the EMA update.

mod classic;
mod model;

pub use classic::classic_jepa_loss;
pub use model::{sphere_project, BiJepaModel, StepMetrics, DIVERGENCE_THRESHOLD, SPHERE_MIN_NORM};

use serde::{Deserialize, Serialize};

use crate::autodiff::AutodiffError;
use crate::nn::NnError;
use crate::optim::OptimError;

/// How embedding magnitudes are kept in check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintMode {
    /// No layer norm, no weight decay.
    Unconstrained,
    /// Layer norm plus weight decay.
    Expressive,
    /// Expressive plus projection of embeddings and predictions onto the
    /// unit sphere.
    Restrictive,
}

impl ConstraintMode {
    pub fn with_ln(self) -> bool {
        !matches!(self, Self::Unconstrained)
    }

    pub fn weight_decay(self) -> f64 {
        match self {
            Self::Unconstrained => 0.0,
            Self::Expressive | Self::Restrictive => 1e-4,
        }
    }

    pub fn projects(self) -> bool {
        matches!(self, Self::Restrictive)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum JepaError {
    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("a backward predictor is required when alpha < 1 and forbidden when alpha = 1")]
    PredictorMismatch,
    #[error("backward pass requested but the model has no backward predictor (alpha = 1)")]
    NoBackwardPredictor,
    #[error("online and target encoders differ in architecture")]
    EncoderMismatch,
    #[error("embedding row {row} has norm {norm:e}; cannot project onto the sphere")]
    DegenerateEmbedding { row: usize, norm: f64 },
    #[error("x has {x} rows but y has {y}")]
    BatchMismatch { x: usize, y: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Autodiff(AutodiffError),
}

impl From<AutodiffError> for JepaError {
    fn from(e: AutodiffError) -> Self {
        match e {
            AutodiffError::DegenerateRow { row, norm } => Self::DegenerateEmbedding { row, norm },
            e => Self::Autodiff(e),
        }
    }
}
