//! Layer specifications and the encoder / predictor / probe networks.

mod builders;
pub mod checkpoint;
mod network;

pub use builders::{
    build_conv_encoder, build_linear, build_mlp, build_mlp_encoder, build_predictor,
    CONV_ENCODER_INPUT,
};
pub use network::{Bound, Layer, LayerSpec, Network};

pub use crate::autodiff::BatchNormMode as Mode;

use crate::autodiff::AutodiffError;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("layer {index} ({kind}) cannot follow shape {shape:?}: {detail}")]
    IncompatibleLayers {
        index: usize,
        kind: &'static str,
        shape: Vec<usize>,
        detail: String,
    },
    #[error("network expects per-sample input {expected:?}, got batch shape {got:?}")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("layer specs differ between networks")]
    SpecMismatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
