//! Paired context/target views for the three studies.

pub mod lorenz;
pub mod mnist;
pub mod sine;

pub use lorenz::{build_lorenz_dataset, integrate_lorenz, Integrator, LorenzConfig, LorenzDataset};
pub use mnist::{load_mnist_dir, load_mnist_idx, split_vertical, MnistConfig, MnistSplit};
pub use sine::{gen_sine_batch, SineConfig};

use std::path::PathBuf;

use crate::autodiff::{AutodiffError, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{what}: bad magic {got:#010x}, expected {expected:#010x}")]
    BadMagic {
        what: String,
        expected: u32,
        got: u32,
    },
    #[error("{what}: truncated ({got} bytes, need {need})")]
    Truncated { what: String, got: usize, need: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{what}: {detail}")]
    Shape { what: String, detail: String },
    #[error("integration produced a non-finite state at step {step}")]
    NonFinite { step: usize },
    #[error("cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// A minibatch (or whole split) of aligned context and target views.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewBatch {
    pub x: Tensor,
    pub y: Tensor,
    pub labels: Option<Vec<usize>>,
}

impl ViewBatch {
    pub fn new(x: Tensor, y: Tensor, labels: Option<Vec<usize>>) -> Result<Self, DataError> {
        let n = x.shape()[0];
        if y.shape()[0] != n || labels.as_ref().is_some_and(|l| l.len() != n) {
            return Err(DataError::Shape {
                what: "view batch".into(),
                detail: format!(
                    "x {:?}, y {:?}, {} labels",
                    x.shape(),
                    y.shape(),
                    labels.as_ref().map_or(0, Vec::len)
                ),
            });
        }
        Ok(Self { x, y, labels })
    }

    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.gather_rows(idx),
            y: self.y.gather_rows(idx),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Flattens each sample's target view to one row: `[N, prod(rest)]`.
    pub fn y_flat(&self) -> Tensor {
        let n = self.len();
        let d = self.y.row_len();
        self.y.clone().reshape(vec![n, d]).expect("same numel")
    }
}
