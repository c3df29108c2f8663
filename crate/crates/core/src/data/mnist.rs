//! IDX-format MNIST and the left/right half-image views.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, ViewBatch};
use crate::autodiff::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MnistConfig {
    pub norm_mean: f64,
    pub norm_std: f64,
    pub split_col: usize,
    pub batch: usize,
}

impl Default for MnistConfig {
    fn default() -> Self {
        Self {
            norm_mean: 0.1307,
            norm_std: 0.3081,
            split_col: 14,
            batch: 256,
        }
    }
}

impl MnistConfig {
    pub fn normalize(&self, pixel: u8) -> f64 {
        (pixel as f64 / 255.0 - self.norm_mean) / self.norm_std
    }

    /// Inverse of [`MnistConfig::normalize`], in `[0, 1]` units (unclamped).
    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.norm_std + self.norm_mean
    }
}

/// Normalized images `[N, 1, 28, 28]` with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct MnistSplit {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| DataError::Truncated {
            what: what.into(),
            got: bytes.len(),
            need: at + 4,
        })
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<(), DataError> {
    let got = be_u32(bytes, 0, what)?;
    if got != expected {
        return Err(DataError::BadMagic {
            what: what.into(),
            expected,
            got,
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, len: usize, what: &str) -> Result<&'a [u8], DataError> {
    bytes
        .get(header..header + len)
        .ok_or_else(|| DataError::Truncated {
            what: what.into(),
            got: bytes.len(),
            need: header + len,
        })
}

/// Parses an IDX3 image file into normalized `[N, 1, rows, cols]`.
pub fn parse_idx_images(bytes: &[u8], cfg: &MnistConfig, what: &str) -> Result<Tensor, DataError> {
    check_magic(bytes, IMAGES_MAGIC, what)?;
    let n = be_u32(bytes, 4, what)? as usize;
    let rows = be_u32(bytes, 8, what)? as usize;
    let cols = be_u32(bytes, 12, what)? as usize;
    let pixels = payload(bytes, 16, n * rows * cols, what)?;
    let lut: Vec<f64> = (0..=255u8).map(|p| cfg.normalize(p)).collect();
    let values = pixels.iter().map(|&p| lut[p as usize]).collect();
    Ok(Tensor::new(vec![n, 1, rows, cols], values)?)
}

pub fn parse_idx_labels(bytes: &[u8], what: &str) -> Result<Vec<usize>, DataError> {
    check_magic(bytes, LABELS_MAGIC, what)?;
    let n = be_u32(bytes, 4, what)? as usize;
    let labels = payload(bytes, 8, n, what)?;
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(DataError::Shape {
            what: what.into(),
            detail: format!("label {bad} outside 0..9"),
        });
    }
    Ok(labels.iter().map(|&l| l as usize).collect())
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_mnist_idx(
    images: &Path,
    labels: &Path,
    cfg: &MnistConfig,
) -> Result<MnistSplit, DataError> {
    let img = parse_idx_images(&read(images)?, cfg, &images.display().to_string())?;
    let lab = parse_idx_labels(&read(labels)?, &labels.display().to_string())?;
    if img.shape()[0] != lab.len() {
        return Err(DataError::CountMismatch {
            images: img.shape()[0],
            labels: lab.len(),
        });
    }
    Ok(MnistSplit {
        images: img,
        labels: lab,
    })
}

pub fn mnist_paths(dir: &Path) -> [PathBuf; 4] {
    [TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS].map(|f| dir.join(f))
}

/// `(train, test)` from the four canonical file names in `dir`.
pub fn load_mnist_dir(dir: &Path, cfg: &MnistConfig) -> Result<(MnistSplit, MnistSplit), DataError> {
    let [ti, tl, vi, vl] = mnist_paths(dir);
    Ok((load_mnist_idx(&ti, &tl, cfg)?, load_mnist_idx(&vi, &vl, cfg)?))
}

/// Left columns `[0, split)` become `x`, the rest `y`.
pub fn split_vertical(
    images: &Tensor,
    labels: Option<Vec<usize>>,
    split: usize,
) -> Result<ViewBatch, DataError> {
    let s = images.shape();
    if s.len() != 4 || s[1] != 1 || split == 0 || split >= s[3] {
        return Err(DataError::Shape {
            what: "split_vertical".into(),
            detail: format!("images {s:?}, split column {split}"),
        });
    }
    let (n, h, w) = (s[0], s[2], s[3]);
    let mut xs = Vec::with_capacity(n * h * split);
    let mut ys = Vec::with_capacity(n * h * (w - split));
    for row in images.values().chunks_exact(w) {
        xs.extend_from_slice(&row[..split]);
        ys.extend_from_slice(&row[split..]);
    }
    ViewBatch::new(
        Tensor::new(vec![n, 1, h, split], xs)?,
        Tensor::new(vec![n, 1, h, w - split], ys)?,
        labels,
    )
}

/// Reassembles `x ‖ y` along the column axis.
pub fn join_vertical(x: &Tensor, y: &Tensor) -> Result<Tensor, DataError> {
    let (sx, sy) = (x.shape(), y.shape());
    if sx.len() != 4 || sy.len() != 4 || sx[..3] != sy[..3] {
        return Err(DataError::Shape {
            what: "join_vertical".into(),
            detail: format!("{sx:?} vs {sy:?}"),
        });
    }
    let (a, b) = (sx[3], sy[3]);
    let mut out = Vec::with_capacity(x.numel() + y.numel());
    for (l, r) in x.values().chunks_exact(a).zip(y.values().chunks_exact(b)) {
        out.extend_from_slice(l);
        out.extend_from_slice(r);
    }
    Ok(Tensor::new(vec![sx[0], sx[1], sx[2], a + b], out)?)
}
