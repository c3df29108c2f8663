//! Binary greyscale (P5) dumps of normalized MNIST pixels.

use std::fs;
use std::path::Path;

use super::EvalError;
use crate::autodiff::Tensor;
use crate::data::mnist::join_vertical;
use crate::data::MnistConfig;

fn to_byte(v: f64, cfg: &MnistConfig) -> u8 {
    (cfg.denormalize(v) * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes a `width × height` image of normalized pixel values.
pub fn write_pgm(
    path: &Path,
    width: usize,
    height: usize,
    values: &[f64],
    cfg: &MnistConfig,
) -> Result<(), EvalError> {
    if values.len() != width * height {
        return Err(EvalError::Data(format!(
            "{} pixels for a {width}x{height} image",
            values.len()
        )));
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(values.iter().map(|&v| to_byte(v, cfg)));
    fs::write(path, bytes).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// For the first `count` samples writes three images: the left-half input
/// (`recon_XX_input.pgm`, 14 wide), the input completed with the generated
/// right half (`recon_XX.pgm`, 28 wide) and the true digit
/// (`recon_XX_truth.pgm`, 28 wide).
///
/// `x`, `y` are `[N, 1, 28, 14]`; `generated` is `[N, 392]`.
pub fn write_reconstructions(
    dir: &Path,
    x: &Tensor,
    y: &Tensor,
    generated: &Tensor,
    count: usize,
    cfg: &MnistConfig,
) -> Result<Vec<std::path::PathBuf>, EvalError> {
    let n = count.min(x.shape()[0]);
    let idx: Vec<usize> = (0..n).collect();
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let xs = x.gather_rows(&idx);
    let ys = y.gather_rows(&idx);
    let gen = generated
        .gather_rows(&idx)
        .reshape(ys.shape().to_vec())
        .map_err(|e| EvalError::Data(e.to_string()))?;
    let completed = join_vertical(&xs, &gen).map_err(|e| EvalError::Data(e.to_string()))?;
    let truth = join_vertical(&xs, &ys).map_err(|e| EvalError::Data(e.to_string()))?;
    let mut written = Vec::new();
    for i in 0..n {
        for (suffix, t, width) in [("_input", &xs, w), ("", &completed, 2 * w), ("_truth", &truth, 2 * w)] {
            let path = dir.join(format!("recon_{i:02}{suffix}.pgm"));
            write_pgm(&path, width, h, t.row(i), cfg)?;
            written.push(path);
        }
    }
    Ok(written)
}
