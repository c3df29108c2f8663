use super::graph::Var;
use super::{AutodiffError, Tensor};

pub(super) struct LayerNormCtx {
    pub x: Var,
    pub gamma: Var,
    pub beta: Var,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    dim: usize,
}

pub(super) fn layer_norm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
    vars: (Var, Var, Var),
) -> Result<(Tensor, LayerNormCtx), AutodiffError> {
    if x.rank() != 2 || x.shape()[1] == 0 {
        return Err(AutodiffError::ShapeMismatch {
            op: "layer_norm",
            detail: format!("expected [B, D>=1], got {:?}", x.shape()),
        });
    }
    let (rows, dim) = (x.shape()[0], x.shape()[1]);
    if gamma.shape() != [dim] || beta.shape() != [dim] {
        return Err(AutodiffError::ShapeMismatch {
            op: "layer_norm",
            detail: format!("affine {:?}/{:?} for width {dim}", gamma.shape(), beta.shape()),
        });
    }
    let mut xhat = Vec::with_capacity(rows * dim);
    let mut inv_std = Vec::with_capacity(rows);
    let mut out = Vec::with_capacity(rows * dim);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / dim as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        for (j, v) in row.iter().enumerate() {
            let h = (v - mean) * is;
            xhat.push(h);
            out.push(gamma.values()[j] * h + beta.values()[j]);
        }
    }
    let (x, gamma, beta) = vars;
    Ok((
        Tensor::new(vec![rows, dim], out)?,
        LayerNormCtx {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            dim,
        },
    ))
}

pub(super) fn layer_norm_backward(
    ctx: &LayerNormCtx,
    gamma: &Tensor,
    g: &[f64],
) -> Vec<(Var, Vec<f64>)> {
    let d = ctx.dim;
    let n = d as f64;
    let mut dx = vec![0.0; g.len()];
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    for (r, &is) in ctx.inv_std.iter().enumerate() {
        let span = r * d..(r + 1) * d;
        let (gr, hr) = (&g[span.clone()], &ctx.xhat[span.clone()]);
        let mut sum_dh = 0.0;
        let mut sum_dh_h = 0.0;
        for j in 0..d {
            let dh = gr[j] * gamma.values()[j];
            sum_dh += dh;
            sum_dh_h += dh * hr[j];
            dgamma[j] += gr[j] * hr[j];
            dbeta[j] += gr[j];
        }
        for j in 0..d {
            let dh = gr[j] * gamma.values()[j];
            dx[r * d + j] = is / n * (n * dh - sum_dh - hr[j] * sum_dh_h);
        }
    }
    vec![(ctx.x, dx), (ctx.gamma, dgamma), (ctx.beta, dbeta)]
}

/// Whether batch normalization uses batch or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchNormMode {
    Train,
    Eval,
}

/// Per-channel running mean and variance.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
}

impl RunningStats {
    pub fn new(channels: usize, momentum: f64) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum,
        }
    }
}

pub(super) struct BatchNormCtx {
    pub x: Var,
    pub gamma: Var,
    pub beta: Var,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_stats: bool,
    channels: usize,
    plane: usize,
}

pub(super) fn batch_norm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &mut RunningStats,
    mode: BatchNormMode,
    eps: f64,
    vars: (Var, Var, Var),
) -> Result<(Tensor, BatchNormCtx), AutodiffError> {
    if x.rank() != 4 {
        return Err(AutodiffError::ShapeMismatch {
            op: "batch_norm2d",
            detail: format!("expected [B, C, H, W], got {:?}", x.shape()),
        });
    }
    let [b, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    if gamma.shape() != [c] || beta.shape() != [c] || stats.mean.len() != c {
        return Err(AutodiffError::ShapeMismatch {
            op: "batch_norm2d",
            detail: format!("{c} channels vs affine {:?}", gamma.shape()),
        });
    }
    let plane = h * w;
    let count = b * plane;
    let xv = x.values();
    let mut inv_std = vec![0.0; c];
    let mut mean = vec![0.0; c];
    match mode {
        BatchNormMode::Train => {
            if b < 2 {
                return Err(AutodiffError::BatchTooSmall(b));
            }
            for ch in 0..c {
                let mut s = 0.0;
                for n in 0..b {
                    let base = (n * c + ch) * plane;
                    s += xv[base..base + plane].iter().sum::<f64>();
                }
                let m = s / count as f64;
                let mut v = 0.0;
                for n in 0..b {
                    let base = (n * c + ch) * plane;
                    v += xv[base..base + plane]
                        .iter()
                        .map(|x| (x - m) * (x - m))
                        .sum::<f64>();
                }
                let biased = v / count as f64;
                mean[ch] = m;
                inv_std[ch] = 1.0 / (biased + eps).sqrt();
                // Running variance uses the unbiased estimate.
                let unbiased = if count > 1 { v / (count - 1) as f64 } else { biased };
                let mo = stats.momentum;
                stats.mean[ch] = (1.0 - mo) * stats.mean[ch] + mo * m;
                stats.var[ch] = (1.0 - mo) * stats.var[ch] + mo * unbiased;
            }
        }
        BatchNormMode::Eval => {
            for ch in 0..c {
                mean[ch] = stats.mean[ch];
                inv_std[ch] = 1.0 / (stats.var[ch] + eps).sqrt();
            }
        }
    }
    let mut xhat = vec![0.0; xv.len()];
    let mut out = vec![0.0; xv.len()];
    for n in 0..b {
        for ch in 0..c {
            let base = (n * c + ch) * plane;
            let (gm, bt) = (gamma.values()[ch], beta.values()[ch]);
            for i in base..base + plane {
                let hv = (xv[i] - mean[ch]) * inv_std[ch];
                xhat[i] = hv;
                out[i] = gm * hv + bt;
            }
        }
    }
    let (x, gamma, beta) = vars;
    Ok((
        Tensor::new(vec![b, c, h, w], out)?,
        BatchNormCtx {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats: mode == BatchNormMode::Train,
            channels: c,
            plane,
        },
    ))
}

pub(super) fn batch_norm_backward(
    ctx: &BatchNormCtx,
    gamma: &Tensor,
    g: &[f64],
) -> Vec<(Var, Vec<f64>)> {
    let (c, plane) = (ctx.channels, ctx.plane);
    let b = g.len() / (c * plane);
    let count = (b * plane) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for n in 0..b {
        for ch in 0..c {
            let base = (n * c + ch) * plane;
            for i in base..base + plane {
                dgamma[ch] += g[i] * ctx.xhat[i];
                dbeta[ch] += g[i];
            }
        }
    }
    let mut dx = vec![0.0; g.len()];
    for ch in 0..c {
        let gm = gamma.values()[ch];
        let is = ctx.inv_std[ch];
        // Σ dxhat = γ·Σg and Σ dxhat·xhat = γ·dγ over the channel.
        let (sum_dh, sum_dh_h) = (gm * dbeta[ch], gm * dgamma[ch]);
        for n in 0..b {
            let base = (n * c + ch) * plane;
            for i in base..base + plane {
                let dh = g[i] * gm;
                dx[i] = if ctx.batch_stats {
                    is / count * (count * dh - sum_dh - ctx.xhat[i] * sum_dh_h)
                } else {
                    dh * is
                };
            }
        }
    }
    vec![(ctx.x, dx), (ctx.gamma, dgamma), (ctx.beta, dbeta)]
}
