//! Noisy sinusoids `S(t) = sin(ωt + φ) + ε` on the integer grid `t = 0..T`.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::ViewBatch;
use crate::autodiff::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineConfig {
    pub seq_len: usize,
    /// Steps `0..context` form the context view; the rest the target.
    pub context: usize,
    pub omega_range: (f64, f64),
    pub phase_range: (f64, f64),
    pub noise_std: f64,
    pub batch: usize,
}

impl Default for SineConfig {
    fn default() -> Self {
        Self {
            seq_len: 20,
            context: 10,
            omega_range: (0.8, 1.2),
            phase_range: (0.0, std::f64::consts::TAU),
            noise_std: 0.05,
            batch: 64,
        }
    }
}

/// One sequence of length `seq_len`.
pub fn sine_sequence<R: Rng + ?Sized>(
    omega: f64,
    phase: f64,
    cfg: &SineConfig,
    rng: &mut R,
) -> Vec<f64> {
    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).expect("finite std");
    (0..cfg.seq_len)
        .map(|i| {
            let clean = (omega * i as f64 + phase).sin();
            if cfg.noise_std > 0.0 {
                clean + noise.sample(rng)
            } else {
                clean
            }
        })
        .collect()
}

/// Like [`gen_sine_batch`] but also returns each row's `(ω, φ)`.
pub fn gen_sine_batch_with_params<R: Rng + ?Sized>(
    cfg: &SineConfig,
    n: usize,
    rng: &mut R,
) -> (ViewBatch, Vec<(f64, f64)>) {
    let omega = Uniform::new(cfg.omega_range.0, cfg.omega_range.1).expect("valid omega range");
    let phase = Uniform::new(cfg.phase_range.0, cfg.phase_range.1).expect("valid phase range");
    let (c, t) = (cfg.context, cfg.seq_len - cfg.context);
    let mut xs = Vec::with_capacity(n * c);
    let mut ys = Vec::with_capacity(n * t);
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let (w, p) = (omega.sample(rng), phase.sample(rng));
        let s = sine_sequence(w, p, cfg, rng);
        xs.extend_from_slice(&s[..c]);
        ys.extend_from_slice(&s[c..]);
        params.push((w, p));
    }
    let batch = ViewBatch::new(
        Tensor::new(vec![n, c], xs).expect("sized"),
        Tensor::new(vec![n, t], ys).expect("sized"),
        None,
    )
    .expect("aligned");
    (batch, params)
}

/// A fresh batch of `cfg.batch` sequences split into context and target.
pub fn gen_sine_batch<R: Rng + ?Sized>(cfg: &SineConfig, rng: &mut R) -> ViewBatch {
    gen_sine_batch_with_params(cfg, cfg.batch, rng).0
}
