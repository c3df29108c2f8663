use serde::{Deserialize, Serialize};

use super::OptimError;
use crate::nn::Network;

/// Momentum of the target-network moving average.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmaConfig {
    tau: f64,
}

impl EmaConfig {
    pub fn new(tau: f64) -> Result<Self, OptimError> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(OptimError::TauOutOfRange(tau));
        }
        Ok(Self { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// `target ← τ·target + (1 − τ)·online`, parameter by parameter.
///
/// Batch-norm running statistics are buffers, not parameters, and are
/// left to each network's own forward passes.
pub fn ema_update(target: &mut Network, online: &Network, cfg: EmaConfig) -> Result<(), OptimError> {
    if target.specs() != online.specs() {
        return Err(OptimError::SpecMismatch);
    }
    let tau = cfg.tau;
    for (t, o) in target.params_mut().into_iter().zip(online.params()) {
        for (tv, ov) in t.values_mut().iter_mut().zip(o.values()) {
            *tv = tau * *tv + (1.0 - tau) * ov;
        }
    }
    Ok(())
}
