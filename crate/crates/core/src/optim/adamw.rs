use serde::{Deserialize, Serialize};

use super::OptimError;
use crate::autodiff::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            ..Self::default()
        }
    }
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Per-parameter moments for a fixed, ordered list of parameters.
#[derive(Clone, Debug)]
pub struct AdamWState {
    config: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    shapes: Vec<Vec<usize>>,
    step_count: u64,
}

impl AdamWState {
    pub fn new(params: &[&Tensor], config: AdamWConfig) -> Self {
        Self {
            config,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
            step_count: 0,
        }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn num_params(&self) -> usize {
        self.shapes.len()
    }

    pub fn set_weight_decay(&mut self, lambda: f64) -> Result<(), OptimError> {
        if !(lambda >= 0.0) {
            return Err(OptimError::NegativeWeightDecay(lambda));
        }
        self.config.weight_decay = lambda;
        Ok(())
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One decoupled-decay Adam update using each parameter's grad slot.
    ///
    /// Every gradient is validated before anything is written, so a
    /// rejected step leaves parameters and moments untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<(), OptimError> {
        if params.len() != self.shapes.len() {
            return Err(OptimError::ParamCount {
                expected: self.shapes.len(),
                got: params.len(),
            });
        }
        for (index, p) in params.iter().enumerate() {
            if p.shape() != self.shapes[index].as_slice() {
                return Err(OptimError::ParamShape {
                    index,
                    expected: self.shapes[index].clone(),
                    got: p.shape().to_vec(),
                });
            }
            let g = p.grad().ok_or(OptimError::MissingGradient { index })?;
            if g.iter().any(|v| !v.is_finite()) {
                return Err(OptimError::NonFiniteGradient { index });
            }
        }

        self.step_count += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let g = p.grad().expect("checked").to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, theta) in p.values_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *theta -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *theta);
            }
        }
        Ok(())
    }
}
