//! Lorenz-system trajectories, normalized with training-split statistics.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::{DataError, ViewBatch};
use crate::autodiff::Tensor;
use crate::nn::checkpoint;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    Rk4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorenzConfig {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub dt: f64,
    pub seq_len: usize,
    pub context: usize,
    pub init_range: (f64, f64),
    pub n_train: usize,
    pub n_probe: usize,
    pub n_test: usize,
    pub integrator: Integrator,
}

impl Default for LorenzConfig {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            dt: 0.01,
            seq_len: 40,
            context: 20,
            init_range: (-15.0, 15.0),
            n_train: 2000,
            n_probe: 1000,
            n_test: 20,
            integrator: Integrator::Euler,
        }
    }
}

pub type State = [f64; 3];

pub fn lorenz_derivative(s: State, cfg: &LorenzConfig) -> State {
    let [x, y, z] = s;
    [cfg.sigma * (y - x), x * (cfg.rho - z) - y, x * y - cfg.beta * z]
}

fn axpy(s: State, h: f64, d: State) -> State {
    [s[0] + h * d[0], s[1] + h * d[1], s[2] + h * d[2]]
}

pub fn lorenz_step(s: State, cfg: &LorenzConfig) -> State {
    let h = cfg.dt;
    match cfg.integrator {
        Integrator::Euler => axpy(s, h, lorenz_derivative(s, cfg)),
        Integrator::Rk4 => {
            let k1 = lorenz_derivative(s, cfg);
            let k2 = lorenz_derivative(axpy(s, h / 2.0, k1), cfg);
            let k3 = lorenz_derivative(axpy(s, h / 2.0, k2), cfg);
            let k4 = lorenz_derivative(axpy(s, h, k3), cfg);
            std::array::from_fn(|i| s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        }
    }
}

/// `n_steps` states starting at `init` (row 0 is `init` itself).
pub fn integrate_lorenz(
    cfg: &LorenzConfig,
    init: State,
    n_steps: usize,
) -> Result<Vec<State>, DataError> {
    let mut out = Vec::with_capacity(n_steps);
    let mut s = init;
    for step in 0..n_steps {
        if !s.iter().all(|v| v.is_finite()) {
            return Err(DataError::NonFinite { step });
        }
        out.push(s);
        s = lorenz_step(s, cfg);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LorenzDataset {
    /// Views are flattened time-major: `[N, steps * 3]`.
    pub train: ViewBatch,
    pub probe: ViewBatch,
    pub test: ViewBatch,
    pub mean: State,
    pub std: State,
}

fn sample_split<R: Rng + ?Sized>(
    cfg: &LorenzConfig,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<State>>, DataError> {
    let u = Uniform::new(cfg.init_range.0, cfg.init_range.1).map_err(|e| DataError::Shape {
        what: "lorenz init range".into(),
        detail: e.to_string(),
    })?;
    (0..n)
        .map(|_| {
            let init = [u.sample(rng), u.sample(rng), u.sample(rng)];
            integrate_lorenz(cfg, init, cfg.seq_len)
        })
        .collect()
}

fn to_views(trajs: &[Vec<State>], cfg: &LorenzConfig, mean: State, std: State) -> ViewBatch {
    let n = trajs.len();
    let (c, t) = (cfg.context, cfg.seq_len - cfg.context);
    let norm = |states: &[State]| -> Vec<f64> {
        states
            .iter()
            .flat_map(|s| (0..3).map(move |k| (s[k] - mean[k]) / std[k]))
            .collect()
    };
    let xs: Vec<f64> = trajs.iter().flat_map(|tr| norm(&tr[..c])).collect();
    let ys: Vec<f64> = trajs.iter().flat_map(|tr| norm(&tr[c..])).collect();
    ViewBatch::new(
        Tensor::new(vec![n, c * 3], xs).expect("sized"),
        Tensor::new(vec![n, t * 3], ys).expect("sized"),
        None,
    )
    .expect("aligned")
}

/// Per-coordinate mean and population standard deviation over every
/// state of every trajectory.
fn coordinate_stats(trajs: &[Vec<State>]) -> (State, State) {
    let count = trajs.iter().map(Vec::len).sum::<usize>() as f64;
    let mut mean = [0.0; 3];
    for s in trajs.iter().flatten() {
        (0..3).for_each(|k| mean[k] += s[k]);
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = [0.0; 3];
    for s in trajs.iter().flatten() {
        (0..3).for_each(|k| var[k] += (s[k] - mean[k]).powi(2));
    }
    (mean, var.map(|v| (v / count).sqrt()))
}

/// Train, probe and test splits drawn in that order from `rng`.
pub fn build_lorenz_dataset<R: Rng + ?Sized>(
    cfg: &LorenzConfig,
    rng: &mut R,
) -> Result<LorenzDataset, DataError> {
    if cfg.context == 0 || cfg.context >= cfg.seq_len {
        return Err(DataError::Shape {
            what: "lorenz split".into(),
            detail: format!("context {} of {} steps", cfg.context, cfg.seq_len),
        });
    }
    let train = sample_split(cfg, cfg.n_train, rng)?;
    let probe = sample_split(cfg, cfg.n_probe, rng)?;
    let test = sample_split(cfg, cfg.n_test, rng)?;
    let (mean, std) = coordinate_stats(&train);
    Ok(LorenzDataset {
        train: to_views(&train, cfg, mean, std),
        probe: to_views(&probe, cfg, mean, std),
        test: to_views(&test, cfg, mean, std),
        mean,
        std,
    })
}

impl LorenzDataset {
    /// Writes every split plus the statistics in the checkpoint container.
    pub fn save_cache(&self, path: &Path) -> Result<(), DataError> {
        let mut entries = Vec::new();
        for (name, b) in [("train", &self.train), ("probe", &self.probe), ("test", &self.test)] {
            entries.push((format!("{name}/ctx"), b.x.clone()));
            entries.push((format!("{name}/tgt"), b.y.clone()));
        }
        entries.push(("stats/mean".into(), Tensor::new(vec![3], self.mean.to_vec())?));
        entries.push(("stats/std".into(), Tensor::new(vec![3], self.std.to_vec())?));
        checkpoint::save(path, &entries).map_err(|e| DataError::Cache(e.to_string()))
    }

    pub fn load_cache(path: &Path) -> Result<Self, DataError> {
        let entries = checkpoint::load(path).map_err(|e| DataError::Cache(e.to_string()))?;
        let get = |name: &str| {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| DataError::Cache(format!("missing {name}")))
        };
        let split = |name: &str| -> Result<ViewBatch, DataError> {
            ViewBatch::new(get(&format!("{name}/ctx"))?, get(&format!("{name}/tgt"))?, None)
        };
        let stat = |name: &str| -> Result<State, DataError> {
            let t = get(name)?;
            t.values()
                .try_into()
                .map_err(|_| DataError::Cache(format!("{name} is not length 3")))
        };
        Ok(Self {
            train: split("train")?,
            probe: split("probe")?,
            test: split("test")?,
            mean: stat("stats/mean")?,
            std: stat("stats/std")?,
        })
    }
}
