use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ExperimentError;
use crate::data::{LorenzConfig, MnistConfig, SineConfig};
use crate::eval::{ProbeConfig, ProbeKind};
use crate::jepa::ConstraintMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Sine,
    Lorenz,
    Mnist,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    BijepaExpressive,
    BijepaUnconstrained,
    BijepaRestrictive,
    Classic,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Self::BijepaExpressive,
        Self::BijepaUnconstrained,
        Self::BijepaRestrictive,
        Self::Classic,
    ];

    /// Classic uses the expressive constraints so the comparison isolates
    /// the backward branch.
    pub fn mode(self) -> ConstraintMode {
        match self {
            Self::BijepaExpressive | Self::Classic => ConstraintMode::Expressive,
            Self::BijepaUnconstrained => ConstraintMode::Unconstrained,
            Self::BijepaRestrictive => ConstraintMode::Restrictive,
        }
    }

    pub fn is_classic(self) -> bool {
        self == Self::Classic
    }
}

macro_rules! kebab_str {
    ($t:ty) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let v = serde_json::to_value(self).expect("unit variant");
                f.write_str(v.as_str().expect("string"))
            }
        }

        impl FromStr for $t {
            type Err = ExperimentError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                serde_json::from_value(Value::String(s.to_string())).map_err(|_| {
                    ExperimentError::Config(format!(
                        "unknown {} {s:?}",
                        stringify!($t).to_lowercase()
                    ))
                })
            }
        }
    };
}

kebab_str!(Experiment);
kebab_str!(Variant);

/// Extra settings for the sine study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineSettings {
    pub data: SineConfig,
    /// Held-out sequences the probes are fitted on.
    pub probe_train: usize,
    /// Held-out sequences the probes are scored on (one forecast row each).
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MnistSettings {
    pub data: MnistConfig,
    /// Use only this many (randomly chosen) training images everywhere.
    pub train_subset: Option<usize>,
    pub classifier: ProbeConfig,
    pub decoder: ProbeConfig,
    /// Number of test digits dumped as images.
    pub recon_count: usize,
}

/// Every effective hyperparameter of a run. Serialized verbatim into the
/// report, and the target of `--set key=value` overrides (dotted paths).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub alpha: f64,
    pub mode: ConstraintMode,
    pub lr: f64,
    pub weight_decay: f64,
    pub tau: f64,
    pub batch: usize,
    /// Optimizer steps. For MNIST an optional cap on top of `epochs`.
    pub steps: Option<usize>,
    pub epochs: Option<usize>,
    pub input_dim: usize,
    pub encoder_hidden: usize,
    pub embed_dim: usize,
    pub predictor_hidden: usize,
    /// Trailing window (steps) averaged into `final_train_loss`.
    pub loss_window: usize,
    pub probe: ProbeConfig,
    pub sine: Option<SineSettings>,
    pub lorenz: Option<LorenzConfig>,
    pub mnist: Option<MnistSettings>,
}

impl Hyperparams {
    pub fn defaults(experiment: Experiment, variant: Variant, alpha: f64) -> Self {
        let mode = variant.mode();
        let alpha = if variant.is_classic() { 1.0 } else { alpha };
        let probe = ProbeConfig::regression(0);
        let base = Self {
            alpha,
            mode,
            lr: 1e-3,
            weight_decay: mode.weight_decay(),
            tau: 0.995,
            batch: 64,
            steps: Some(2000),
            epochs: None,
            input_dim: 10,
            encoder_hidden: 64,
            embed_dim: 16,
            predictor_hidden: 64,
            loss_window: 50,
            probe,
            sine: None,
            lorenz: None,
            mnist: None,
        };
        match experiment {
            Experiment::Sine => Self {
                sine: Some(SineSettings {
                    data: SineConfig::default(),
                    probe_train: 8192,
                    test: 512,
                }),
                ..base
            },
            Experiment::Lorenz => Self {
                lr: 5e-4,
                steps: Some(3000),
                input_dim: 60,
                encoder_hidden: 128,
                embed_dim: 32,
                predictor_hidden: 128,
                lorenz: Some(LorenzConfig::default()),
                ..base
            },
            Experiment::Mnist => Self {
                tau: 0.99,
                batch: 256,
                steps: None,
                epochs: Some(10),
                input_dim: 392,
                encoder_hidden: 128,
                embed_dim: 64,
                predictor_hidden: 128,
                mnist: Some(MnistSettings {
                    data: MnistConfig::default(),
                    train_subset: None,
                    // At 1e-3 the linear probe is still improving after 10 epochs.
                    classifier: ProbeConfig { lr: 1e-2, ..ProbeConfig::mnist(ProbeKind::Linear, 0) },
                    decoder: ProbeConfig::mnist(ProbeKind::Mlp { hidden: 256 }, 0),
                    recon_count: 8,
                }),
                ..base
            },
        }
    }

    /// Applies one `key=value` override. `key` is a dotted path into the
    /// serialized form and must already exist; `value` is parsed as JSON,
    /// falling back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ExperimentError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| ExperimentError::Config(format!("override {assignment:?} is not key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut tree = serde_json::to_value(&*self).expect("hyperparams serialize");
        let mut slot = &mut tree;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| ExperimentError::Config(format!("unknown setting {key:?}")))?;
        }
        *slot = value;
        *self = serde_json::from_value(tree)
            .map_err(|e| ExperimentError::Config(format!("{key}={raw}: {e}")))?;
        Ok(())
    }

    pub fn validate(&self, experiment: Experiment, variant: Variant) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if variant == Variant::BijepaUnconstrained && experiment != Experiment::Sine {
            return bad(format!(
                "variant {variant} is only defined for the sine experiment; \
                 without layer norm and weight decay the {experiment} encoder has no stable reference"
            ));
        }
        if variant.is_classic() && self.alpha != 1.0 {
            return bad("the classic variant requires alpha = 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return bad(format!("invalid lr {} / weight_decay {}", self.lr, self.weight_decay));
        }
        if self.batch < 2 {
            return bad("batch must be at least 2".into());
        }
        if self.loss_window == 0 {
            return bad("loss_window must be positive".into());
        }
        match experiment {
            Experiment::Sine | Experiment::Lorenz if self.steps.is_none() => {
                bad(format!("{experiment} needs a step budget"))
            }
            Experiment::Mnist if self.epochs.is_none() && self.steps.is_none() => {
                bad("mnist needs epochs or steps".into())
            }
            _ => Ok(()),
        }
    }
}

/// What to run, as given on the command line.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub variant: Variant,
    /// Branch weight; ignored (forced to 1) for the classic variant.
    pub alpha: f64,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub mnist_dir: Option<PathBuf>,
    /// Shorthand for `--set steps=N`.
    pub steps: Option<usize>,
    pub overrides: Vec<String>,
}

impl RunConfig {
    pub fn new(experiment: Experiment, variant: Variant, seed: u64) -> Self {
        Self {
            experiment,
            variant,
            alpha: 0.5,
            seed,
            out_dir: None,
            mnist_dir: None,
            steps: None,
            overrides: Vec::new(),
        }
    }

    pub fn with_override(mut self, assignment: impl Into<String>) -> Self {
        self.overrides.push(assignment.into());
        self
    }

    /// Defaults for the experiment, then `steps`, then each override in order.
    pub fn resolve(&self) -> Result<Hyperparams, ExperimentError> {
        let mut hp = Hyperparams::defaults(self.experiment, self.variant, self.alpha);
        if let Some(s) = self.steps {
            hp.steps = Some(s);
        }
        for o in &self.overrides {
            hp.apply_override(o)?;
        }
        hp.validate(self.experiment, self.variant)?;
        Ok(hp)
    }
}

/// Probe seeds are fixed at resolution time from the run seed so the echo
/// in the report is complete.
pub(super) fn seed_probes(hp: &mut Hyperparams, probe_seed: u64) {
    hp.probe.seed = probe_seed;
    if let Some(m) = &mut hp.mnist {
        m.classifier.seed = probe_seed.wrapping_add(1);
        m.decoder.seed = probe_seed.wrapping_add(2);
    }
}
