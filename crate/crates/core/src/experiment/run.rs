use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{seed_probes, Experiment, Hyperparams, RunConfig, Variant};
use super::output::emit_outputs;
use super::ExperimentError;
use crate::data::sine::gen_sine_batch_with_params;
use crate::data::{build_lorenz_dataset, gen_sine_batch, load_mnist_dir, split_vertical, ViewBatch};
use crate::eval::{
    forecast_table, generative_decoder, linear_probe_classify, protocol_a, protocol_b,
    write_reconstructions, ForecastRecord,
};
use crate::jepa::{BiJepaModel, StepMetrics};
use crate::nn::{build_conv_encoder, build_mlp_encoder, build_predictor};
use crate::optim::{AdamWConfig, AdamWState, EmaConfig};
use crate::rng::{streams, Rng, SeedStreams};

/// Everything a run produced. All fields except `wall_time_secs` are a
/// pure function of the run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: Experiment,
    pub variant: Variant,
    pub seed: u64,
    pub hyperparams: Hyperparams,
    /// Mean total loss over the trailing `loss_window` steps.
    #[serde(with = "crate::serde_float")]
    pub final_train_loss: f64,
    pub loss_history: Vec<StepMetrics>,
    pub protocol_a_mse: Option<f64>,
    pub protocol_b_mse: Option<f64>,
    pub accuracy: Option<f64>,
    pub decoder_mse: Option<f64>,
    pub diverged: bool,
    pub forecast: Vec<ForecastRecord>,
    pub wall_time_secs: f64,
}

impl ExperimentReport {
    /// The report with the timing field zeroed, for determinism checks.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_secs: 0.0,
            ..self.clone()
        }
    }
}

/// Online encoder, `P_fwd` and (if `α < 1`) `P_bwd`, initialized in that
/// order from `rng`.
pub fn build_model(
    experiment: Experiment,
    hp: &Hyperparams,
    rng: &mut Rng,
) -> Result<BiJepaModel, ExperimentError> {
    let ln = hp.mode.with_ln();
    let mut online = match experiment {
        Experiment::Mnist => build_conv_encoder()?,
        _ => build_mlp_encoder(hp.input_dim, hp.encoder_hidden, hp.embed_dim, ln)?,
    };
    online.init_parameters(rng);
    let mut p_fwd = build_predictor(hp.embed_dim, hp.predictor_hidden, ln)?;
    p_fwd.init_parameters(rng);
    let p_bwd = if hp.alpha < 1.0 {
        let mut p = build_predictor(hp.embed_dim, hp.predictor_hidden, ln)?;
        p.init_parameters(rng);
        Some(p)
    } else {
        None
    };
    let ema = EmaConfig::new(hp.tau).map_err(|e| ExperimentError::Config(e.to_string()))?;
    Ok(BiJepaModel::new(online, p_fwd, p_bwd, hp.alpha, ema, hp.mode)?)
}

/// Reshuffled passes over `n` rows.
struct Batches {
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
}

impl Batches {
    fn new(n: usize, batch: usize) -> Self {
        Self {
            order: (0..n).collect(),
            cursor: n,
            batch: batch.min(n),
        }
    }

    fn per_epoch(&self) -> usize {
        self.order.len() / self.batch
    }

    /// Next full batch; a short remainder at the end of a pass is dropped
    /// (batch-norm needs more than one sample).
    fn next(&mut self, rng: &mut Rng) -> Vec<usize> {
        if self.cursor + self.batch > self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let idx = self.order[self.cursor..self.cursor + self.batch].to_vec();
        self.cursor += self.batch;
        idx
    }
}

struct Trainer<'a> {
    model: BiJepaModel,
    opt: AdamWState,
    history: Vec<StepMetrics>,
    observe: &'a mut dyn FnMut(&StepMetrics),
}

impl Trainer<'_> {
    /// Returns `false` once training has to stop.
    fn step(&mut self, b: &ViewBatch) -> Result<bool, ExperimentError> {
        let m = self.model.train_step(&mut self.opt, &b.x, &b.y)?;
        (self.observe)(&m);
        let halted = m.halted;
        self.history.push(m);
        Ok(!halted)
    }
}

struct Evaluation {
    protocol_a_mse: Option<f64>,
    protocol_b_mse: Option<f64>,
    accuracy: Option<f64>,
    decoder_mse: Option<f64>,
    forecast: Vec<ForecastRecord>,
}

impl Evaluation {
    fn empty() -> Self {
        Self {
            protocol_a_mse: None,
            protocol_b_mse: None,
            accuracy: None,
            decoder_mse: None,
            forecast: Vec::new(),
        }
    }
}

fn regression_protocols(
    model: &BiJepaModel,
    hp: &Hyperparams,
    probe_train: &ViewBatch,
    test: &ViewBatch,
) -> Result<Evaluation, ExperimentError> {
    let a = protocol_a(model, probe_train, test, &hp.probe)?;
    let b = protocol_b(model, probe_train, test, &hp.probe)?;
    Ok(Evaluation {
        protocol_a_mse: a.mse,
        protocol_b_mse: b.mse,
        forecast: forecast_table(&test.y_flat(), &a.predictions, &b.predictions),
        ..Evaluation::empty()
    })
}

fn train_sine(
    t: &mut Trainer<'_>,
    hp: &Hyperparams,
    streams: &SeedStreams,
) -> Result<Evaluation, ExperimentError> {
    let s = hp.sine.as_ref().ok_or_else(|| ExperimentError::Config("missing sine settings".into()))?;
    let data = crate::data::SineConfig {
        batch: hp.batch,
        ..s.data.clone()
    };
    let mut rng = streams.stream(streams::DATA);
    for _ in 0..hp.steps.unwrap_or(0) {
        if !t.step(&gen_sine_batch(&data, &mut rng))? {
            return Ok(Evaluation::empty());
        }
    }
    let mut eval_rng = streams.stream(streams::EVAL);
    let (probe_train, _) = gen_sine_batch_with_params(&data, s.probe_train, &mut eval_rng);
    let (test, _) = gen_sine_batch_with_params(&data, s.test, &mut eval_rng);
    regression_protocols(&t.model, hp, &probe_train, &test)
}

fn train_lorenz(
    t: &mut Trainer<'_>,
    hp: &Hyperparams,
    streams: &SeedStreams,
) -> Result<Evaluation, ExperimentError> {
    let cfg = hp.lorenz.as_ref().ok_or_else(|| ExperimentError::Config("missing lorenz settings".into()))?;
    let mut rng = streams.stream(streams::DATA);
    let ds = build_lorenz_dataset(cfg, &mut rng)?;
    let mut batches = Batches::new(ds.train.len(), hp.batch);
    for _ in 0..hp.steps.unwrap_or(0) {
        let idx = batches.next(&mut rng);
        if !t.step(&ds.train.select(&idx))? {
            return Ok(Evaluation::empty());
        }
    }
    regression_protocols(&t.model, hp, &ds.probe, &ds.test)
}

fn train_mnist(
    t: &mut Trainer<'_>,
    hp: &Hyperparams,
    cfg: &RunConfig,
    streams: &SeedStreams,
) -> Result<Evaluation, ExperimentError> {
    let m = hp.mnist.as_ref().ok_or_else(|| ExperimentError::Config("missing mnist settings".into()))?;
    let dir = cfg.mnist_dir.as_ref().ok_or_else(|| {
        ExperimentError::Config("mnist needs --mnist-dir or BIJEPA_MNIST_DIR".into())
    })?;
    let mut rng = streams.stream(streams::DATA);
    let (train, test) = load_mnist_dir(dir, &m.data)?;
    let mut train = split_vertical(&train.images, Some(train.labels), m.data.split_col)?;
    let test = split_vertical(&test.images, Some(test.labels), m.data.split_col)?;
    if let Some(n) = m.train_subset.filter(|&n| n < train.len()) {
        let mut idx: Vec<usize> = (0..train.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(n);
        idx.sort_unstable();
        train = train.select(&idx);
    }

    let mut batches = Batches::new(train.len(), hp.batch);
    let budget = match (hp.epochs, hp.steps) {
        (Some(e), Some(s)) => (e * batches.per_epoch()).min(s),
        (Some(e), None) => e * batches.per_epoch(),
        (None, Some(s)) => s,
        (None, None) => 0,
    };
    for _ in 0..budget {
        let idx = batches.next(&mut rng);
        if !t.step(&train.select(&idx))? {
            return Ok(Evaluation::empty());
        }
    }

    let cls = linear_probe_classify(&t.model, &train, &test, &m.classifier)?;
    let dec = generative_decoder(&t.model, &train, &test, &m.data, &m.decoder)?;
    if let Some(out) = &cfg.out_dir {
        std::fs::create_dir_all(out).map_err(|source| ExperimentError::Io {
            path: out.clone(),
            source,
        })?;
        write_reconstructions(out, &test.x, &test.y, &dec.predictions, m.recon_count, &m.data)?;
    }
    Ok(Evaluation {
        accuracy: cls.accuracy,
        decoder_mse: dec.mse,
        ..Evaluation::empty()
    })
}

pub fn run(cfg: &RunConfig) -> Result<ExperimentReport, ExperimentError> {
    run_with(cfg, &mut |_| {})
}

/// Like [`run`], calling `observe` after every training step.
pub fn run_with(
    cfg: &RunConfig,
    observe: &mut dyn FnMut(&StepMetrics),
) -> Result<ExperimentReport, ExperimentError> {
    let start = Instant::now();
    let mut hp = cfg.resolve()?;
    let streams = SeedStreams::new(cfg.seed);
    seed_probes(&mut hp, streams.derive(streams::PROBE));

    let model = build_model(cfg.experiment, &hp, &mut streams.stream(streams::INIT))?;
    let opt = model.optimizer(AdamWConfig::new(hp.lr, hp.weight_decay));
    let mut trainer = Trainer {
        model,
        opt,
        history: Vec::new(),
        observe,
    };
    let eval = match cfg.experiment {
        Experiment::Sine => train_sine(&mut trainer, &hp, &streams)?,
        Experiment::Lorenz => train_lorenz(&mut trainer, &hp, &streams)?,
        Experiment::Mnist => train_mnist(&mut trainer, &hp, cfg, &streams)?,
    };

    let history = trainer.history;
    let window = &history[history.len().saturating_sub(hp.loss_window)..];
    let final_train_loss = if window.is_empty() {
        f64::NAN
    } else {
        window.iter().map(|m| m.total).sum::<f64>() / window.len() as f64
    };
    let report = ExperimentReport {
        experiment: cfg.experiment,
        variant: cfg.variant,
        seed: cfg.seed,
        final_train_loss,
        diverged: history.iter().any(|m| m.diverged),
        loss_history: history,
        protocol_a_mse: eval.protocol_a_mse,
        protocol_b_mse: eval.protocol_b_mse,
        accuracy: eval.accuracy,
        decoder_mse: eval.decoder_mse,
        forecast: eval.forecast,
        hyperparams: hp,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    if let Some(out) = &cfg.out_dir {
        emit_outputs(&report, out)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_each_pass_once() {
        let mut rng = crate::rng::from_seed(0);
        let mut b = Batches::new(10, 3);
        assert_eq!(b.per_epoch(), 3);
        let mut seen: Vec<usize> = (0..3).flat_map(|_| b.next(&mut rng)).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 9);
    }

    #[test]
    fn short_sine_run_is_deterministic() {
        let cfg = RunConfig {
            steps: Some(20),
            ..RunConfig::new(Experiment::Sine, Variant::BijepaExpressive, 1)
        }
        .with_override("probe.budget={\"steps\":20}")
        .with_override("sine.probe_train=256")
        .with_override("sine.test=32");
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a.without_timing(), b.without_timing());
        assert_eq!(a.loss_history.len(), 20);
        assert_eq!(a.forecast.len(), 32);
        assert!(a.protocol_b_mse.is_some() && a.accuracy.is_none());
        assert_eq!(a.hyperparams.probe.budget, crate::eval::ProbeBudget::Steps(20));
    }

    #[test]
    fn mnist_without_directory_is_a_config_error() {
        let cfg = RunConfig::new(Experiment::Mnist, Variant::BijepaExpressive, 0);
        assert!(run(&cfg).unwrap_err().is_config());
    }
}
