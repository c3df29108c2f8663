use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::autodiff::{Graph, Tensor};
use crate::data::{MnistConfig, ViewBatch};
use crate::jepa::BiJepaModel;
use crate::nn::{build_linear, build_mlp, Network};
use crate::optim::{AdamWConfig, AdamWState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProbeKind {
    Linear,
    /// One ReLU hidden layer.
    Mlp { hidden: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeBudget {
    Steps(usize),
    Epochs(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub kind: ProbeKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub budget: ProbeBudget,
    pub batch: usize,
    pub seed: u64,
}

impl ProbeConfig {
    /// Linear regression probe: 2000 AdamW steps at lr 1e-3, no decay.
    pub fn regression(seed: u64) -> Self {
        Self {
            kind: ProbeKind::Linear,
            lr: 1e-3,
            weight_decay: 0.0,
            budget: ProbeBudget::Steps(2000),
            batch: 256,
            seed,
        }
    }

    /// 10-epoch MNIST probe of the given kind.
    pub fn mnist(kind: ProbeKind, seed: u64) -> Self {
        Self {
            kind,
            lr: 1e-3,
            weight_decay: 0.0,
            budget: ProbeBudget::Epochs(10),
            batch: 256,
            seed,
        }
    }

    fn build(&self, input: usize, output: usize) -> Result<Network, EvalError> {
        let mut net = match self.kind {
            ProbeKind::Linear => build_linear(input, output)?,
            ProbeKind::Mlp { hidden } => build_mlp(&[input, hidden, output])?,
        };
        net.init_from_seed(self.seed);
        Ok(net)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub mse: Option<f64>,
    pub accuracy: Option<f64>,
    /// Test-split outputs (regression values or class logits).
    pub predictions: Tensor,
    pub final_train_loss: f64,
}

pub enum ProbeTarget<'a> {
    Regression(&'a Tensor),
    Classes(&'a [usize]),
}

impl ProbeTarget<'_> {
    fn rows(&self) -> usize {
        match self {
            Self::Regression(t) => t.shape()[0],
            Self::Classes(l) => l.len(),
        }
    }
}

fn as_matrix(t: &Tensor) -> Tensor {
    let n = t.shape()[0];
    t.clone().reshape(vec![n, t.row_len()]).expect("same numel")
}

/// Trains `net` on `(features, target)` minibatches drawn by reshuffled
/// passes over the rows. Returns the last minibatch loss.
pub fn train_probe(
    net: &mut Network,
    features: &Tensor,
    target: ProbeTarget<'_>,
    cfg: &ProbeConfig,
) -> Result<f64, EvalError> {
    let n = features.shape()[0];
    if n == 0 || target.rows() != n {
        return Err(EvalError::Data(format!(
            "{n} feature rows, {} target rows",
            target.rows()
        )));
    }
    let batch = cfg.batch.clamp(1, n);
    let steps = match cfg.budget {
        ProbeBudget::Steps(s) => s,
        ProbeBudget::Epochs(e) => e * n.div_ceil(batch),
    };
    let mut rng = crate::rng::from_seed(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut opt = AdamWState::new(
        &net.params(),
        AdamWConfig::new(cfg.lr, cfg.weight_decay),
    );
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut last = f64::NAN;
    for step in 0..steps {
        if cursor >= n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + batch).min(n);
        let idx = &order[cursor..end];
        cursor = end;

        net.zero_grad();
        let mut g = Graph::new();
        let bound = net.bind(&mut g);
        let x = g.constant(features.gather_rows(idx));
        let out = net.forward(&mut g, x, &bound)?;
        let loss = match &target {
            ProbeTarget::Regression(t) => {
                let t = g.constant(t.gather_rows(idx));
                g.mse_loss(out, t)?
            }
            ProbeTarget::Classes(l) => {
                let labels: Vec<usize> = idx.iter().map(|&i| l[i]).collect();
                g.softmax_cross_entropy(out, &labels)?
            }
        };
        last = g.value(loss).item();
        if !last.is_finite() {
            return Err(EvalError::NonFinite(step));
        }
        g.backward(loss)?;
        net.collect_grads(&g, &bound)?;
        opt.step(&mut net.params_mut())?;
    }
    Ok(last)
}

fn mse(a: &Tensor, b: &Tensor) -> f64 {
    let sum: f64 = a.values().iter().zip(b.values()).map(|(p, q)| (p - q).powi(2)).sum();
    sum / a.numel() as f64
}

/// Fits a regression probe on `train_feats → train_y` and scores it on the
/// test split.
fn regression_probe(
    train_feats: &Tensor,
    train_y: &Tensor,
    test_feats: &Tensor,
    test_y: &Tensor,
    cfg: &ProbeConfig,
) -> Result<ProbeResult, EvalError> {
    let mut probe = cfg.build(train_feats.row_len(), train_y.row_len())?;
    let final_train_loss = train_probe(&mut probe, train_feats, ProbeTarget::Regression(train_y), cfg)?;
    let predictions = probe.predict_batched(test_feats, 1024)?;
    Ok(ProbeResult {
        mse: Some(mse(&predictions, test_y)),
        accuracy: None,
        predictions,
        final_train_loss,
    })
}

/// Probe on the context embedding `s_x`: what does the representation of
/// the context already contain about the target observation?
pub fn protocol_a(
    model: &BiJepaModel,
    train: &ViewBatch,
    test: &ViewBatch,
    cfg: &ProbeConfig,
) -> Result<ProbeResult, EvalError> {
    let ftr = as_matrix(&model.encode_for_inference(&train.x)?);
    let fte = as_matrix(&model.encode_for_inference(&test.x)?);
    regression_probe(&ftr, &train.y_flat(), &fte, &test.y_flat(), cfg)
}

/// Probe on the forward prediction `ŝ_y = P_fwd(s_x)`: has the predictor
/// learned the latent dynamics?
pub fn protocol_b(
    model: &BiJepaModel,
    train: &ViewBatch,
    test: &ViewBatch,
    cfg: &ProbeConfig,
) -> Result<ProbeResult, EvalError> {
    let ftr = model.predict_forward(&model.encode_for_inference(&train.x)?)?;
    let fte = model.predict_forward(&model.encode_for_inference(&test.x)?)?;
    regression_probe(&ftr, &train.y_flat(), &fte, &test.y_flat(), cfg)
}

fn labels_of(b: &ViewBatch) -> Result<&[usize], EvalError> {
    b.labels
        .as_deref()
        .ok_or_else(|| EvalError::Data("split has no labels".into()))
}

/// Classifier from precomputed features; accuracy on the test features.
pub fn classify_features(
    train_feats: &Tensor,
    train_labels: &[usize],
    test_feats: &Tensor,
    test_labels: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeResult, EvalError> {
    let mut probe = cfg.build(train_feats.row_len(), classes)?;
    let final_train_loss =
        train_probe(&mut probe, train_feats, ProbeTarget::Classes(train_labels), cfg)?;
    let predictions = probe.predict_batched(test_feats, 1024)?;
    let correct = (0..test_labels.len())
        .filter(|&i| {
            let row = predictions.row(i);
            let arg = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .expect("non-empty row");
            arg == test_labels[i]
        })
        .count();
    Ok(ProbeResult {
        mse: None,
        accuracy: Some(correct as f64 / test_labels.len().max(1) as f64),
        predictions,
        final_train_loss,
    })
}

/// Linear 10-way classifier on frozen left-half embeddings.
pub fn linear_probe_classify(
    model: &BiJepaModel,
    train: &ViewBatch,
    test: &ViewBatch,
    cfg: &ProbeConfig,
) -> Result<ProbeResult, EvalError> {
    let ftr = model.encode_for_inference(&train.x)?;
    let fte = model.encode_for_inference(&test.x)?;
    classify_features(&ftr, labels_of(train)?, &fte, labels_of(test)?, 10, cfg)
}

/// Decoder from left-half embeddings to right-half pixels.
///
/// Trained on normalized pixels; the reported MSE is converted to `[0, 1]`
/// pixel units. Predictions stay normalized.
pub fn generative_decoder(
    model: &BiJepaModel,
    train: &ViewBatch,
    test: &ViewBatch,
    mnist: &MnistConfig,
    cfg: &ProbeConfig,
) -> Result<ProbeResult, EvalError> {
    let ftr = model.encode_for_inference(&train.x)?;
    let fte = model.encode_for_inference(&test.x)?;
    let mut r = regression_probe(&ftr, &train.y_flat(), &fte, &test.y_flat(), cfg)?;
    r.mse = r.mse.map(|m| m * mnist.norm_std * mnist.norm_std);
    Ok(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub sample: usize,
    pub truth: f64,
    pub proto_a: f64,
    pub proto_b: f64,
}

/// One-step forecasts: the first target coordinate of each test sample
/// against the two probes' predictions of it.
pub fn forecast_table(truth: &Tensor, proto_a: &Tensor, proto_b: &Tensor) -> Vec<ForecastRecord> {
    (0..truth.shape()[0])
        .map(|i| ForecastRecord {
            sample: i,
            truth: truth.row(i)[0],
            proto_a: proto_a.row(i)[0],
            proto_b: proto_b.row(i)[0],
        })
        .collect()
}
