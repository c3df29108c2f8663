use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::{Mode, NnError};
use crate::autodiff::{
    Conv2dGeometry, Graph, RunningStats, Tensor, Var, BN_MOMENTUM, NORM_EPS,
};

/// One layer of a sequential network, by kind and size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Linear {
        input: usize,
        output: usize,
    },
    LayerNorm {
        dim: usize,
    },
    Relu,
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm2d {
        channels: usize,
    },
    Flatten,
}

impl LayerSpec {
    fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::LayerNorm { .. } => "layer_norm",
            LayerSpec::Relu => "relu",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::BatchNorm2d { .. } => "batch_norm2d",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// Per-sample output shape, or why the layer does not fit.
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Linear { input: i, output } => match input {
                [d] if *d == i => Ok(vec![output]),
                _ => Err(format!("expects [{i}]")),
            },
            LayerSpec::LayerNorm { dim } => match input {
                [d] if *d == dim => Ok(vec![dim]),
                _ => Err(format!("expects [{dim}]")),
            },
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => match input {
                [c, h, w] if *c == in_channels => {
                    let geom = Conv2dGeometry { stride, padding };
                    match (geom.output_len(*h, kernel), geom.output_len(*w, kernel)) {
                        (Some(oh), Some(ow)) => Ok(vec![out_channels, oh, ow]),
                        _ => Err("kernel larger than padded input".into()),
                    }
                }
                _ => Err(format!("expects [{in_channels}, H, W]")),
            },
            LayerSpec::BatchNorm2d { channels } => match input {
                [c, _, _] if *c == channels => Ok(input.to_vec()),
                _ => Err(format!("expects [{channels}, H, W]")),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

/// Instantiated layer holding its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Linear {
        weight: Tensor,
        bias: Tensor,
    },
    LayerNorm {
        gamma: Tensor,
        beta: Tensor,
    },
    Relu,
    Conv2d {
        kernel: Tensor,
        bias: Tensor,
        geometry: Conv2dGeometry,
    },
    BatchNorm2d {
        gamma: Tensor,
        beta: Tensor,
        stats: RunningStats,
    },
    Flatten,
}

fn param(shape: &[usize], fill: f64) -> Tensor {
    let mut t = Tensor::full(shape, fill);
    t.set_requires_grad(true);
    t
}

impl Layer {
    fn from_spec(spec: &LayerSpec) -> Self {
        match *spec {
            LayerSpec::Linear { input, output } => Layer::Linear {
                weight: param(&[input, output], 0.0),
                bias: param(&[output], 0.0),
            },
            LayerSpec::LayerNorm { dim } => Layer::LayerNorm {
                gamma: param(&[dim], 1.0),
                beta: param(&[dim], 0.0),
            },
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => Layer::Conv2d {
                kernel: param(&[out_channels, in_channels, kernel, kernel], 0.0),
                bias: param(&[out_channels], 0.0),
                geometry: Conv2dGeometry { stride, padding },
            },
            LayerSpec::BatchNorm2d { channels } => Layer::BatchNorm2d {
                gamma: param(&[channels], 1.0),
                beta: param(&[channels], 0.0),
                stats: RunningStats::new(channels, BN_MOMENTUM),
            },
            LayerSpec::Flatten => Layer::Flatten,
        }
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Layer::Linear { weight, bias } => vec![("weight", weight), ("bias", bias)],
            Layer::LayerNorm { gamma, beta } | Layer::BatchNorm2d { gamma, beta, .. } => {
                vec![("gamma", gamma), ("beta", beta)]
            }
            Layer::Conv2d { kernel, bias, .. } => vec![("weight", kernel), ("bias", bias)],
            Layer::Relu | Layer::Flatten => vec![],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Linear { weight, bias } => vec![weight, bias],
            Layer::LayerNorm { gamma, beta } | Layer::BatchNorm2d { gamma, beta, .. } => {
                vec![gamma, beta]
            }
            Layer::Conv2d { kernel, bias, .. } => vec![kernel, bias],
            Layer::Relu | Layer::Flatten => vec![],
        }
    }
}

/// Graph handles for a network's parameters within one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Sequential stack of layers with a fixed per-sample input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    specs: Vec<LayerSpec>,
    layers: Vec<Layer>,
    mode: Mode,
}

impl Network {
    /// Validates the shape chain and allocates parameters
    /// (weights zero, norm gains one) in training mode.
    pub fn new(input_shape: Vec<usize>, specs: Vec<LayerSpec>) -> Result<Self, NnError> {
        let mut shape = input_shape.clone();
        for (index, spec) in specs.iter().enumerate() {
            shape = spec
                .output_shape(&shape)
                .map_err(|detail| NnError::IncompatibleLayers {
                    index,
                    kind: spec.kind(),
                    shape: shape.clone(),
                    detail,
                })?;
        }
        let layers = specs.iter().map(Layer::from_spec).collect();
        Ok(Self {
            input_shape,
            output_shape: shape,
            specs,
            layers,
            mode: Mode::Train,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn has_layer_norm(&self) -> bool {
        self.specs
            .iter()
            .any(|s| matches!(s, LayerSpec::LayerNorm { .. }))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| l.params().into_iter().map(|(_, t)| t))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.params()
                    .into_iter()
                    .map(move |(n, t)| (format!("layers.{i}.{n}"), t))
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    /// Marks every parameter as (non-)trainable; frozen parameters never
    /// carry a gradient.
    pub fn set_trainable(&mut self, trainable: bool) {
        for p in self.params_mut() {
            p.set_requires_grad(trainable);
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.clear_grad();
        }
    }

    /// Fan-in uniform weights, zero biases, unit gains.
    pub fn init_parameters<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for layer in &mut self.layers {
            match layer {
                Layer::Linear { weight, bias } => {
                    fill_fan_in(weight, weight.shape()[0], rng);
                    bias.values_mut().fill(0.0);
                }
                Layer::Conv2d { kernel, bias, .. } => {
                    let fan_in = kernel.shape()[1..].iter().product();
                    fill_fan_in(kernel, fan_in, rng);
                    bias.values_mut().fill(0.0);
                }
                Layer::LayerNorm { gamma, beta } | Layer::BatchNorm2d { gamma, beta, .. } => {
                    gamma.values_mut().fill(1.0);
                    beta.values_mut().fill(0.0);
                }
                Layer::Relu | Layer::Flatten => {}
            }
            if let Layer::BatchNorm2d { stats, .. } = layer {
                *stats = RunningStats::new(stats.mean.len(), stats.momentum);
            }
        }
    }

    /// Seeded variant of [`Network::init_parameters`].
    pub fn init_from_seed(&mut self, seed: u64) {
        self.init_parameters(&mut crate::rng::from_seed(seed));
    }

    /// Copies parameter values and running statistics from `src`.
    pub fn clone_from_network(&mut self, src: &Network) -> Result<(), NnError> {
        if self.specs != src.specs || self.input_shape != src.input_shape {
            return Err(NnError::SpecMismatch);
        }
        for (dst, s) in self.layers.iter_mut().zip(&src.layers) {
            for (d, p) in dst.params_mut().into_iter().zip(s.params()) {
                d.values_mut().copy_from_slice(p.1.values());
                d.clear_grad();
            }
            if let (Layer::BatchNorm2d { stats: d, .. }, Layer::BatchNorm2d { stats: s, .. }) =
                (dst, s)
            {
                *d = s.clone();
            }
        }
        Ok(())
    }

    /// Records every parameter on `g`.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let vars = self
            .params()
            .into_iter()
            .map(|p| {
                if p.requires_grad() {
                    g.leaf(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Moves gradients accumulated on `g` into the parameters' grad slots.
    pub fn collect_grads(&mut self, g: &Graph, bound: &Bound) -> Result<(), NnError> {
        for (p, v) in self.params_mut().into_iter().zip(&bound.vars) {
            if let Some(grad) = g.grad(*v) {
                p.accumulate_grad(grad)?;
            }
        }
        Ok(())
    }

    fn check_input(&self, batch_shape: &[usize]) -> Result<(), NnError> {
        if batch_shape.len() != self.input_shape.len() + 1 || batch_shape[1..] != self.input_shape[..]
        {
            return Err(NnError::InputShape {
                expected: self.input_shape.clone(),
                got: batch_shape.to_vec(),
            });
        }
        Ok(())
    }

    /// Records a forward pass. Training mode updates batch-norm running
    /// statistics.
    pub fn forward(&mut self, g: &mut Graph, x: Var, bound: &Bound) -> Result<Var, NnError> {
        self.check_input(g.shape(x))?;
        let mode = self.mode;
        let mut h = x;
        let mut vars = bound.vars.iter().copied();
        let mut next = || vars.next().expect("bound matches network");
        for layer in &mut self.layers {
            h = match layer {
                Layer::Linear { .. } => {
                    let (w, b) = (next(), next());
                    g.linear(h, w, b)?
                }
                Layer::LayerNorm { .. } => {
                    let (gm, bt) = (next(), next());
                    g.layer_norm(h, gm, bt, NORM_EPS)?
                }
                Layer::Relu => g.relu(h),
                Layer::Conv2d { geometry, .. } => {
                    let (k, b) = (next(), next());
                    g.conv2d(h, k, b, *geometry)?
                }
                Layer::BatchNorm2d { stats, .. } => {
                    let (gm, bt) = (next(), next());
                    g.batch_norm2d(h, gm, bt, stats, mode, NORM_EPS)?
                }
                Layer::Flatten => g.flatten(h)?,
            };
        }
        Ok(h)
    }

    /// Gradient-free forward pass using running statistics.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let mut frozen = self.clone();
        frozen.set_mode(Mode::Eval);
        frozen.set_trainable(false);
        let mut g = Graph::new();
        let bound = frozen.bind(&mut g);
        let xv = g.constant(x.clone());
        let y = frozen.forward(&mut g, xv, &bound)?;
        Ok(g.value(y).clone())
    }

    /// Like [`Network::predict`] but in chunks of `batch` rows.
    pub fn predict_batched(&self, x: &Tensor, batch: usize) -> Result<Tensor, NnError> {
        let n = x.shape()[0];
        let mut frozen = self.clone();
        frozen.set_mode(Mode::Eval);
        frozen.set_trainable(false);
        let mut values = Vec::with_capacity(n * self.output_shape.iter().product::<usize>());
        let mut start = 0;
        while start < n {
            let end = (start + batch.max(1)).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let mut g = Graph::new();
            let bound = frozen.bind(&mut g);
            let xv = g.constant(x.gather_rows(&idx));
            let y = frozen.forward(&mut g, xv, &bound)?;
            values.extend_from_slice(g.value(y).values());
            start = end;
        }
        let mut shape = vec![n];
        shape.extend_from_slice(&self.output_shape);
        Ok(Tensor::new(shape, values)?)
    }

    /// Parameters and batch-norm buffers, by name.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .named_params()
            .into_iter()
            .map(|(n, t)| {
                let mut t = t.clone();
                t.set_requires_grad(false);
                (n, t)
            })
            .collect();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::BatchNorm2d { stats, .. } = layer {
                let c = stats.mean.len();
                out.push((
                    format!("layers.{i}.running_mean"),
                    Tensor::new(vec![c], stats.mean.clone()).expect("sized"),
                ));
                out.push((
                    format!("layers.{i}.running_var"),
                    Tensor::new(vec![c], stats.var.clone()).expect("sized"),
                ));
            }
        }
        out
    }

    /// Restores values written by [`Network::state`]; every entry must be
    /// present with a matching shape.
    pub fn load_state(&mut self, entries: &[(String, Tensor)]) -> Result<(), NnError> {
        let lookup = |name: &str, shape: &[usize]| -> Result<Vec<f64>, NnError> {
            let (_, t) = entries
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| NnError::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != shape {
                return Err(NnError::Checkpoint(format!(
                    "{name}: shape {:?}, expected {:?}",
                    t.shape(),
                    shape
                )));
            }
            Ok(t.values().to_vec())
        };
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let names: Vec<&'static str> = layer.params().iter().map(|(n, _)| *n).collect();
            for (p, n) in layer.params_mut().into_iter().zip(names) {
                let v = lookup(&format!("layers.{i}.{n}"), &p.shape().to_vec())?;
                p.values_mut().copy_from_slice(&v);
            }
            if let Layer::BatchNorm2d { stats, .. } = layer {
                let c = [stats.mean.len()];
                stats.mean = lookup(&format!("layers.{i}.running_mean"), &c)?;
                stats.var = lookup(&format!("layers.{i}.running_var"), &c)?;
            }
        }
        Ok(())
    }

    /// Order-sensitive FNV-1a hash over the exact bits of every parameter
    /// and buffer.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for (_, t) in self.state() {
            for v in t.values() {
                for b in v.to_bits().to_le_bytes() {
                    h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }
}

fn fill_fan_in<R: Rng + ?Sized>(t: &mut Tensor, fan_in: usize, rng: &mut R) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    for v in t.values_mut() {
        *v = dist.sample(rng);
    }
}
