//! Central finite differences for every differentiable primitive.

use bijepa::autodiff::{
    AutodiffError, BatchNormMode, Conv2dGeometry, Graph, RunningStats, Tensor, Var,
};
use bijepa::rng::{from_seed, Rng};
use rand::Rng as _;

const TRIALS: u64 = 100;
const H: f64 = 1e-6;
/// Gradients smaller than this are compared absolutely.
const FLOOR: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;

type Build = dyn Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>;

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::param(shape.to_vec(), v).unwrap()
}

/// Values in ±[0.1, 1], away from the ReLU kink.
fn off_kink(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let mut t = uniform(rng, shape, 0.1, 1.0);
    for v in t.values_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Scalar objective: a fixed random projection of the primitive's output.
fn objective(g: &mut Graph, out: Var, proj: &Tensor) -> Result<Var, AutodiffError> {
    if g.value(out).numel() == 1 {
        return Ok(out);
    }
    let p = g.constant(proj.clone().reshape(g.shape(out).to_vec())?);
    let prod = g.mul(out, p)?;
    Ok(g.sum(prod))
}

fn eval(inputs: &[Tensor], build: &Build, proj: &Tensor) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    let l = objective(&mut g, out, proj).unwrap();
    g.value(l).item()
}

/// Largest relative error between the tape's gradient and a central
/// difference, over every element of every gradient-tracking input.
fn max_rel_error(inputs: Vec<Tensor>, build: &Build, rng: &mut Rng) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    let n = g.value(out).numel();
    let proj = uniform(rng, &[n], -1.0, 1.0);
    let l = objective(&mut g, out, &proj).unwrap();
    g.backward(l).unwrap();

    let mut worst = 0.0_f64;
    for (i, t) in inputs.iter().enumerate() {
        if !t.requires_grad() {
            continue;
        }
        let analytic = g.grad(vars[i]).map(<[f64]>::to_vec).unwrap_or(vec![0.0; t.numel()]);
        for j in 0..t.numel() {
            let mut plus = inputs.clone();
            plus[i].values_mut()[j] += H;
            let mut minus = inputs.clone();
            minus[i].values_mut()[j] -= H;
            let numeric = (eval(&plus, build, &proj) - eval(&minus, build, &proj)) / (2.0 * H);
            let a = analytic[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}

struct Case {
    name: &'static str,
    make: fn(&mut Rng) -> (Vec<Tensor>, Box<Build>),
}

fn dims(rng: &mut Rng) -> (usize, usize) {
    (rng.random_range(2..5), rng.random_range(2..6))
}

fn cases() -> Vec<Case> {
    vec![
        Case {
            name: "add",
            make: |r| {
                let (b, d) = dims(r);
                (vec![uniform(r, &[b, d], -1.0, 1.0), uniform(r, &[b, d], -1.0, 1.0)], Box::new(|g, v| g.add(v[0], v[1])))
            },
        },
        Case {
            name: "mul",
            make: |r| {
                let (b, d) = dims(r);
                (vec![uniform(r, &[b, d], -1.0, 1.0), uniform(r, &[b, d], -1.0, 1.0)], Box::new(|g, v| g.mul(v[0], v[1])))
            },
        },
        Case {
            name: "scale",
            make: |r| {
                let (b, d) = dims(r);
                let f = r.random_range(-3.0..3.0);
                (vec![uniform(r, &[b, d], -1.0, 1.0)], Box::new(move |g, v| Ok(g.scale(v[0], f))))
            },
        },
        Case {
            name: "sum",
            make: |r| {
                let (b, d) = dims(r);
                (vec![uniform(r, &[b, d], -1.0, 1.0)], Box::new(|g, v| Ok(g.sum(v[0]))))
            },
        },
        Case {
            name: "relu",
            make: |r| {
                let (b, d) = dims(r);
                (vec![off_kink(r, &[b, d])], Box::new(|g, v| Ok(g.relu(v[0]))))
            },
        },
        Case {
            name: "flatten",
            make: |r| {
                let b = r.random_range(1..4);
                (vec![uniform(r, &[b, 2, 3, 2], -1.0, 1.0)], Box::new(|g, v| g.flatten(v[0])))
            },
        },
        Case {
            name: "linear",
            make: |r| {
                let (b, i) = dims(r);
                let o = r.random_range(1..5);
                (
                    vec![uniform(r, &[b, i], -1.0, 1.0), uniform(r, &[i, o], -1.0, 1.0), uniform(r, &[o], -1.0, 1.0)],
                    Box::new(|g, v| g.linear(v[0], v[1], v[2])),
                )
            },
        },
        Case {
            name: "row_normalize",
            make: |r| {
                let (b, d) = dims(r);
                (vec![uniform(r, &[b, d], 0.2, 1.0)], Box::new(|g, v| g.row_normalize(v[0], 1e-12)))
            },
        },
        Case {
            name: "layer_norm",
            make: |r| {
                let (b, d) = dims(r);
                let d = d + 1;
                (
                    vec![uniform(r, &[b, d], -2.0, 2.0), uniform(r, &[d], 0.5, 1.5), uniform(r, &[d], -0.5, 0.5)],
                    Box::new(|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5)),
                )
            },
        },
        Case {
            name: "batch_norm2d/train",
            make: |r| {
                let c = r.random_range(1..4);
                (
                    vec![uniform(r, &[3, c, 2, 3], -2.0, 2.0), uniform(r, &[c], 0.5, 1.5), uniform(r, &[c], -0.5, 0.5)],
                    Box::new(move |g, v| {
                        let mut stats = RunningStats::new(c, 0.1);
                        g.batch_norm2d(v[0], v[1], v[2], &mut stats, BatchNormMode::Train, 1e-5)
                    }),
                )
            },
        },
        Case {
            name: "batch_norm2d/eval",
            make: |r| {
                let c = r.random_range(1..4);
                let mean: Vec<f64> = (0..c).map(|_| r.random_range(-1.0..1.0)).collect();
                let var: Vec<f64> = (0..c).map(|_| r.random_range(0.5..2.0)).collect();
                (
                    vec![uniform(r, &[2, c, 3, 2], -2.0, 2.0), uniform(r, &[c], 0.5, 1.5), uniform(r, &[c], -0.5, 0.5)],
                    Box::new(move |g, v| {
                        let mut stats = RunningStats { mean: mean.clone(), var: var.clone(), momentum: 0.1 };
                        g.batch_norm2d(v[0], v[1], v[2], &mut stats, BatchNormMode::Eval, 1e-5)
                    }),
                )
            },
        },
        Case {
            name: "conv2d",
            make: |r| {
                let (cin, cout) = (r.random_range(1..3), r.random_range(1..4));
                let (h, w) = (r.random_range(3..7), r.random_range(3..7));
                let geom = Conv2dGeometry { stride: r.random_range(1..3), padding: r.random_range(0..2) };
                (
                    vec![
                        uniform(r, &[2, cin, h, w], -1.0, 1.0),
                        uniform(r, &[cout, cin, 3, 3], -1.0, 1.0),
                        uniform(r, &[cout], -1.0, 1.0),
                    ],
                    Box::new(move |g, v| g.conv2d(v[0], v[1], v[2], geom)),
                )
            },
        },
        Case {
            name: "mse_loss",
            make: |r| {
                let (b, d) = dims(r);
                (vec![uniform(r, &[b, d], -1.0, 1.0), uniform(r, &[b, d], -1.0, 1.0)], Box::new(|g, v| g.mse_loss(v[0], v[1])))
            },
        },
        Case {
            name: "softmax_cross_entropy",
            make: |r| {
                let (b, k) = dims(r);
                let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..k)).collect();
                (
                    vec![uniform(r, &[b, k], -2.0, 2.0)],
                    Box::new(move |g, v| g.softmax_cross_entropy(v[0], &labels)),
                )
            },
        },
    ]
}

/// `(primitive, worst relative error)` over all trials.
pub fn run_all(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = from_seed(seed);
    let cases = cases();
    let mut worst = vec![0.0_f64; cases.len()];
    for _ in 0..TRIALS {
        for (k, case) in cases.iter().enumerate() {
            let (inputs, build) = (case.make)(&mut rng);
            worst[k] = worst[k].max(max_rel_error(inputs, build.as_ref(), &mut rng));
        }
    }
    cases.iter().map(|c| c.name).zip(worst).collect()
}
