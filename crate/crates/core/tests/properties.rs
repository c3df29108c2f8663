//! Model-level invariants over random weights and batches.

use bijepa::autodiff::Tensor;
use bijepa::data::{build_lorenz_dataset, gen_sine_batch, LorenzConfig, SineConfig};
use bijepa::experiment::{run, Experiment, RunConfig, Variant};
use bijepa::jepa::{classic_jepa_loss, sphere_project, BiJepaModel, ConstraintMode};
use bijepa::nn::{build_mlp_encoder, build_predictor};
use bijepa::optim::EmaConfig;
use bijepa::rng::from_seed;
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand::Rng as _;
use rand_distr::StandardNormal;

fn config(seed: u64, cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        rng_seed: RngSeed::Fixed(seed),
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn model(alpha: f64, mode: ConstraintMode, seed: u64) -> BiJepaModel {
    let mut rng = from_seed(seed);
    let mut enc = build_mlp_encoder(5, 10, 4, mode.with_ln()).unwrap();
    enc.init_parameters(&mut rng);
    let mut pf = build_predictor(4, 8, mode.with_ln()).unwrap();
    pf.init_parameters(&mut rng);
    let mut pb = build_predictor(4, 8, mode.with_ln()).unwrap();
    pb.init_parameters(&mut rng);
    let pb = (alpha < 1.0).then_some(pb);
    BiJepaModel::new(enc, pf, pb, alpha, EmaConfig::new(0.995).unwrap(), mode).unwrap()
}

fn batch(seed: u64, rows: usize) -> (Tensor, Tensor) {
    let mut rng = from_seed(seed);
    let mut draw = || {
        let v = (0..rows * 5).map(|_| rng.sample(StandardNormal)).collect();
        Tensor::new(vec![rows, 5], v).unwrap()
    };
    (draw(), draw())
}

fn mode_of(k: u8) -> ConstraintMode {
    [ConstraintMode::Unconstrained, ConstraintMode::Expressive, ConstraintMode::Restrictive][k as usize % 3]
}

proptest! {
    #![proptest_config(config(21, 48))]

    #[test]
    fn loss_is_linear_in_alpha(seed in 0u64..10_000, k in 0u8..3, alpha in 0.0f64..0.999) {
        let (x, y) = batch(seed ^ 0xa5, 6);
        let mut m = model(alpha, mode_of(k), seed);
        let s = m.total_loss(&x, &y).unwrap();
        let expected = alpha * s.fwd + (1.0 - alpha) * s.bwd;
        prop_assert!((s.total - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        prop_assert!(s.total >= s.fwd.min(s.bwd) - 1e-15 && s.total <= s.fwd.max(s.bwd) + 1e-15);
    }

    #[test]
    fn alpha_one_reduces_to_classic(seed in 0u64..10_000, k in 0u8..3, rows in 2usize..9) {
        let mode = mode_of(k);
        let (x, y) = batch(seed ^ 0x5a, rows);
        let mut m = model(1.0, mode, seed);
        let (mut online, mut target, mut pred) = (m.online().clone(), m.target().clone(), m.p_fwd().clone());
        let ours = m.compute_gradients(&x, &y).unwrap();
        let reference = classic_jepa_loss(&mut online, &mut target, &mut pred, &x, &y, mode.projects()).unwrap();
        prop_assert_eq!(ours.total.to_bits(), reference.to_bits());
        for (a, b) in m.online().params().iter().zip(online.params()) {
            prop_assert_eq!(a.grad(), b.grad());
        }
        for (a, b) in m.p_fwd().params().iter().zip(pred.params()) {
            prop_assert_eq!(a.grad(), b.grad());
        }
    }

    #[test]
    fn sphere_is_scale_invariant(seed in 0u64..10_000, c in prop_oneof![Just(1e-3), Just(1.0), Just(1e3), 1e-6f64..1e6]) {
        let (x, _) = batch(seed, 4);
        let p = sphere_project(&x).unwrap();
        let scaled = Tensor::new(x.shape().to_vec(), x.values().iter().map(|v| v * c).collect()).unwrap();
        let q = sphere_project(&scaled).unwrap();
        for (a, b) in p.values().iter().zip(q.values()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for r in 0..4 {
            let n: f64 = p.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(config(22, 16))]

    #[test]
    fn generators_are_pure_functions_of_seed(seed in any::<u64>()) {
        let cfg = SineConfig::default();
        prop_assert_eq!(gen_sine_batch(&cfg, &mut from_seed(seed)), gen_sine_batch(&cfg, &mut from_seed(seed)));
        let lcfg = LorenzConfig { n_train: 8, n_probe: 4, n_test: 2, ..LorenzConfig::default() };
        let a = build_lorenz_dataset(&lcfg, &mut from_seed(seed)).unwrap();
        let b = build_lorenz_dataset(&lcfg, &mut from_seed(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn lorenz_train_split_is_standardized() {
    let ds = build_lorenz_dataset(&LorenzConfig::default(), &mut from_seed(3)).unwrap();
    assert_eq!((ds.train.len(), ds.probe.len(), ds.test.len()), (2000, 1000, 20));
    assert_eq!(ds.train.x.shape(), &[2000, 60]);
    assert_eq!(ds.train.y.shape(), &[2000, 60]);
    // Every train state appears once per view; pool both views per coordinate.
    for c in 0..3 {
        let vals: Vec<f64> = [&ds.train.x, &ds.train.y]
            .iter()
            .flat_map(|t| t.values().iter().skip(c).step_by(3).copied().collect::<Vec<_>>())
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-9, "coordinate {c} mean {mean}");
        assert!((std - 1.0).abs() < 1e-9, "coordinate {c} std {std}");
    }
}

#[test]
fn embedding_norm_grows_only_without_constraints() {
    let norm_at = |variant, step: usize| {
        let r = run(&RunConfig {
            steps: Some(1501),
            ..RunConfig::new(Experiment::Sine, variant, 0)
        }
        .with_override("probe.budget={\"steps\":1}")
        .with_override("sine.probe_train=16")
        .with_override("sine.test=4"))
        .unwrap();
        (r.loss_history[200].mean_embedding_norm, r.loss_history[step].mean_embedding_norm)
    };
    let (early, late) = norm_at(Variant::BijepaUnconstrained, 1500);
    assert!(late > early, "unconstrained norm {early} -> {late}");
    let (early, late) = norm_at(Variant::BijepaExpressive, 1500);
    assert!(late / early < 3.0, "expressive norm {early} -> {late}");
}
