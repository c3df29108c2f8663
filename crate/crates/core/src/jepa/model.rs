use serde::{Deserialize, Serialize};

use super::{ConstraintMode, JepaError};
use crate::autodiff::{Graph, Tensor, Var};
use crate::nn::checkpoint::{prefixed, strip_prefix};
use crate::nn::{Bound, Network};
use crate::optim::{ema_update, AdamWConfig, AdamWState, EmaConfig, OptimError};

/// Rows with a smaller norm are rejected by [`sphere_project`].
pub const SPHERE_MIN_NORM: f64 = 1e-12;

/// A finite loss above this is flagged as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

const INFERENCE_BATCH: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    #[serde(with = "crate::serde_float")]
    pub total: f64,
    #[serde(with = "crate::serde_float")]
    pub fwd: f64,
    /// Zero when the model has no backward predictor.
    #[serde(with = "crate::serde_float")]
    pub bwd: f64,
    /// Mean row norm of the raw online embedding of the context view.
    #[serde(with = "crate::serde_float")]
    pub mean_embedding_norm: f64,
    pub diverged: bool,
    /// The update was skipped because the loss or a gradient was not finite.
    /// Training cannot meaningfully continue.
    pub halted: bool,
}

/// Divides every row of a `[B, D]` batch by its Euclidean norm.
pub fn sphere_project(s: &Tensor) -> Result<Tensor, JepaError> {
    let mut g = Graph::new();
    let v = g.constant(s.clone());
    let p = g.row_normalize(v, SPHERE_MIN_NORM)?;
    Ok(g.value(p).clone())
}

struct Recorded {
    fwd: (Var, Var),
    bwd: Option<(Var, Var)>,
    emb_x: Var,
}

struct Bindings {
    online: Bound,
    target: Bound,
    p_fwd: Bound,
    p_bwd: Option<Bound>,
}

struct LossGraph {
    g: Graph,
    bound: Bindings,
    total: Var,
    metrics: StepMetrics,
}

/// Online and target encoders, the forward predictor and, when `α < 1`,
/// the backward predictor.
#[derive(Clone, Debug)]
pub struct BiJepaModel {
    online: Network,
    target: Network,
    p_fwd: Network,
    p_bwd: Option<Network>,
    alpha: f64,
    ema: EmaConfig,
    mode: ConstraintMode,
    steps: u64,
}

impl BiJepaModel {
    /// The target encoder starts as an exact, frozen copy of `online`.
    pub fn new(
        mut online: Network,
        mut p_fwd: Network,
        mut p_bwd: Option<Network>,
        alpha: f64,
        ema: EmaConfig,
        mode: ConstraintMode,
    ) -> Result<Self, JepaError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(JepaError::InvalidAlpha(alpha));
        }
        if p_bwd.is_some() != (alpha < 1.0) {
            return Err(JepaError::PredictorMismatch);
        }
        online.set_trainable(true);
        p_fwd.set_trainable(true);
        if let Some(p) = &mut p_bwd {
            p.set_trainable(true);
        }
        let mut target = online.clone();
        target.set_trainable(false);
        Ok(Self {
            online,
            target,
            p_fwd,
            p_bwd,
            alpha,
            ema,
            mode,
            steps: 0,
        })
    }

    pub fn online(&self) -> &Network {
        &self.online
    }

    pub fn target(&self) -> &Network {
        &self.target
    }

    pub fn p_fwd(&self) -> &Network {
        &self.p_fwd
    }

    pub fn p_bwd(&self) -> Option<&Network> {
        self.p_bwd.as_ref()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn ema(&self) -> EmaConfig {
        self.ema
    }

    pub fn mode(&self) -> ConstraintMode {
        self.mode
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Parameters the optimizer owns: online encoder, then `P_fwd`, then
    /// `P_bwd`. The target encoder is never among them.
    pub fn trainable_params(&self) -> Vec<&Tensor> {
        let mut out = self.online.params();
        out.extend(self.p_fwd.params());
        if let Some(p) = &self.p_bwd {
            out.extend(p.params());
        }
        out
    }

    fn trainable_params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.online.params_mut();
        out.extend(self.p_fwd.params_mut());
        if let Some(p) = &mut self.p_bwd {
            out.extend(p.params_mut());
        }
        out
    }

    pub fn optimizer(&self, config: AdamWConfig) -> AdamWState {
        AdamWState::new(&self.trainable_params(), config)
    }

    fn check_batch(x: &Tensor, y: &Tensor) -> Result<(), JepaError> {
        let (bx, by) = (x.shape()[0], y.shape()[0]);
        if bx != by {
            return Err(JepaError::BatchMismatch { x: bx, y: by });
        }
        Ok(())
    }

    fn project(&self, g: &mut Graph, v: Var) -> Result<Var, JepaError> {
        if self.mode.projects() {
            Ok(g.row_normalize(v, SPHERE_MIN_NORM)?)
        } else {
            Ok(v)
        }
    }

    fn bind(&self, g: &mut Graph) -> Bindings {
        Bindings {
            online: self.online.bind(g),
            target: self.target.bind(g),
            p_fwd: self.p_fwd.bind(g),
            p_bwd: self.p_bwd.as_ref().map(|p| p.bind(g)),
        }
    }

    /// One prediction direction: `P(f_θ(src))` against `sg(f_θ̄(dst))`.
    fn branch(
        &mut self,
        g: &mut Graph,
        b: &Bindings,
        src: Var,
        dst: Var,
        backward_dir: bool,
    ) -> Result<(Var, Var, Var), JepaError> {
        let raw = self.online.forward(g, src, &b.online)?;
        let s = self.project(g, raw)?;
        let pred = if backward_dir {
            let p = self.p_bwd.as_mut().ok_or(JepaError::NoBackwardPredictor)?;
            p.forward(g, s, b.p_bwd.as_ref().expect("bound with model"))?
        } else {
            self.p_fwd.forward(g, s, &b.p_fwd)?
        };
        let pred = self.project(g, pred)?;
        let t = self.target.forward(g, dst, &b.target)?;
        let t = self.project(g, t)?;
        let t = g.stop_gradient(t);
        Ok((pred, t, raw))
    }

    fn record(
        &mut self,
        g: &mut Graph,
        b: &Bindings,
        x: &Tensor,
        y: &Tensor,
        with_bwd: bool,
    ) -> Result<Recorded, JepaError> {
        Self::check_batch(x, y)?;
        let xv = g.constant(x.clone());
        let yv = g.constant(y.clone());
        let (pred_y, tgt_y, emb_x) = self.branch(g, b, xv, yv, false)?;
        let bwd = if with_bwd {
            let (pred_x, tgt_x, _) = self.branch(g, b, yv, xv, true)?;
            Some((pred_x, tgt_x))
        } else {
            None
        };
        Ok(Recorded {
            fwd: (pred_y, tgt_y),
            bwd,
            emb_x,
        })
    }

    /// `(ŝ_y, sg(f_θ̄(y)))` with `ŝ_y = P_fwd(f_θ(x))`.
    pub fn forward_pass(&mut self, x: &Tensor, y: &Tensor) -> Result<(Tensor, Tensor), JepaError> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let r = self.record(&mut g, &b, x, y, false)?;
        Ok((g.value(r.fwd.0).clone(), g.value(r.fwd.1).clone()))
    }

    /// `(ŝ_x, sg(f_θ̄(x)))` with `ŝ_x = P_bwd(f_θ(y))`: here `y` feeds the
    /// online encoder.
    pub fn backward_pass(&mut self, x: &Tensor, y: &Tensor) -> Result<(Tensor, Tensor), JepaError> {
        if self.p_bwd.is_none() {
            return Err(JepaError::NoBackwardPredictor);
        }
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        Self::check_batch(x, y)?;
        let xv = g.constant(x.clone());
        let yv = g.constant(y.clone());
        let (pred, tgt, _) = self.branch(&mut g, &b, yv, xv, true)?;
        Ok((g.value(pred).clone(), g.value(tgt).clone()))
    }

    fn loss_graph(&mut self, x: &Tensor, y: &Tensor) -> Result<LossGraph, JepaError> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let r = self.record(&mut g, &bound, x, y, self.p_bwd.is_some())?;
        let fwd = g.mse_loss(r.fwd.0, r.fwd.1)?;
        let (total, bwd_value) = match r.bwd {
            None => (fwd, 0.0),
            Some((pred, tgt)) => {
                let bwd = g.mse_loss(pred, tgt)?;
                let a = g.scale(fwd, self.alpha);
                let b = g.scale(bwd, 1.0 - self.alpha);
                (g.add(a, b)?, g.value(bwd).item())
            }
        };
        let total_value = g.value(total).item();
        let metrics = StepMetrics {
            step: self.steps,
            total: total_value,
            fwd: g.value(fwd).item(),
            bwd: bwd_value,
            mean_embedding_norm: g.value(r.emb_x).mean_row_norm(),
            diverged: !(total_value <= DIVERGENCE_THRESHOLD),
            halted: !total_value.is_finite(),
        };
        Ok(LossGraph {
            g,
            bound,
            total,
            metrics,
        })
    }

    /// `α·mse(ŝ_y, s_y) + (1 − α)·mse(ŝ_x, s_x)` without touching gradients.
    /// With `α = 1` no backward branch is evaluated.
    pub fn total_loss(&mut self, x: &Tensor, y: &Tensor) -> Result<StepMetrics, JepaError> {
        Ok(self.loss_graph(x, y)?.metrics)
    }

    /// Evaluates the loss and leaves its gradient in the grad slots of every
    /// trainable parameter (cleared first). A non-finite loss leaves them
    /// empty.
    pub fn compute_gradients(&mut self, x: &Tensor, y: &Tensor) -> Result<StepMetrics, JepaError> {
        for p in self.trainable_params_mut() {
            p.clear_grad();
        }
        let LossGraph {
            mut g,
            bound,
            total,
            metrics,
        } = self.loss_graph(x, y)?;
        if metrics.halted {
            return Ok(metrics);
        }
        g.backward(total)?;
        self.online.collect_grads(&g, &bound.online)?;
        self.p_fwd.collect_grads(&g, &bound.p_fwd)?;
        if let (Some(p), Some(b)) = (&mut self.p_bwd, &bound.p_bwd) {
            p.collect_grads(&g, b)?;
        }
        Ok(metrics)
    }

    /// Loss, one backward pass, an AdamW step on the online encoder and
    /// predictors, then the EMA update of the target encoder.
    pub fn train_step(
        &mut self,
        opt: &mut AdamWState,
        x: &Tensor,
        y: &Tensor,
    ) -> Result<StepMetrics, JepaError> {
        let mut m = self.compute_gradients(x, y)?;
        self.steps += 1;
        if m.halted {
            return Ok(m);
        }
        match opt.step(&mut self.trainable_params_mut()) {
            Ok(()) => {}
            Err(OptimError::NonFiniteGradient { .. }) => {
                m.diverged = true;
                m.halted = true;
                return Ok(m);
            }
            Err(e) => return Err(e.into()),
        }
        ema_update(&mut self.target, &self.online, self.ema)?;
        Ok(m)
    }

    /// `f_θ(x)` in evaluation mode, sphere-projected in the restrictive
    /// regime. The target encoder plays no part.
    pub fn encode_for_inference(&self, x: &Tensor) -> Result<Tensor, JepaError> {
        let s = self.online.predict_batched(x, INFERENCE_BATCH)?;
        self.maybe_project(s)
    }

    /// `P_fwd(s)` for already-encoded context embeddings.
    pub fn predict_forward(&self, s: &Tensor) -> Result<Tensor, JepaError> {
        let p = self.p_fwd.predict_batched(s, INFERENCE_BATCH)?;
        self.maybe_project(p)
    }

    fn maybe_project(&self, s: Tensor) -> Result<Tensor, JepaError> {
        if self.mode.projects() {
            sphere_project(&s)
        } else {
            Ok(s)
        }
    }

    /// All four networks' state under `online.`, `target.`, `p_fwd.` and
    /// `p_bwd.` prefixes.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        let mut out = prefixed("online", self.online.state());
        out.extend(prefixed("target", self.target.state()));
        out.extend(prefixed("p_fwd", self.p_fwd.state()));
        if let Some(p) = &self.p_bwd {
            out.extend(prefixed("p_bwd", p.state()));
        }
        out
    }

    pub fn load_state(&mut self, entries: &[(String, Tensor)]) -> Result<(), JepaError> {
        self.online.load_state(&strip_prefix("online", entries))?;
        self.target.load_state(&strip_prefix("target", entries))?;
        self.p_fwd.load_state(&strip_prefix("p_fwd", entries))?;
        if let Some(p) = &mut self.p_bwd {
            p.load_state(&strip_prefix("p_bwd", entries))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_mlp_encoder, build_predictor};
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn model(alpha: f64, mode: ConstraintMode, seed: u64) -> BiJepaModel {
        let mut enc = build_mlp_encoder(6, 12, 4, mode.with_ln()).unwrap();
        enc.init_from_seed(seed);
        let mut pf = build_predictor(4, 8, mode.with_ln()).unwrap();
        pf.init_from_seed(seed + 1);
        let pb = (alpha < 1.0).then(|| {
            let mut p = build_predictor(4, 8, mode.with_ln()).unwrap();
            p.init_from_seed(seed + 2);
            p
        });
        BiJepaModel::new(enc, pf, pb, alpha, EmaConfig::new(0.995).unwrap(), mode).unwrap()
    }

    fn batch(seed: u64, rows: usize) -> (Tensor, Tensor) {
        let mut rng = crate::rng::from_seed(seed);
        let mut draw = || -> Tensor {
            let v = (0..rows * 6).map(|_| rng.sample(StandardNormal)).collect();
            Tensor::new(vec![rows, 6], v).unwrap()
        };
        (draw(), draw())
    }

    fn flat(n: &Network) -> Vec<f64> {
        n.params().iter().flat_map(|t| t.values().to_vec()).collect()
    }

    #[test]
    fn sphere_examples() {
        let p = sphere_project(&Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap()).unwrap();
        assert!((p.values()[0] - 0.6).abs() < 1e-15 && (p.values()[1] - 0.8).abs() < 1e-15);
        let u = Tensor::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(sphere_project(&u).unwrap().values(), u.values());
        assert!(matches!(
            sphere_project(&Tensor::zeros(&[2, 3])),
            Err(JepaError::DegenerateEmbedding { row: 0, .. })
        ));
    }

    #[test]
    fn construction_rules() {
        let enc = build_mlp_encoder(6, 12, 4, true).unwrap();
        let p = build_predictor(4, 8, true).unwrap();
        let ema = EmaConfig::new(0.99).unwrap();
        let mode = ConstraintMode::Expressive;
        assert!(matches!(
            BiJepaModel::new(enc.clone(), p.clone(), None, 0.5, ema, mode),
            Err(JepaError::PredictorMismatch)
        ));
        assert!(matches!(
            BiJepaModel::new(enc.clone(), p.clone(), Some(p.clone()), 1.0, ema, mode),
            Err(JepaError::PredictorMismatch)
        ));
        assert!(matches!(
            BiJepaModel::new(enc.clone(), p.clone(), None, 1.5, ema, mode),
            Err(JepaError::InvalidAlpha(_))
        ));
        let m = BiJepaModel::new(enc, p, None, 1.0, ema, mode).unwrap();
        assert_eq!(m.online().specs(), m.target().specs());
        assert_eq!(flat(m.online()), flat(m.target()));
    }

    #[test]
    fn total_is_convex_combination() {
        for alpha in [0.0, 0.25, 0.5, 0.9] {
            let mut m = model(alpha, ConstraintMode::Expressive, 3);
            let (x, y) = batch(4, 16);
            let s = m.total_loss(&x, &y).unwrap();
            assert!((s.total - (alpha * s.fwd + (1.0 - alpha) * s.bwd)).abs() < 1e-12);
            assert!(s.total >= s.fwd.min(s.bwd) - 1e-15 && s.total <= s.fwd.max(s.bwd) + 1e-15);
        }
    }

    #[test]
    fn passes_match_branch_losses() {
        let mut m = model(0.5, ConstraintMode::Expressive, 5);
        let (x, y) = batch(6, 8);
        let s = m.total_loss(&x, &y).unwrap();
        let mse = |a: &Tensor, b: &Tensor| {
            a.values().iter().zip(b.values()).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / a.numel() as f64
        };
        let (py, ty) = m.forward_pass(&x, &y).unwrap();
        let (px, tx) = m.backward_pass(&x, &y).unwrap();
        assert!((mse(&py, &ty) - s.fwd).abs() < 1e-14);
        assert!((mse(&px, &tx) - s.bwd).abs() < 1e-14);
    }

    #[test]
    fn backward_pass_needs_predictor() {
        let mut m = model(1.0, ConstraintMode::Expressive, 1);
        let (x, y) = batch(2, 4);
        assert!(matches!(m.backward_pass(&x, &y), Err(JepaError::NoBackwardPredictor)));
        assert_eq!(m.total_loss(&x, &y).unwrap().bwd, 0.0);
    }

    #[test]
    fn restrictive_outputs_on_sphere() {
        let mut m = model(0.5, ConstraintMode::Restrictive, 7);
        let (x, y) = batch(8, 10);
        let (py, ty) = m.forward_pass(&x, &y).unwrap();
        let (px, tx) = m.backward_pass(&x, &y).unwrap();
        for t in [&py, &ty, &px, &tx, &m.encode_for_inference(&x).unwrap()] {
            for r in 0..t.shape()[0] {
                let n = t.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-9);
            }
        }
        let plain = model(0.5, ConstraintMode::Expressive, 7);
        let e = plain.encode_for_inference(&x).unwrap();
        assert!((e.mean_row_norm() - 1.0).abs() > 1e-3);
    }

    #[test]
    fn perfect_prediction_gives_zero_loss() {
        // Identical encoders and predictors whose output is constant make
        // both sides of each branch equal only if the target is constant
        // too; zeroing the last encoder layer achieves that.
        let mut m = model(0.5, ConstraintMode::Unconstrained, 9);
        for net in [&mut m.online, &mut m.target, &mut m.p_fwd] {
            let n = net.params_mut().len();
            for (i, p) in net.params_mut().into_iter().enumerate() {
                if i >= n - 2 {
                    p.values_mut().fill(0.0);
                }
            }
        }
        for p in m.p_bwd.as_mut().unwrap().params_mut().into_iter().rev().take(2) {
            p.values_mut().fill(0.0);
        }
        let (x, y) = batch(1, 5);
        assert_eq!(m.total_loss(&x, &y).unwrap().total, 0.0);
    }

    #[test]
    fn train_step_updates_online_and_ema_target() {
        let mut m = model(0.5, ConstraintMode::Expressive, 11);
        let mut opt = m.optimizer(AdamWConfig::new(1e-3, 1e-4));
        let (x, y) = batch(12, 16);
        let old_target = flat(m.target());
        let old_online = flat(m.online());
        let s = m.train_step(&mut opt, &x, &y).unwrap();
        assert!(!s.diverged && !s.halted);
        assert_eq!(s.step, 0);
        let new_online = flat(m.online());
        assert_ne!(new_online, old_online);
        for ((t, o), n) in flat(m.target()).iter().zip(&old_target).zip(&new_online) {
            assert_eq!(*t, 0.995 * o + (1.0 - 0.995) * n);
        }
        assert!(m.target().params().iter().all(|p| p.grad().is_none()));
        assert!(m.trainable_params().iter().all(|p| p.grad().is_some()));
    }

    #[test]
    fn tau_one_freezes_target() {
        let mut m = model(0.5, ConstraintMode::Expressive, 13);
        m.ema = EmaConfig::new(1.0).unwrap();
        let mut opt = m.optimizer(AdamWConfig::default());
        let before = flat(m.target());
        let (x, y) = batch(3, 8);
        m.train_step(&mut opt, &x, &y).unwrap();
        assert_eq!(flat(m.target()), before);
    }

    #[test]
    fn nan_input_halts_without_update() {
        let mut m = model(0.5, ConstraintMode::Unconstrained, 2);
        let mut opt = m.optimizer(AdamWConfig::new(1e-3, 0.0));
        let (mut x, y) = batch(3, 4);
        x.values_mut()[0] = f64::NAN;
        let before = flat(m.online());
        let s = m.train_step(&mut opt, &x, &y).unwrap();
        assert!(s.diverged && s.halted);
        assert_eq!(flat(m.online()), before);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn batch_mismatch_rejected() {
        let mut m = model(0.5, ConstraintMode::Expressive, 2);
        let (x, _) = batch(3, 4);
        let (_, y) = batch(3, 5);
        assert!(matches!(m.total_loss(&x, &y), Err(JepaError::BatchMismatch { .. })));
    }

    #[test]
    fn state_round_trip() {
        let mut a = model(0.5, ConstraintMode::Expressive, 21);
        let mut opt = a.optimizer(AdamWConfig::default());
        let (x, y) = batch(1, 8);
        a.train_step(&mut opt, &x, &y).unwrap();
        let mut buf = Vec::new();
        crate::nn::checkpoint::write_tensors(&mut buf, &a.state()).unwrap();
        let mut b = model(0.5, ConstraintMode::Expressive, 99);
        b.load_state(&crate::nn::checkpoint::read_tensors(&buf[..]).unwrap()).unwrap();
        assert_eq!(a.online().checksum(), b.online().checksum());
        assert_eq!(a.target().checksum(), b.target().checksum());
        assert_eq!(a.p_fwd().checksum(), b.p_fwd().checksum());
        assert_eq!(a.p_bwd().unwrap().checksum(), b.p_bwd().unwrap().checksum());
    }
}
