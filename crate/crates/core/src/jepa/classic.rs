use super::{JepaError, SPHERE_MIN_NORM};
use crate::autodiff::{Graph, Tensor, Var};
use crate::nn::Network;

/// Single-direction JEPA objective `mse(P(f_θ(x)), sg(f_θ̄(y)))`, written
/// independently of [`super::BiJepaModel`] as a reference.
///
/// Gradients are left in the (cleared) grad slots of `online` and
/// `predictor`; `target` should be frozen.
pub fn classic_jepa_loss(
    online: &mut Network,
    target: &mut Network,
    predictor: &mut Network,
    x: &Tensor,
    y: &Tensor,
    project: bool,
) -> Result<f64, JepaError> {
    online.zero_grad();
    predictor.zero_grad();
    let mut g = Graph::new();
    let b_online = online.bind(&mut g);
    let b_target = target.bind(&mut g);
    let b_pred = predictor.bind(&mut g);
    let xv = g.constant(x.clone());
    let yv = g.constant(y.clone());

    let sphere = |g: &mut Graph, v: Var| -> Result<Var, JepaError> {
        Ok(if project {
            g.row_normalize(v, SPHERE_MIN_NORM)?
        } else {
            v
        })
    };
    let s_x = online.forward(&mut g, xv, &b_online)?;
    let s_x = sphere(&mut g, s_x)?;
    let pred = predictor.forward(&mut g, s_x, &b_pred)?;
    let pred = sphere(&mut g, pred)?;
    let s_y = target.forward(&mut g, yv, &b_target)?;
    let s_y = sphere(&mut g, s_y)?;
    let s_y = g.stop_gradient(s_y);
    let loss = g.mse_loss(pred, s_y)?;
    let value = g.value(loss).item();

    g.backward(loss)?;
    online.collect_grads(&g, &b_online)?;
    predictor.collect_grads(&g, &b_pred)?;
    Ok(value)
}
