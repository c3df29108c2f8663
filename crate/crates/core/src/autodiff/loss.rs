use super::graph::Var;
use super::{AutodiffError, Tensor};

pub(super) struct CeCtx {
    logits: Var,
    probs: Vec<f64>,
    labels: Vec<usize>,
    classes: usize,
}

pub(super) fn softmax_ce_forward(
    logits: &Tensor,
    labels: &[usize],
    var: Var,
) -> Result<(f64, CeCtx), AutodiffError> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "softmax_cross_entropy",
            detail: format!("logits {:?} for {} labels", logits.shape(), labels.len()),
        });
    }
    let (rows, k) = (logits.shape()[0], logits.shape()[1]);
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(AutodiffError::LabelOutOfRange {
            op: "softmax_cross_entropy",
            label: bad,
            classes: k,
        });
    }
    let mut probs = Vec::with_capacity(rows * k);
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = z.ln();
        total += log_z - (row[label] - max);
        probs.extend(row.iter().map(|v| (v - max).exp() / z));
    }
    let loss = if rows == 0 { 0.0 } else { total / rows as f64 };
    Ok((
        loss,
        CeCtx {
            logits: var,
            probs,
            labels: labels.to_vec(),
            classes: k,
        },
    ))
}

pub(super) fn softmax_ce_backward(ctx: &CeCtx, g: f64) -> Vec<(Var, Vec<f64>)> {
    let rows = ctx.labels.len().max(1) as f64;
    let mut d: Vec<f64> = ctx.probs.iter().map(|p| p * g / rows).collect();
    for (r, &label) in ctx.labels.iter().enumerate() {
        d[r * ctx.classes + label] -= g / rows;
    }
    vec![(ctx.logits, d)]
}
