use super::conv::{self, Conv2dGeometry};
use super::linalg::{gemm, Layout};
use super::loss;
use super::norm;
use super::{AutodiffError, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(super) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Saved forward context per primitive.
pub(super) enum Op {
    Leaf,
    StopGradient,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Relu(Var),
    Reshape(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    RowNormalize {
        x: Var,
        norms: Vec<f64>,
    },
    LayerNorm(norm::LayerNormCtx),
    BatchNorm2d(norm::BatchNormCtx),
    Conv2d(conv::ConvCtx),
    Mse {
        pred: Var,
        target: Var,
    },
    SoftmaxCe(loss::CeCtx),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Execution record for one forward pass.
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, detail }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, mut t: Tensor) -> Var {
        let requires_grad = t.requires_grad();
        t.clear_grad();
        self.push(t, requires_grad, Op::Leaf)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        self.push(t, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Value-identical copy through which no gradient flows.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let mut value = self.nodes[x.0].value.clone();
        value.set_requires_grad(false);
        self.push(value, false, Op::StopGradient)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let va = self.value(a);
        let vals = va
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), vals)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, Op::Add(a, b)))
    }

    /// Elementwise product of two same-shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let va = self.value(a);
        let vals = va
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), vals)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let vx = self.value(x);
        let vals = vx.values().iter().map(|v| v * factor).collect();
        let out = Tensor::new(vx.shape().to_vec(), vals).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(out, rg, Op::Scale(x, factor))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).values().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Sum(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let vals = vx.values().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::new(vx.shape().to_vec(), vals).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(out, rg, Op::Relu(x))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::Reshape(x)))
    }

    /// Collapses every dimension after the first: `[B, ...] -> [B, N]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let shape = self.shape(x);
        if shape.is_empty() {
            return Err(shape_err("flatten", "scalar input".into()));
        }
        let b = shape[0];
        let rest = shape[1..].iter().product();
        self.reshape(x, vec![b, rest])
    }

    /// `y[b,o] = Σ_i x[b,i]·w[i,o] + b[o]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || ws[1] != bs[0] {
            return Err(shape_err(
                "linear",
                format!("x {:?}, w {:?}, b {:?}", xs, ws, bs),
            ));
        }
        let (batch, inner, out_dim) = (xs[0], xs[1], ws[1]);
        let bias = self.value(b).values();
        let mut out = Vec::with_capacity(batch * out_dim);
        for _ in 0..batch {
            out.extend_from_slice(bias);
        }
        gemm(
            self.value(x).values(),
            Layout::Normal,
            self.value(w).values(),
            Layout::Normal,
            batch,
            inner,
            out_dim,
            1.0,
            &mut out,
        );
        let out = Tensor::new(vec![batch, out_dim], out)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(out, rg, Op::Linear { x, w, b }))
    }

    /// Divides each row of a `[B, D]` tensor by its Euclidean norm.
    pub fn row_normalize(&mut self, x: Var, min_norm: f64) -> Result<Var, AutodiffError> {
        let vx = self.value(x);
        if vx.rank() != 2 {
            return Err(shape_err("row_normalize", format!("{:?}", vx.shape())));
        }
        let (rows, cols) = (vx.shape()[0], vx.shape()[1]);
        let mut norms = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = vx.row(r);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n >= min_norm) {
                return Err(AutodiffError::DegenerateRow { row: r, norm: n });
            }
            out.extend(row.iter().map(|v| v / n));
            norms.push(n);
        }
        let out = Tensor::new(vec![rows, cols], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::RowNormalize { x, norms }))
    }

    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var, AutodiffError> {
        let rg = self.rg(&[x, gamma, beta]);
        let (out, ctx) = norm::layer_norm_forward(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            eps,
            (x, gamma, beta),
        )?;
        Ok(self.push(out, rg, Op::LayerNorm(ctx)))
    }

    /// Per-channel normalization of `[B, C, H, W]`.
    ///
    /// Training mode normalizes with batch statistics and folds them into
    /// `stats`; evaluation mode reads `stats` and leaves them untouched.
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut norm::RunningStats,
        mode: norm::BatchNormMode,
        eps: f64,
    ) -> Result<Var, AutodiffError> {
        let rg = self.rg(&[x, gamma, beta]);
        let (out, ctx) = norm::batch_norm_forward(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            stats,
            mode,
            eps,
            (x, gamma, beta),
        )?;
        Ok(self.push(out, rg, Op::BatchNorm2d(ctx)))
    }

    /// Cross-correlation of `[B, Cin, H, W]` with `[Cout, Cin, KH, KW]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Var,
        geometry: Conv2dGeometry,
    ) -> Result<Var, AutodiffError> {
        let rg = self.rg(&[x, kernel, bias]);
        let (out, ctx) = conv::conv2d_forward(
            self.value(x),
            self.value(kernel),
            self.value(bias),
            geometry,
            (x, kernel, bias),
            rg,
        )?;
        Ok(self.push(out, rg, Op::Conv2d(ctx)))
    }

    /// Mean of squared differences over every element.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mse_loss", pred, target)?;
        let p = self.value(pred).values();
        let t = self.value(target).values();
        let n = p.len().max(1) as f64;
        let l = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        let rg = self.rg(&[pred, target]);
        Ok(self.push(Tensor::scalar(l), rg, Op::Mse { pred, target }))
    }

    /// Mean negative log-softmax probability of the labelled class.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
    ) -> Result<Var, AutodiffError> {
        let rg = self.rg(&[logits]);
        let (l, ctx) = loss::softmax_ce_forward(self.value(logits), labels, logits)?;
        Ok(self.push(Tensor::scalar(l), rg, Op::SoftmaxCe(ctx)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, format!("{:?} vs {:?}", sa, sb)));
        }
        Ok(())
    }

    /// Propagates d(loss)/d(node) back to every gradient-tracking leaf.
    ///
    /// Each node is visited once, in reverse execution order. Leaf
    /// gradients from multiple uses are summed.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::GraphConsumed);
        }
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        self.consumed = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let node = &self.nodes[idx];
            if let Op::Leaf = node.op {
                self.leaf_grads[idx] = Some(g);
                continue;
            }
            for (input, delta) in self.input_grads(idx, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(delta),
                }
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn input_grads(&self, idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf | Op::StopGradient => vec![],
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).values(), self.value(*b).values());
                vec![
                    (*a, g.iter().zip(vb).map(|(g, y)| g * y).collect()),
                    (*b, g.iter().zip(va).map(|(g, x)| g * x).collect()),
                ]
            }
            Op::Scale(x, f) => vec![(*x, g.iter().map(|v| v * f).collect())],
            Op::Sum(x) => vec![(*x, vec![g[0]; self.value(*x).numel()])],
            Op::Relu(x) => {
                let vx = self.value(*x).values();
                vec![(
                    *x,
                    g.iter()
                        .zip(vx)
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect(),
                )]
            }
            Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::Linear { x, w, b } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (batch, inner, out_dim) = (vx.shape()[0], vx.shape()[1], vw.shape()[1]);
                let mut out = Vec::with_capacity(3);
                if self.needs(*x) {
                    let mut dx = vec![0.0; batch * inner];
                    gemm(
                        g,
                        Layout::Normal,
                        vw.values(),
                        Layout::Transposed,
                        batch,
                        out_dim,
                        inner,
                        0.0,
                        &mut dx,
                    );
                    out.push((*x, dx));
                }
                if self.needs(*w) {
                    let mut dw = vec![0.0; inner * out_dim];
                    gemm(
                        vx.values(),
                        Layout::Transposed,
                        g,
                        Layout::Normal,
                        inner,
                        batch,
                        out_dim,
                        0.0,
                        &mut dw,
                    );
                    out.push((*w, dw));
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; out_dim];
                    for row in g.chunks_exact(out_dim) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    out.push((*b, db));
                }
                out
            }
            Op::RowNormalize { x, norms } => {
                let y = node.value.values();
                let cols = node.value.shape()[1];
                let mut dx = vec![0.0; y.len()];
                for (r, &n) in norms.iter().enumerate() {
                    let span = r * cols..(r + 1) * cols;
                    let (yr, gr) = (&y[span.clone()], &g[span.clone()]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, yv), gv) in dx[span].iter_mut().zip(yr).zip(gr) {
                        *d = (gv - yv * dot) / n;
                    }
                }
                vec![(*x, dx)]
            }
            Op::LayerNorm(ctx) => norm::layer_norm_backward(ctx, self.value(ctx.gamma), g),
            Op::BatchNorm2d(ctx) => norm::batch_norm_backward(ctx, self.value(ctx.gamma), g),
            Op::Conv2d(ctx) => conv::conv2d_backward(
                ctx,
                self.value(ctx.kernel),
                g,
                [self.needs(ctx.x), self.needs(ctx.kernel), self.needs(ctx.bias)],
            ),
            Op::Mse { pred, target } => {
                let (p, t) = (self.value(*pred).values(), self.value(*target).values());
                let scale = 2.0 * g[0] / p.len().max(1) as f64;
                let dp: Vec<f64> = p.iter().zip(t).map(|(a, b)| scale * (a - b)).collect();
                let dt = dp.iter().map(|v| -v).collect();
                vec![(*pred, dp), (*target, dt)]
            }
            Op::SoftmaxCe(ctx) => loss::softmax_ce_backward(ctx, g[0]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(shape: Vec<usize>, v: Vec<f64>) -> Tensor {
        Tensor::param(shape, v).unwrap()
    }

    #[test]
    fn linear_forward_matches_hand_arithmetic() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let w = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let b = g.constant(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).values(), &[4.0, 6.0]);
    }

    #[test]
    fn linear_identity_passthrough() {
        let mut g = Graph::new();
        let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let x = g.constant(eye.clone());
        let w = g.constant(eye.clone());
        let b = g.constant(Tensor::zeros(&[2]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).values(), eye.values());
    }

    #[test]
    fn linear_rejects_inner_mismatch() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 3]));
        let w = g.constant(Tensor::zeros(&[2, 4]));
        let b = g.constant(Tensor::zeros(&[4]));
        let err = g.linear(x, w, b).unwrap_err();
        assert!(matches!(err, AutodiffError::ShapeMismatch { op: "linear", .. }));
    }

    #[test]
    fn linear_weight_grad_scalar_case() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 1], vec![2.0]).unwrap());
        let w = g.leaf(param(vec![1, 1], vec![5.0]));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.linear(x, w, b).unwrap();
        let l = g.sum(y);
        g.backward(l).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[2.0]);
    }

    #[test]
    fn relu_values_and_grad() {
        let mut g = Graph::new();
        let x = g.leaf(param(vec![3], vec![-1.0, 0.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).values(), &[0.0, 0.0, 2.0]);

        let mut g = Graph::new();
        let x = g.leaf(param(vec![2], vec![-3.0, 4.0]));
        let y = g.relu(x);
        let l = g.sum(y);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn relu_identity_on_positive_orthant() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![4], vec![0.1, 2.0, 3.5, 9.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).values(), g.value(x).values());
    }

    #[test]
    fn square_derivative() {
        let mut g = Graph::new();
        let x = g.leaf(param(vec![1], vec![3.0]));
        let sq = g.mul(x, x).unwrap();
        let l = g.sum(sq);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn repeated_use_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(param(vec![1], vec![-7.25]));
        let y = g.add(x, x).unwrap();
        let l = g.sum(y);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn off_path_leaf_gets_nothing() {
        let mut g = Graph::new();
        let x = g.leaf(param(vec![1], vec![1.0]));
        let unused = g.leaf(param(vec![1], vec![1.0]));
        let l = g.sum(x);
        g.backward(l).unwrap();
        assert!(g.grad(unused).is_none());
    }

    #[test]
    fn backward_twice_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(param(vec![1], vec![1.0]));
        let l = g.sum(x);
        g.backward(l).unwrap();
        assert_eq!(g.backward(l), Err(AutodiffError::GraphConsumed));
    }

    #[test]
    fn backward_needs_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(param(vec![2], vec![1.0, 2.0]));
        assert!(matches!(
            g.backward(x),
            Err(AutodiffError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn stop_gradient_blocks_and_preserves_value() {
        let mut g = Graph::new();
        let x = g.leaf(param(vec![3], vec![1.0, -2.0, 0.5]));
        let w = g.leaf(param(vec![3], vec![4.0, 5.0, 6.0]));
        let sx = g.stop_gradient(x);
        assert_eq!(g.value(sx).values(), g.value(x).values());
        let prod = g.mul(sx, w).unwrap();
        let l = g.sum(prod);
        g.backward(l).unwrap();
        assert!(g.grad(x).is_none());
        assert_eq!(g.grad(w).unwrap(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn mse_values_and_grad() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        let t = g.constant(Tensor::new(vec![2], vec![1.0, 1.0]).unwrap());
        let l = g.mse_loss(p, t).unwrap();
        assert_eq!(g.value(l).item(), 1.0);

        let mut g = Graph::new();
        let p = g.leaf(param(vec![1], vec![3.0]));
        let t = g.constant(Tensor::new(vec![1], vec![1.0]).unwrap());
        let l = g.mse_loss(p, t).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(p).unwrap(), &[4.0]);

        let mut g = Graph::new();
        let p = g.constant(Tensor::new(vec![2], vec![0.3, 0.1]).unwrap());
        let l = g.mse_loss(p, p).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let q = g.constant(Tensor::zeros(&[3]));
        assert!(g.mse_loss(p, q).is_err());
    }

    #[test]
    fn row_normalize_hand_case() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap());
        let y = g.row_normalize(x, 1e-12).unwrap();
        let v = g.value(y).values();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        let z = g.constant(Tensor::zeros(&[1, 2]));
        assert!(matches!(
            g.row_normalize(z, 1e-12),
            Err(AutodiffError::DegenerateRow { row: 0, .. })
        ));
    }
}
