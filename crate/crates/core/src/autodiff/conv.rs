use super::graph::Var;
use super::linalg::{gemm, Layout};
use super::{AutodiffError, Tensor};

/// Stride and zero-padding of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Conv2dGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl Default for Conv2dGeometry {
    fn default() -> Self {
        Self {
            stride: 2,
            padding: 1,
        }
    }
}

impl Conv2dGeometry {
    /// Output extent along one spatial axis.
    pub fn output_len(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if self.stride == 0 || padded < kernel {
            return None;
        }
        Some((padded - kernel) / self.stride + 1)
    }
}

#[derive(Clone, Copy)]
struct Dims {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl Dims {
    fn rows(&self) -> usize {
        self.batch * self.oh * self.ow
    }
    fn cols(&self) -> usize {
        self.cin * self.kh * self.kw
    }
}

pub(super) struct ConvCtx {
    pub x: Var,
    pub kernel: Var,
    pub bias: Var,
    geom: Conv2dGeometry,
    dims: Dims,
    // im2col matrix [B·OH·OW, Cin·KH·KW]; empty when no gradient is needed.
    cols: Vec<f64>,
}

fn im2col(x: &[f64], d: Dims, geom: Conv2dGeometry) -> Vec<f64> {
    let ncols = d.cols();
    let mut cols = vec![0.0; d.rows() * ncols];
    let pad = geom.padding as isize;
    for b in 0..d.batch {
        for oy in 0..d.oh {
            for ox in 0..d.ow {
                let row = ((b * d.oh + oy) * d.ow + ox) * ncols;
                let iy0 = (oy * geom.stride) as isize - pad;
                let ix0 = (ox * geom.stride) as isize - pad;
                for c in 0..d.cin {
                    let plane = (b * d.cin + c) * d.h * d.w;
                    for ky in 0..d.kh {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        for kx in 0..d.kw {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= d.w as isize {
                                continue;
                            }
                            cols[row + (c * d.kh + ky) * d.kw + kx] =
                                x[plane + iy as usize * d.w + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &[f64], d: Dims, geom: Conv2dGeometry) -> Vec<f64> {
    let ncols = d.cols();
    let mut dx = vec![0.0; d.batch * d.cin * d.h * d.w];
    let pad = geom.padding as isize;
    for b in 0..d.batch {
        for oy in 0..d.oh {
            for ox in 0..d.ow {
                let row = ((b * d.oh + oy) * d.ow + ox) * ncols;
                let iy0 = (oy * geom.stride) as isize - pad;
                let ix0 = (ox * geom.stride) as isize - pad;
                for c in 0..d.cin {
                    let plane = (b * d.cin + c) * d.h * d.w;
                    for ky in 0..d.kh {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        for kx in 0..d.kw {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= d.w as isize {
                                continue;
                            }
                            dx[plane + iy as usize * d.w + ix as usize] +=
                                dcols[row + (c * d.kh + ky) * d.kw + kx];
                        }
                    }
                }
            }
        }
    }
    dx
}

pub(super) fn conv2d_forward(
    x: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    geom: Conv2dGeometry,
    vars: (Var, Var, Var),
    keep_context: bool,
) -> Result<(Tensor, ConvCtx), AutodiffError> {
    if x.rank() != 4 || kernel.rank() != 4 {
        return Err(AutodiffError::ShapeMismatch {
            op: "conv2d",
            detail: format!("input {:?} and kernel {:?} must be 4-D", x.shape(), kernel.shape()),
        });
    }
    let (xs, ks) = (x.shape(), kernel.shape());
    if xs[1] != ks[1] || bias.shape() != [ks[0]] {
        return Err(AutodiffError::ShapeMismatch {
            op: "conv2d",
            detail: format!("input {:?}, kernel {:?}, bias {:?}", xs, ks, bias.shape()),
        });
    }
    let (Some(oh), Some(ow)) = (geom.output_len(xs[2], ks[2]), geom.output_len(xs[3], ks[3])) else {
        return Err(AutodiffError::ShapeMismatch {
            op: "conv2d",
            detail: format!("kernel {:?} does not fit input {:?}", ks, xs),
        });
    };
    let d = Dims {
        batch: xs[0],
        cin: xs[1],
        h: xs[2],
        w: xs[3],
        cout: ks[0],
        kh: ks[2],
        kw: ks[3],
        oh,
        ow,
    };
    let cols = im2col(x.values(), d, geom);
    let mut rows_out = vec![0.0; d.rows() * d.cout];
    gemm(
        &cols,
        Layout::Normal,
        kernel.values(),
        Layout::Transposed,
        d.rows(),
        d.cols(),
        d.cout,
        0.0,
        &mut rows_out,
    );
    let spatial = oh * ow;
    let mut out = vec![0.0; d.batch * d.cout * spatial];
    for b in 0..d.batch {
        for s in 0..spatial {
            let r = (b * spatial + s) * d.cout;
            for co in 0..d.cout {
                out[(b * d.cout + co) * spatial + s] = rows_out[r + co] + bias.values()[co];
            }
        }
    }
    let (xv, kv, bv) = vars;
    Ok((
        Tensor::new(vec![d.batch, d.cout, oh, ow], out)?,
        ConvCtx {
            x: xv,
            kernel: kv,
            bias: bv,
            geom,
            dims: d,
            cols: if keep_context { cols } else { Vec::new() },
        },
    ))
}

pub(super) fn conv2d_backward(
    ctx: &ConvCtx,
    kernel: &Tensor,
    g: &[f64],
    needs: [bool; 3],
) -> Vec<(Var, Vec<f64>)> {
    let d = ctx.dims;
    let spatial = d.oh * d.ow;
    // Rearrange [B, Cout, OH, OW] into [B·OH·OW, Cout].
    let mut g_rows = vec![0.0; d.rows() * d.cout];
    for b in 0..d.batch {
        for co in 0..d.cout {
            let src = (b * d.cout + co) * spatial;
            for s in 0..spatial {
                g_rows[(b * spatial + s) * d.cout + co] = g[src + s];
            }
        }
    }
    let mut out = Vec::with_capacity(3);
    if needs[0] {
        let mut dcols = vec![0.0; d.rows() * d.cols()];
        gemm(
            &g_rows,
            Layout::Normal,
            kernel.values(),
            Layout::Normal,
            d.rows(),
            d.cout,
            d.cols(),
            0.0,
            &mut dcols,
        );
        out.push((ctx.x, col2im(&dcols, d, ctx.geom)));
    }
    if needs[1] {
        let mut dk = vec![0.0; d.cout * d.cols()];
        gemm(
            &g_rows,
            Layout::Transposed,
            &ctx.cols,
            Layout::Normal,
            d.cout,
            d.rows(),
            d.cols(),
            0.0,
            &mut dk,
        );
        out.push((ctx.kernel, dk));
    }
    if needs[2] {
        let mut db = vec![0.0; d.cout];
        for row in g_rows.chunks_exact(d.cout) {
            db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
        out.push((ctx.bias, db));
    }
    out
}
