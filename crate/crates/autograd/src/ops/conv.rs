//! 2-D convolution through im2col and a dense matrix product.

use super::Op;
use crate::{Tensor, Var};

fn out_dim(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

struct Geometry {
    ci: usize,
    h: usize,
    w: usize,
    k: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.ci * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Calls `f(col_row, col_index, input_index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let Geometry {
            ci,
            h,
            w,
            k,
            ho,
            wo,
            stride,
            pad,
        } = *self;
        for c in 0..ci {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = (c * h + iy as usize) * w;
                        let col_row = oy * wo;
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            f(row, col_row + ox, in_row + ix as usize);
                        }
                    }
                }
            }
        }
    }
}

fn im2col(geo: &Geometry, input: &[f64]) -> Vec<f64> {
    let n_cols = geo.cols();
    let mut cols = vec![0.0; geo.rows() * n_cols];
    geo.for_each_tap(|row, col, idx| cols[row * n_cols + col] = input[idx]);
    cols
}

fn col2im(geo: &Geometry, cols: &[f64], out: &mut [f64]) {
    let n_cols = geo.cols();
    geo.for_each_tap(|row, col, idx| out[idx] += cols[row * n_cols + col]);
}

/// `c = alpha * a(m x k) * b(k x n) + beta * c`, with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= (m - 1) * rsa + (k - 1) * csa + 1);
    debug_assert!(b.len() >= (k - 1) * rsb + (n - 1) * csb + 1);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the slices cover every index touched for the given dimensions
    // and strides, checked above in debug builds and guaranteed by callers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<'t> Var<'t> {
    /// Square-kernel convolution with zero padding.
    ///
    /// `self` is `[n, ci, h, w]`, `weight` is `[co, ci, k, k]` and `bias`, when
    /// given, is `[1, co, 1, 1]`.
    pub fn conv2d(
        &self,
        weight: &Var<'t>,
        bias: Option<&Var<'t>>,
        stride: usize,
        pad: usize,
    ) -> Var<'t> {
        let x = self.value();
        let wt = weight.value();
        let [n, ci, h, w] = x.shape();
        let [co, wci, k, k2] = wt.shape();
        assert_eq!(k, k2, "conv2d: kernel must be square");
        assert_eq!(ci, wci, "conv2d: input has {ci} channels, weight expects {wci}");
        assert!(stride >= 1, "conv2d: stride must be positive");
        let geo = Geometry {
            ci,
            h,
            w,
            k,
            ho: out_dim(h, k, stride, pad),
            wo: out_dim(w, k, stride, pad),
            stride,
            pad,
        };
        let bias_val = bias.map(|b| {
            let v = b.value();
            assert_eq!(v.len(), co, "conv2d: bias must have {co} entries");
            v
        });
        let rg = self.requires_grad()
            || weight.requires_grad()
            || bias.map(|b| b.requires_grad()).unwrap_or(false);
        let plane_in = ci * h * w;
        let plane_out = co * geo.cols();
        let mut out = Tensor::zeros([n, co, geo.ho, geo.wo]);
        let mut all_cols = Vec::with_capacity(n);
        for i in 0..n {
            let cols = im2col(&geo, &x.data()[i * plane_in..(i + 1) * plane_in]);
            let dst = &mut out.data_mut()[i * plane_out..(i + 1) * plane_out];
            if let Some(b) = &bias_val {
                for (c, chunk) in dst.chunks_mut(geo.cols()).enumerate() {
                    chunk.fill(b.data()[c]);
                }
            }
            gemm(
                co,
                geo.rows(),
                geo.cols(),
                wt.data(),
                (geo.rows(), 1),
                &cols,
                (geo.cols(), 1),
                if bias_val.is_some() { 1.0 } else { 0.0 },
                dst,
            );
            // Column buffers only matter to the backward pass.
            if rg {
                all_cols.push(cols);
            }
        }
        self.tape().push(
            out,
            Op::Conv2d {
                x: self.id(),
                weight: weight.id(),
                bias: bias.map(|b| b.id()),
                stride,
                pad,
                cols: all_cols,
            },
            rg,
        )
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    cols: &[Vec<f64>],
    grad: &Tensor,
    stride: usize,
    pad: usize,
    need_x: bool,
    need_w: bool,
    need_b: bool,
) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
    let [n, ci, h, w] = x.shape();
    let [co, _, k, _] = weight.shape();
    let [_, _, ho, wo] = grad.shape();
    let geo = Geometry {
        ci,
        h,
        w,
        k,
        ho,
        wo,
        stride,
        pad,
    };
    let rows = geo.rows();
    let n_cols = geo.cols();
    let plane_out = co * n_cols;
    let plane_in = ci * h * w;

    let mut gx = need_x.then(|| Tensor::zeros(x.shape()));
    let mut gw = need_w.then(|| Tensor::zeros(weight.shape()));
    let mut gb = need_b.then(|| Tensor::zeros([1, co, 1, 1]));
    let mut dcols = if need_x { vec![0.0; rows * n_cols] } else { Vec::new() };

    for i in 0..n {
        let dy = &grad.data()[i * plane_out..(i + 1) * plane_out];
        if let Some(gw) = gw.as_mut() {
            // dW += dY (co x hw) * cols^T (hw x rows)
            gemm(co, n_cols, rows, dy, (n_cols, 1), &cols[i], (1, n_cols), 1.0, gw.data_mut());
        }
        if let Some(gb) = gb.as_mut() {
            for (c, chunk) in dy.chunks(n_cols).enumerate() {
                gb.data_mut()[c] += chunk.iter().sum::<f64>();
            }
        }
        if let Some(gx) = gx.as_mut() {
            // dcols = W^T (rows x co) * dY (co x hw)
            gemm(rows, co, n_cols, weight.data(), (1, rows), dy, (n_cols, 1), 0.0, &mut dcols);
            col2im(&geo, &dcols, &mut gx.data_mut()[i * plane_in..(i + 1) * plane_in]);
        }
    }
    (gx, gw, gb)
}
