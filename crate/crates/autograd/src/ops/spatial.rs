use super::Op;
use crate::{Tensor, Var};

#[inline]
fn reflect(i: isize, len: usize) -> usize {
    let n = len as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

pub(super) fn upsample2_backward(grad: &Tensor) -> Tensor {
    let [n, c, h2, w2] = grad.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = Tensor::zeros([n, c, h, w]);
    let g = grad.data();
    let o = out.data_mut();
    for p in 0..n * c {
        for y in 0..h2 {
            for x in 0..w2 {
                o[(p * h + y / 2) * w + x / 2] += g[(p * h2 + y) * w2 + x];
            }
        }
    }
    out
}

pub(super) fn split_channels(grad: &Tensor, first: usize) -> (Tensor, Tensor) {
    let [n, c, h, w] = grad.shape();
    let plane = h * w;
    let second = c - first;
    let mut a = Vec::with_capacity(n * first * plane);
    let mut b = Vec::with_capacity(n * second * plane);
    for i in 0..n {
        let base = i * c * plane;
        a.extend_from_slice(&grad.data()[base..base + first * plane]);
        b.extend_from_slice(&grad.data()[base + first * plane..base + c * plane]);
    }
    (
        Tensor::new([n, first, h, w], a).expect("split sizes"),
        Tensor::new([n, second, h, w], b).expect("split sizes"),
    )
}

pub(super) fn avg_pool_reflect_backward(grad: &Tensor, radius: usize) -> Tensor {
    let [n, c, h, w] = grad.shape();
    let r = radius as isize;
    let area = ((2 * radius + 1) * (2 * radius + 1)) as f64;
    let mut out = Tensor::zeros(grad.shape());
    let g = grad.data();
    let o = out.data_mut();
    for p in 0..n * c {
        let base = p * h * w;
        for y in 0..h {
            for x in 0..w {
                let gv = g[base + y * w + x] / area;
                for dy in -r..=r {
                    let yy = reflect(y as isize + dy, h);
                    for dx in -r..=r {
                        let xx = reflect(x as isize + dx, w);
                        o[base + yy * w + xx] += gv;
                    }
                }
            }
        }
    }
    out
}

pub(super) fn diff_x_backward(grad: &Tensor) -> Tensor {
    let [n, c, h, wm] = grad.shape();
    let w = wm + 1;
    let mut out = Tensor::zeros([n, c, h, w]);
    let g = grad.data();
    let o = out.data_mut();
    for r in 0..n * c * h {
        for x in 0..wm {
            let v = g[r * wm + x];
            o[r * w + x] -= v;
            o[r * w + x + 1] += v;
        }
    }
    out
}

pub(super) fn diff_y_backward(grad: &Tensor) -> Tensor {
    let [n, c, hm, w] = grad.shape();
    let h = hm + 1;
    let mut out = Tensor::zeros([n, c, h, w]);
    let g = grad.data();
    let o = out.data_mut();
    for p in 0..n * c {
        for y in 0..hm {
            for x in 0..w {
                let v = g[(p * hm + y) * w + x];
                o[(p * h + y) * w + x] -= v;
                o[(p * h + y + 1) * w + x] += v;
            }
        }
    }
    out
}

/// Sample location along a row of width `w`: left tap, fractional weight, and
/// whether the unclamped coordinate fell inside `[0, w - 1]`.
#[inline]
pub fn horizontal_tap(xs: f64, w: usize) -> (usize, f64, bool) {
    let max = (w - 1) as f64;
    let inside = (0.0..=max).contains(&xs);
    let xc = xs.clamp(0.0, max);
    if w == 1 {
        return (0, 0.0, inside);
    }
    let x0 = (xc.floor() as usize).min(w - 2);
    (x0, xc - x0 as f64, inside)
}

pub(super) fn warp_x_backward(
    src: &Tensor,
    disp: &Tensor,
    sign: f64,
    grad: &Tensor,
    need_src: bool,
    need_disp: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let [n, c, h, w] = src.shape();
    let mut gs = need_src.then(|| Tensor::zeros(src.shape()));
    let mut gd = need_disp.then(|| Tensor::zeros(disp.shape()));
    let s = src.data();
    let g = grad.data();
    let d = disp.data();
    for i in 0..n {
        for y in 0..h {
            for x in 0..w {
                let di = (i * h + y) * w + x;
                let xs = x as f64 + sign * d[di];
                let (x0, a, inside) = horizontal_tap(xs, w);
                let x1 = (x0 + 1).min(w - 1);
                let mut slope_acc = 0.0;
                for ch in 0..c {
                    let row = ((i * c + ch) * h + y) * w;
                    let gv = g[row + x];
                    if let Some(gs) = gs.as_mut() {
                        let o = gs.data_mut();
                        o[row + x0] += gv * (1.0 - a);
                        o[row + x1] += gv * a;
                    }
                    slope_acc += gv * (s[row + x1] - s[row + x0]);
                }
                if let Some(gd) = gd.as_mut() {
                    // Clamped samples do not move with the disparity.
                    if inside {
                        gd.data_mut()[di] = slope_acc * sign;
                    }
                }
            }
        }
    }
    (gs, gd)
}

impl<'t> Var<'t> {
    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&self) -> Var<'t> {
        let v = self.value();
        let [n, c, h, w] = v.shape();
        let out = Tensor::from_fn([n, c, 2 * h, 2 * w], |[i, j, y, x]| v.at([i, j, y / 2, x / 2]));
        self.unary(out, Op::Upsample2(self.id()))
    }

    /// Channel-wise concatenation.
    pub fn concat(&self, other: &Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let [n, ca, h, w] = a.shape();
        let [nb, cb, hb, wb] = b.shape();
        assert_eq!((n, h, w), (nb, hb, wb), "concat: spatial shape mismatch");
        let plane = h * w;
        let mut data = Vec::with_capacity(n * (ca + cb) * plane);
        for i in 0..n {
            data.extend_from_slice(&a.data()[i * ca * plane..(i + 1) * ca * plane]);
            data.extend_from_slice(&b.data()[i * cb * plane..(i + 1) * cb * plane]);
        }
        let out = Tensor::new([n, ca + cb, h, w], data).expect("concat sizes");
        self.binary(other, out, Op::Concat(self.id(), other.id()))
    }

    /// `window x window` mean filter (odd window) with reflection at the
    /// borders; keeps the shape.
    pub fn avg_pool_reflect(&self, window: usize) -> Var<'t> {
        assert!(window % 2 == 1, "avg_pool_reflect: window must be odd");
        let radius = window / 2;
        let r = radius as isize;
        let area = (window * window) as f64;
        let v = self.value();
        let [n, c, h, w] = v.shape();
        assert!(
            h > radius && w > radius,
            "avg_pool_reflect: {h}x{w} input too small for window {window}"
        );
        let src = v.data();
        let mut out = Tensor::zeros(v.shape());
        let o = out.data_mut();
        for p in 0..n * c {
            let base = p * h * w;
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for dy in -r..=r {
                        let yy = reflect(y as isize + dy, h);
                        for dx in -r..=r {
                            acc += src[base + yy * w + reflect(x as isize + dx, w)];
                        }
                    }
                    o[base + y * w + x] = acc / area;
                }
            }
        }
        self.unary(
            out,
            Op::AvgPoolReflect {
                x: self.id(),
                radius,
            },
        )
    }

    /// Forward difference along x: `out[.., x] = in[.., x + 1] - in[.., x]`.
    pub fn diff_x(&self) -> Var<'t> {
        let v = self.value();
        let [n, c, h, w] = v.shape();
        let out = Tensor::from_fn([n, c, h, w - 1], |[i, j, y, x]| {
            v.at([i, j, y, x + 1]) - v.at([i, j, y, x])
        });
        self.unary(out, Op::DiffX(self.id()))
    }

    /// Forward difference along y.
    pub fn diff_y(&self) -> Var<'t> {
        let v = self.value();
        let [n, c, h, w] = v.shape();
        let out = Tensor::from_fn([n, c, h - 1, w], |[i, j, y, x]| {
            v.at([i, j, y + 1, x]) - v.at([i, j, y, x])
        });
        self.unary(out, Op::DiffY(self.id()))
    }

    /// Resamples `self` (`[n, c, h, w]`) along rows: output pixel `(y, x)`
    /// reads the source at `x + sign * disp(y, x)` with linear interpolation.
    /// Coordinates outside the row are clamped to the border.
    ///
    /// `disp` is `[n, 1, h, w]`; `sign` is `-1.0` or `1.0`.
    pub fn warp_horizontal(&self, disp: &Var<'t>, sign: f64) -> Var<'t> {
        assert!(sign == 1.0 || sign == -1.0, "warp sign must be +-1");
        let s = self.value();
        let d = disp.value();
        let [n, c, h, w] = s.shape();
        assert_eq!(d.shape(), [n, 1, h, w], "warp: disparity shape mismatch");
        let mut out = Tensor::zeros(s.shape());
        let sd = s.data();
        let dd = d.data();
        let o = out.data_mut();
        for i in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let xs = x as f64 + sign * dd[(i * h + y) * w + x];
                    let (x0, a, _) = horizontal_tap(xs, w);
                    let x1 = (x0 + 1).min(w - 1);
                    for ch in 0..c {
                        let row = ((i * c + ch) * h + y) * w;
                        o[row + x] = (1.0 - a) * sd[row + x0] + a * sd[row + x1];
                    }
                }
            }
        }
        self.binary(
            disp,
            out,
            Op::WarpX {
                src: self.id(),
                disp: disp.id(),
                sign,
            },
        )
    }
}
