use super::Op;
use crate::{Tensor, Var};

pub(super) fn mean_channels_backward(grad: &Tensor, channels: usize) -> Tensor {
    let [n, _, h, w] = grad.shape();
    let plane = h * w;
    let scale = 1.0 / channels as f64;
    let mut out = Tensor::zeros([n, channels, h, w]);
    let g = grad.data();
    let o = out.data_mut();
    for i in 0..n {
        let src = &g[i * plane..(i + 1) * plane];
        for c in 0..channels {
            let dst = &mut o[(i * channels + c) * plane..(i * channels + c + 1) * plane];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s * scale;
            }
        }
    }
    out
}

pub(super) fn sum_channels(t: &Tensor) -> Tensor {
    let [n, c, h, w] = t.shape();
    let plane = h * w;
    let mut out = Tensor::zeros([n, 1, h, w]);
    let src = t.data();
    let dst = out.data_mut();
    for i in 0..n {
        for j in 0..c {
            let s = &src[(i * c + j) * plane..(i * c + j + 1) * plane];
            for (d, v) in dst[i * plane..(i + 1) * plane].iter_mut().zip(s) {
                *d += v;
            }
        }
    }
    out
}

impl<'t> Var<'t> {
    /// `[n, c, h, w] -> [n, 1, h, w]`
    pub fn mean_channels(&self) -> Var<'t> {
        let v = self.value();
        let c = v.shape()[1];
        let mut out = sum_channels(&v);
        for x in out.data_mut() {
            *x /= c as f64;
        }
        self.unary(out, Op::MeanChannels(self.id()))
    }

    /// `[n, 1, h, w] -> [n, c, h, w]` by repetition.
    pub fn expand_channels(&self, channels: usize) -> Var<'t> {
        let v = self.value();
        assert_eq!(v.shape()[1], 1, "expand_channels needs a single channel");
        let out = mean_channels_backward(&v, channels).map(|x| x * channels as f64);
        self.unary(out, Op::ExpandChannels(self.id()))
    }

    /// Repeats a `[1, 1, 1, 1]` value over `shape`.
    pub fn broadcast_scalar(&self, shape: [usize; 4]) -> Var<'t> {
        let v = self.value();
        assert_eq!(v.shape(), [1, 1, 1, 1], "broadcast_scalar needs a scalar");
        self.unary(Tensor::full(shape, v.item()), Op::BroadcastScalar(self.id()))
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.value().sum();
        self.unary(Tensor::scalar(s), Op::Sum(self.id()))
    }

    pub fn mean(&self) -> Var<'t> {
        let v = self.value();
        let m = v.sum() / v.len() as f64;
        self.unary(Tensor::scalar(m), Op::Mean(self.id()))
    }
}
