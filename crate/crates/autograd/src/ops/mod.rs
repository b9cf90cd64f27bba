mod conv;
mod elementwise;
mod reduce;
pub(crate) mod spatial;


use crate::tape::Node;
use crate::Tensor;

pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    /// `scale * x + shift`
    Affine {
        x: usize,
        scale: f64,
    },
    /// `numerator / x`
    Recip {
        x: usize,
        numerator: f64,
    },
    Abs(usize),
    Square(usize),
    Sqrt(usize),
    Log1p(usize),
    Exp(usize),
    Relu(usize),
    Elu(usize),
    Sigmoid(usize),
    Conv2d {
        x: usize,
        weight: usize,
        bias: Option<usize>,
        stride: usize,
        pad: usize,
        cols: Vec<Vec<f64>>,
    },
    Upsample2(usize),
    Concat(usize, usize),
    AvgPoolReflect {
        x: usize,
        radius: usize,
    },
    MeanChannels(usize),
    ExpandChannels(usize),
    BroadcastScalar(usize),
    Sum(usize),
    Mean(usize),
    DiffX(usize),
    DiffY(usize),
    WarpX {
        src: usize,
        disp: usize,
        sign: f64,
    },
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, grad: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&grad),
        slot @ None => *slot = Some(grad),
    }
}

pub(crate) fn backward(
    op: &Op,
    out: &Tensor,
    grad: &Tensor,
    nodes: &[Node],
    grads: &mut [Option<Tensor>],
) {
    let val = |id: usize| &*nodes[id].value;
    let needs = |id: usize| nodes[id].requires_grad;
    match *op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, a, grad.clone());
            accumulate(nodes, grads, b, grad.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, a, grad.clone());
            if needs(b) {
                accumulate(nodes, grads, b, grad.map(|g| -g));
            }
        }
        Op::Mul(a, b) => {
            if needs(a) {
                accumulate(nodes, grads, a, grad.zip_map(val(b), |g, v| g * v));
            }
            if needs(b) {
                accumulate(nodes, grads, b, grad.zip_map(val(a), |g, v| g * v));
            }
        }
        Op::Div(a, b) => {
            let vb = val(b);
            if needs(a) {
                accumulate(nodes, grads, a, grad.zip_map(vb, |g, v| g / v));
            }
            if needs(b) {
                // d(a/b)/db = -(a/b)/b
                let t = out.zip_map(vb, |o, v| -o / v);
                accumulate(nodes, grads, b, t.zip_map(grad, |t, g| t * g));
            }
        }
        Op::Affine { x, scale } => accumulate(nodes, grads, x, grad.map(|g| g * scale)),
        Op::Recip { x, numerator } => {
            let t = val(x).map(|v| -numerator / (v * v));
            accumulate(nodes, grads, x, t.zip_map(grad, |t, g| t * g));
        }
        Op::Abs(x) => {
            let t = val(x).zip_map(grad, |v, g| {
                if v > 0.0 {
                    g
                } else if v < 0.0 {
                    -g
                } else {
                    0.0
                }
            });
            accumulate(nodes, grads, x, t);
        }
        Op::Square(x) => accumulate(nodes, grads, x, val(x).zip_map(grad, |v, g| 2.0 * v * g)),
        Op::Sqrt(x) => accumulate(
            nodes,
            grads,
            x,
            out.zip_map(grad, |o, g| if o > 0.0 { 0.5 * g / o } else { 0.0 }),
        ),
        Op::Log1p(x) => accumulate(nodes, grads, x, val(x).zip_map(grad, |v, g| g / (1.0 + v))),
        Op::Exp(x) => accumulate(nodes, grads, x, out.zip_map(grad, |o, g| o * g)),
        Op::Relu(x) => accumulate(
            nodes,
            grads,
            x,
            val(x).zip_map(grad, |v, g| if v > 0.0 { g } else { 0.0 }),
        ),
        Op::Elu(x) => accumulate(
            nodes,
            grads,
            x,
            out.zip_map(grad, |o, g| if o > 0.0 { g } else { g * (o + 1.0) }),
        ),
        Op::Sigmoid(x) => accumulate(nodes, grads, x, out.zip_map(grad, |o, g| g * o * (1.0 - o))),
        Op::Conv2d {
            x,
            weight,
            bias,
            stride,
            pad,
            ref cols,
        } => {
            let (gx, gw, gb) = conv::conv2d_backward(
                val(x),
                val(weight),
                cols,
                grad,
                stride,
                pad,
                needs(x),
                needs(weight),
                bias.map(needs).unwrap_or(false),
            );
            if let Some(gx) = gx {
                accumulate(nodes, grads, x, gx);
            }
            if let Some(gw) = gw {
                accumulate(nodes, grads, weight, gw);
            }
            if let (Some(b), Some(gb)) = (bias, gb) {
                accumulate(nodes, grads, b, gb);
            }
        }
        Op::Upsample2(x) => accumulate(nodes, grads, x, spatial::upsample2_backward(grad)),
        Op::Concat(a, b) => {
            let ca = val(a).shape()[1];
            let (ga, gb) = spatial::split_channels(grad, ca);
            accumulate(nodes, grads, a, ga);
            accumulate(nodes, grads, b, gb);
        }
        Op::AvgPoolReflect { x, radius } => accumulate(
            nodes,
            grads,
            x,
            spatial::avg_pool_reflect_backward(grad, radius),
        ),
        Op::MeanChannels(x) => {
            let c = val(x).shape()[1];
            accumulate(nodes, grads, x, reduce::mean_channels_backward(grad, c))
        }
        Op::ExpandChannels(x) => accumulate(nodes, grads, x, reduce::sum_channels(grad)),
        Op::BroadcastScalar(x) => accumulate(nodes, grads, x, Tensor::scalar(grad.sum())),
        Op::Sum(x) => accumulate(nodes, grads, x, Tensor::full(val(x).shape(), grad.item())),
        Op::Mean(x) => {
            let v = val(x);
            let g = grad.item() / v.len() as f64;
            accumulate(nodes, grads, x, Tensor::full(v.shape(), g))
        }
        Op::DiffX(x) => accumulate(nodes, grads, x, spatial::diff_x_backward(grad)),
        Op::DiffY(x) => accumulate(nodes, grads, x, spatial::diff_y_backward(grad)),
        Op::WarpX { src, disp, sign } => {
            let (gs, gd) =
                spatial::warp_x_backward(val(src), val(disp), sign, grad, needs(src), needs(disp));
            if let Some(gs) = gs {
                accumulate(nodes, grads, src, gs);
            }
            if let Some(gd) = gd {
                accumulate(nodes, grads, disp, gd);
            }
        }
    }
}
