//! Central finite-difference checks for every differentiable op.

use autograd::{Tape, Tensor, Var};

fn lcg(seed: u64) -> impl FnMut() -> f64 {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64) / ((1u64 << 53) as f64)
    }
}

fn random(shape: [usize; 4], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut r = lcg(seed);
    Tensor::from_fn(shape, |_| lo + (hi - lo) * r())
}

/// Compares the analytic gradient of `f(inputs).sum_weighted()` with central
/// differences for every input element.
fn check(inputs: &[Tensor], f: impl for<'t> Fn(&[Var<'t>]) -> Var<'t>, tol: f64) {
    // Random projection turns any output into a scalar with a generic gradient.
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = f(&vars);
    let proj = random(out.shape(), -1.0, 1.0, 99);
    let loss = (out * tape.constant(proj.clone())).sum();
    let grads = tape.backward(loss).unwrap();

    let eval = |ins: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&vars);
        out.value()
            .data()
            .iter()
            .zip(proj.data())
            .map(|(a, b)| a * b)
            .sum()
    };

    let eps = 1e-6;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt_or_zeros(vars[k]);
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += eps;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= eps;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let a = analytic.data()[i];
            assert!(
                (a - numeric).abs() <= tol * (1.0 + numeric.abs()),
                "input {k} element {i}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

#[test]
fn elementwise_binary() {
    let a = random([2, 2, 3, 3], 0.5, 2.0, 1);
    let b = random([2, 2, 3, 3], 0.5, 2.0, 2);
    check(&[a.clone(), b.clone()], |v| v[0] + v[1], 1e-6);
    check(&[a.clone(), b.clone()], |v| v[0] - v[1], 1e-6);
    check(&[a.clone(), b.clone()], |v| v[0] * v[1], 1e-6);
    check(&[a, b], |v| v[0] / v[1], 1e-6);
}

#[test]
fn elementwise_unary() {
    let a = random([1, 2, 4, 4], -2.0, 2.0, 3);
    let pos = random([1, 2, 4, 4], 0.2, 3.0, 4);
    check(&[a.clone()], |v| v[0].affine(1.7, -0.3), 1e-6);
    check(&[a.clone()], |v| v[0].square(), 1e-6);
    check(&[a.clone()], |v| v[0].exp(), 1e-6);
    check(&[a.clone()], |v| v[0].elu(), 1e-5);
    check(&[a.clone()], |v| v[0].sigmoid(), 1e-6);
    check(&[a.clone()], |v| v[0].relu(), 1e-5);
    check(&[a], |v| v[0].abs(), 1e-5);
    check(&[pos.clone()], |v| v[0].recip(3.0), 1e-6);
    check(&[pos.clone()], |v| v[0].sqrt(), 1e-6);
    check(&[pos], |v| v[0].log1p(), 1e-6);
}

#[test]
fn reductions() {
    let a = random([2, 3, 3, 4], -1.0, 1.0, 5);
    check(&[a.clone()], |v| v[0].sum(), 1e-6);
    check(&[a.clone()], |v| v[0].mean(), 1e-6);
    check(&[a.clone()], |v| v[0].mean_channels(), 1e-6);
    let single = random([2, 1, 3, 4], -1.0, 1.0, 6);
    check(&[single.clone()], |v| v[0].expand_channels(3), 1e-6);
    check(&[single], |v| v[0] / v[0].mean().broadcast_scalar([2, 1, 3, 4]), 1e-6);
}

#[test]
fn convolution() {
    let x = random([2, 3, 6, 5], -1.0, 1.0, 7);
    let w = random([4, 3, 3, 3], -0.5, 0.5, 8);
    let b = random([1, 4, 1, 1], -0.5, 0.5, 9);
    check(&[x.clone(), w.clone(), b.clone()], |v| v[0].conv2d(&v[1], Some(&v[2]), 1, 1), 1e-6);
    check(&[x.clone(), w.clone(), b], |v| v[0].conv2d(&v[1], Some(&v[2]), 2, 1), 1e-6);
    let w1 = random([2, 3, 1, 1], -0.5, 0.5, 10);
    check(&[x, w1], |v| v[0].conv2d(&v[1], None, 1, 0), 1e-6);
}

#[test]
fn conv_matches_direct_loop() {
    let x = random([1, 2, 5, 7], -1.0, 1.0, 11);
    let w = random([3, 2, 3, 3], -1.0, 1.0, 12);
    let tape = Tape::new();
    let out = tape
        .constant(x.clone())
        .conv2d(&tape.constant(w.clone()), None, 2, 1)
        .value();
    assert_eq!(out.shape(), [1, 3, 3, 4]);
    for co in 0..3 {
        for oy in 0..3 {
            for ox in 0..4 {
                let mut acc = 0.0;
                for ci in 0..2 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            if (0..5).contains(&iy) && (0..7).contains(&ix) {
                                acc += x.at([0, ci, iy as usize, ix as usize]) * w.at([co, ci, ky, kx]);
                            }
                        }
                    }
                }
                assert!((out.at([0, co, oy, ox]) - acc).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn spatial_ops() {
    let a = random([1, 2, 4, 6], -1.0, 1.0, 13);
    let b = random([1, 3, 4, 6], -1.0, 1.0, 14);
    check(&[a.clone()], |v| v[0].upsample2(), 1e-6);
    check(&[a.clone(), b], |v| v[0].concat(&v[1]), 1e-6);
    check(&[a.clone()], |v| v[0].avg_pool_reflect(3), 1e-6);
    check(&[a.clone()], |v| v[0].avg_pool_reflect(5), 1e-6);
    check(&[a.clone()], |v| v[0].diff_x(), 1e-6);
    check(&[a], |v| v[0].diff_y(), 1e-6);
}

#[test]
fn horizontal_warp() {
    let src = random([2, 3, 4, 10], 0.0, 1.0, 15);
    // Keep samples away from integer coordinates and the borders, where the
    // interpolant has kinks.
    let disp = Tensor::from_fn([2, 1, 4, 10], |[i, _, y, x]| {
        let base = 0.3 + 0.37 * ((i + y + x) % 4) as f64;
        base.min(x as f64 - 0.2).max(0.1)
    });
    check(&[src.clone(), disp.clone()], |v| v[0].warp_horizontal(&v[1], -1.0), 1e-5);
    let disp_r = Tensor::from_fn([2, 1, 4, 10], |[i, _, y, x]| {
        let base = 0.3 + 0.37 * ((i + y + x) % 4) as f64;
        base.min(8.8 - x as f64).max(0.1)
    });
    check(&[src, disp_r], |v| v[0].warp_horizontal(&v[1], 1.0), 1e-5);
}

#[test]
fn detach_blocks_gradient() {
    let tape = Tape::new();
    let a = tape.var(random([1, 1, 3, 3], 0.0, 1.0, 16));
    let b = tape.var(random([1, 1, 3, 3], 0.0, 1.0, 17));
    let loss = (a * b.detach()).sum();
    let g = tape.backward(loss).unwrap();
    assert!(g.wrt(b).is_none());
    assert_eq!(g.wrt_or_zeros(b).max_abs(), 0.0);
    assert_eq!(g.wrt(a).unwrap(), &*b.value());
}

#[test]
fn backward_rejects_non_scalar() {
    let tape = Tape::new();
    let a = tape.var(Tensor::zeros([1, 1, 2, 2]));
    assert!(tape.backward(a).is_err());
}

#[test]
fn shared_input_accumulates() {
    let tape = Tape::new();
    let a = tape.var(Tensor::full([1, 1, 1, 2], 3.0));
    let loss = (a * a + a).sum();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.wrt(a).unwrap().data(), &[7.0, 7.0]);
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

    #[test]
    fn convolution_gradients_for_any_geometry(
        ci in 1usize..3,
        co in 1usize..3,
        h in 3usize..7,
        w in 3usize..7,
        k in proptest::sample::select(vec![1usize, 3]),
        stride in 1usize..3,
        seed in 0u64..1000,
    ) {
        let pad = k / 2;
        let x = random([1, ci, h, w], -1.0, 1.0, seed);
        let wt = random([co, ci, k, k], -0.5, 0.5, seed + 1);
        check(&[x, wt], |v| v[0].conv2d(&v[1], None, stride, pad).elu(), 1e-5);
    }
}
