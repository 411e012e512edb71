//! Central finite-difference checks of every layer's backward pass.

use super::layers::*;
use super::params::{Grads, ParameterSet};
use super::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f32 = 1e-3;
const TOL: f64 = 1e-3;

fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor { shape: shape.to_vec(), data: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() }
}

/// Projected scalar loss `sum(r * y)` accumulated in f64.
fn project(y: &Tensor, r: &Tensor) -> f64 {
    y.data.iter().zip(&r.data).map(|(&a, &b)| a as f64 * b as f64).sum()
}

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Checks input and parameter gradients of a layer; returns the worst error.
fn check_layer(
    ps: &mut ParameterSet,
    x: &Tensor,
    fwd: impl Fn(&ParameterSet, &Tensor) -> Tensor,
    bwd: impl Fn(&ParameterSet, &mut Grads, &Tensor, &Tensor) -> Tensor,
    rng: &mut impl Rng,
) -> f64 {
    let y = fwd(ps, x);
    let r = rand_tensor(&y.shape, rng);
    let mut grads = Grads::zeros_like(ps);
    let dx = bwd(ps, &mut grads, x, &r);
    assert_eq!(dx.shape, x.shape);

    let mut xp = x.clone();
    let num_dx: Vec<f64> = (0..x.len())
        .map(|i| {
            let orig = xp.data[i];
            xp.data[i] = orig + EPS;
            let lp = project(&fwd(ps, &xp), &r);
            xp.data[i] = orig - EPS;
            let lm = project(&fwd(ps, &xp), &r);
            xp.data[i] = orig;
            (lp - lm) / (2.0 * EPS as f64)
        })
        .collect();
    let ana_dx: Vec<f64> = dx.data.iter().map(|&v| v as f64).collect();
    let mut worst = rel_err(&ana_dx, &num_dx);

    let ids: Vec<_> = (0..ps.len()).map(super::params::ParamId).collect();
    for id in ids {
        let n = ps.get(id).len();
        let mut num = Vec::with_capacity(n);
        for i in 0..n {
            let orig = ps.get(id).data[i];
            ps.get_mut(id).data[i] = orig + EPS;
            let lp = project(&fwd(ps, x), &r);
            ps.get_mut(id).data[i] = orig - EPS;
            let lm = project(&fwd(ps, x), &r);
            ps.get_mut(id).data[i] = orig;
            num.push((lp - lm) / (2.0 * EPS as f64));
        }
        let ana: Vec<f64> = grads.get(id).iter().map(|&v| v as f64).collect();
        worst = worst.max(rel_err(&ana, &num));
    }
    worst
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..20 {
        let (cin, cout) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let k = [1, 3, 3, 5][case % 4];
        let stride = 1 + case % 2;
        let pad = rng.gen_range(0..=k / 2);
        let (h, w) = (rng.gen_range(k..k + 4), rng.gen_range(k..k + 4));
        let n = rng.gen_range(1..3);
        let mut ps = ParameterSet::new();
        let conv = Conv::new_2d(&mut ps, "c", cin, cout, k, stride, pad, &mut rng);
        let x = rand_tensor(&[n, cin, h, w], &mut rng);
        let err = check_layer(
            &mut ps,
            &x,
            |p, x| conv.forward(p, x).unwrap(),
            |p, g, x, dy| conv.backward(p, g, x, dy).unwrap(),
            &mut rng,
        );
        assert!(err < TOL, "case {case}: cin={cin} cout={cout} k={k} s={stride} p={pad} err={err}");
    }
}

#[test]
fn conv1d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..20 {
        let (cin, cout) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let k = [1, 3, 5][case % 3];
        let stride = 1 + case % 2;
        let pad = rng.gen_range(0..=k / 2);
        let l = rng.gen_range(k..k + 9);
        let n = rng.gen_range(1..3);
        let mut ps = ParameterSet::new();
        let conv = Conv::new_1d(&mut ps, "c", cin, cout, k, stride, pad, &mut rng);
        let x = rand_tensor(&[n, cin, l], &mut rng);
        let err = check_layer(
            &mut ps,
            &x,
            |p, x| conv.forward(p, x).unwrap(),
            |p, g, x, dy| conv.backward(p, g, x, dy).unwrap(),
            &mut rng,
        );
        assert!(err < TOL, "case {case}: err={err}");
    }
}

#[test]
fn conv_transpose2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..20 {
        let (cin, cout) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let (k, stride, pad) = [(4, 2, 1), (3, 1, 1), (2, 2, 0), (3, 2, 1)][case % 4];
        let (h, w) = (rng.gen_range(2..5), rng.gen_range(2..5));
        let n = rng.gen_range(1..3);
        let mut ps = ParameterSet::new();
        let up = ConvTranspose::new_2d(&mut ps, "u", cin, cout, k, stride, pad, &mut rng);
        let x = rand_tensor(&[n, cin, h, w], &mut rng);
        let err = check_layer(
            &mut ps,
            &x,
            |p, x| up.forward(p, x).unwrap(),
            |p, g, x, dy| up.backward(p, g, x, dy).unwrap(),
            &mut rng,
        );
        assert!(err < TOL, "case {case}: err={err}");
    }
}

#[test]
fn conv_transpose1d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for case in 0..20 {
        let (cin, cout) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let (k, stride, pad) = [(4, 2, 1), (3, 1, 1), (5, 1, 2)][case % 3];
        let l = rng.gen_range(2..9);
        let n = rng.gen_range(1..3);
        let mut ps = ParameterSet::new();
        let up = ConvTranspose::new_1d(&mut ps, "u", cin, cout, k, stride, pad, &mut rng);
        let x = rand_tensor(&[n, cin, l], &mut rng);
        let err = check_layer(
            &mut ps,
            &x,
            |p, x| up.forward(p, x).unwrap(),
            |p, g, x, dy| up.backward(p, g, x, dy).unwrap(),
            &mut rng,
        );
        assert!(err < TOL, "case {case}: err={err}");
    }
}

#[test]
fn linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for case in 0..20 {
        let (fi, fo, n) = (rng.gen_range(1..20), rng.gen_range(1..20), rng.gen_range(1..5));
        let mut ps = ParameterSet::new();
        let lin = Linear::new(&mut ps, "l", fi, fo, &mut rng);
        let x = rand_tensor(&[n, fi], &mut rng);
        let err = check_layer(
            &mut ps,
            &x,
            |p, x| lin.forward(p, x).unwrap(),
            |p, g, x, dy| lin.backward(p, g, x, dy).unwrap(),
            &mut rng,
        );
        assert!(err < TOL, "case {case}: err={err}");
    }
}

#[test]
fn group_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for case in 0..20 {
        let groups = [1, 2, 4, 8][case % 4];
        let channels = groups * rng.gen_range(1..3);
        let l = rng.gen_range(2..8);
        let n = rng.gen_range(1..3);
        let mut ps = ParameterSet::new();
        let gn = GroupNorm::new(&mut ps, "g", groups, channels);
        // non-trivial affine so gamma and beta gradients are exercised
        for v in ps.values_mut() {
            v.data.iter_mut().for_each(|w| *w += rng.gen_range(-0.5..0.5));
        }
        let x = rand_tensor(&[n, channels, l], &mut rng);
        let err = check_layer(
            &mut ps,
            &x,
            |p, x| gn.forward(p, x).unwrap(),
            |p, g, x, dy| gn.backward(p, g, x, dy).unwrap(),
            &mut rng,
        );
        assert!(err < TOL, "case {case}: groups={groups} channels={channels} err={err}");
    }
}

#[test]
fn activation_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut empty = ParameterSet::new();
    for case in 0..20 {
        let shape = [rng.gen_range(1..3), rng.gen_range(1..5), rng.gen_range(1..9)];
        let mut x = rand_tensor(&shape, &mut rng);
        let err = check_layer(&mut empty, &x, |_, x| silu(x), |_, _, x, dy| silu_backward(x, dy), &mut rng);
        assert!(err < TOL, "silu case {case}: err={err}");
        // keep relu inputs away from the kink
        x.data.iter_mut().for_each(|v| *v = if *v >= 0.0 { *v + 0.05 } else { *v - 0.05 });
        let err = check_layer(&mut empty, &x, |_, x| relu(x), |_, _, x, dy| relu_backward(x, dy), &mut rng);
        assert!(err < TOL, "relu case {case}: err={err}");
    }
}

#[test]
fn film_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let mut empty = ParameterSet::new();
    for case in 0..20 {
        let (n, c, l) = (rng.gen_range(1..3), rng.gen_range(1..5), rng.gen_range(1..7));
        let x = rand_tensor(&[n, c, l], &mut rng);
        let scale = rand_tensor(&[n, c], &mut rng);
        let shift = rand_tensor(&[n, c], &mut rng);
        // pack (x, scale, shift) as one flat input so all three are perturbed
        let packed = Tensor { shape: vec![x.len() + 2 * n * c], data: [x.data.clone(), scale.data.clone(), shift.data.clone()].concat() };
        let unpack = |t: &Tensor| {
            let a = x.len();
            let b = n * c;
            (
                Tensor { shape: vec![n, c, l], data: t.data[..a].to_vec() },
                Tensor { shape: vec![n, c], data: t.data[a..a + b].to_vec() },
                Tensor { shape: vec![n, c], data: t.data[a + b..].to_vec() },
            )
        };
        let err = check_layer(
            &mut empty,
            &packed,
            |_, t| {
                let (x, s, b) = unpack(t);
                film(&x, &s, &b).unwrap()
            },
            |_, _, t, dy| {
                let (x, s, b) = unpack(t);
                let (dx, ds, db) = film_backward(&x, &s, &b, dy).unwrap();
                Tensor { shape: t.shape.clone(), data: [dx.data, ds.data, db.data].concat() }
            },
            &mut rng,
        );
        assert!(err < TOL, "case {case}: err={err}");
    }
}

/// `<conv(x), y> == <x, conv_t(y)>` when both share a weight and have no bias.
#[test]
fn transposed_conv_is_adjoint_of_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for &(k, s, p, h) in &[(3, 2, 1, 8), (4, 2, 1, 8), (3, 1, 1, 5), (5, 1, 2, 7)] {
        let mut ps = ParameterSet::new();
        let conv = Conv::new_2d(&mut ps, "c", 3, 2, k, s, p, &mut rng);
        let up = ConvTranspose::new_2d(&mut ps, "u", 2, 3, k, s, p, &mut rng);
        let w = ps.get(super::params::ParamId(0)).data.clone();
        ps.get_mut(super::params::ParamId(2)).data.copy_from_slice(&w);
        ps.get_mut(super::params::ParamId(1)).data.iter_mut().for_each(|v| *v = 0.0);
        ps.get_mut(super::params::ParamId(3)).data.iter_mut().for_each(|v| *v = 0.0);
        let x = rand_tensor(&[2, 3, h, h], &mut rng);
        let cx = conv.forward(&ps, &x).unwrap();
        let y = rand_tensor(&cx.shape, &mut rng);
        let ty = up.forward(&ps, &y).unwrap();
        if ty.shape != x.shape {
            // stride-2 convolutions of odd sizes are not invertible in shape
            continue;
        }
        let lhs = project(&cx, &y);
        let rhs = project(&x, &ty);
        assert!((lhs - rhs).abs() < 1e-4 * lhs.abs().max(1.0), "k={k} s={s}: {lhs} vs {rhs}");
    }
}
