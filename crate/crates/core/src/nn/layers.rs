//! Layers with hand-written backward passes.
//!
//! Layers hold only parameter handles. `forward` is pure; `backward` takes the
//! same input that was fed to `forward`, accumulates parameter gradients into
//! a [`Grads`] buffer and returns the input gradient.

use super::params::{Grads, ParamId, ParameterSet};
use super::tensor::Tensor;
use crate::error::{HerdError, Result};
use rand::Rng;

/// `C = A·B + beta·C` with A logically `m×k` and B `k×n`; `at`/`bt` mean the
/// operand is stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sgemm(m: usize, k: usize, n: usize, a: &[f32], at: bool, b: &[f32], bt: bool, c: &mut [f32], beta: f32) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if at { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if bt { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe the stated layouts.
    unsafe {
        matrixmultiply::sgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(c: usize, h: usize, w: usize, kh: usize, kw: usize, sh: usize, sw: usize, ph: usize, pw: usize) -> Option<Self> {
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return None;
        }
        let ho = (h + 2 * ph - kh) / sh + 1;
        let wo = (w + 2 * pw - kw) / sw + 1;
        Some(Self { c, h, w, kh, kw, sh, sw, ph, pw, ho, wo })
    }

    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.ho * self.wo
    }

    fn in_len(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// Unfolds `n` images into a `rows × (n·P)` matrix.
fn im2col(x: &[f32], n: usize, g: &ConvGeom) -> Vec<f32> {
    let p = g.out_len();
    let ld = n * p;
    let mut col = vec![0.0f32; g.rows() * ld];
    for i in 0..n {
        let xi = &x[i * g.in_len()..(i + 1) * g.in_len()];
        for ci in 0..g.c {
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row = (ci * g.kh + ki) * g.kw + kj;
                    let dst = &mut col[row * ld + i * p..row * ld + (i + 1) * p];
                    for oy in 0..g.ho {
                        let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src = &xi[(ci * g.h + iy as usize) * g.w..];
                        for ox in 0..g.wo {
                            let ix = (ox * g.sw + kj) as isize - g.pw as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[oy * g.wo + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters and sums columns back into images.
fn col2im(col: &[f32], n: usize, g: &ConvGeom) -> Vec<f32> {
    let p = g.out_len();
    let ld = n * p;
    let mut x = vec![0.0f32; n * g.in_len()];
    for i in 0..n {
        let xi = &mut x[i * g.in_len()..(i + 1) * g.in_len()];
        for ci in 0..g.c {
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row = (ci * g.kh + ki) * g.kw + kj;
                    let src = &col[row * ld + i * p..row * ld + (i + 1) * p];
                    for oy in 0..g.ho {
                        let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let base = (ci * g.h + iy as usize) * g.w;
                        for ox in 0..g.wo {
                            let ix = (ox * g.sw + kj) as isize - g.pw as isize;
                            if ix >= 0 && ix < g.w as isize {
                                xi[base + ix as usize] += src[oy * g.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[n, c, p]` -> `[c, n·p]`
fn batch_to_wide(x: &[f32], n: usize, c: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; c * n * p];
    for i in 0..n {
        for ci in 0..c {
            out[ci * n * p + i * p..ci * n * p + (i + 1) * p].copy_from_slice(&x[(i * c + ci) * p..(i * c + ci + 1) * p]);
        }
    }
    out
}

/// `[c, n·p]` -> `[n, c, p]`
fn wide_to_batch(x: &[f32], n: usize, c: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; c * n * p];
    for i in 0..n {
        for ci in 0..c {
            out[(i * c + ci) * p..(i * c + ci + 1) * p].copy_from_slice(&x[ci * n * p + i * p..ci * n * p + (i + 1) * p]);
        }
    }
    out
}

fn add_channel_bias(y: &mut [f32], bias: &[f32], n: usize, p: usize) {
    let c = bias.len();
    for i in 0..n {
        for (ci, b) in bias.iter().enumerate() {
            y[(i * c + ci) * p..(i * c + ci + 1) * p].iter_mut().for_each(|v| *v += b);
        }
    }
}

fn accumulate_channel_sum(db: &mut [f32], dy: &[f32], n: usize, p: usize) {
    let c = db.len();
    for (ci, d) in db.iter_mut().enumerate() {
        let mut s = 0.0f64;
        for i in 0..n {
            s += dy[(i * c + ci) * p..(i * c + ci + 1) * p].iter().map(|&v| v as f64).sum::<f64>();
        }
        *d += s as f32;
    }
}

/// Spatial extents of a `[n, c, h, w]` or `[n, c, l]` input.
fn spatial(x: &Tensor, op: &'static str, cin: usize) -> Result<(usize, usize, usize)> {
    match x.shape.as_slice() {
        [n, c, h, w] if *c == cin => Ok((*n, *h, *w)),
        [n, c, l] if *c == cin => Ok((*n, 1, *l)),
        _ => Err(HerdError::shape(op, format!("expected [N, {cin}, ...], got {:?}", x.shape))),
    }
}

fn out_shape(x: &Tensor, n: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    if x.rank() == 3 {
        vec![n, c, w]
    } else {
        vec![n, c, h, w]
    }
}

/// Cross-correlation convolution over `[N, C, H, W]` (2D) or `[N, C, L]` (1D).
#[derive(Debug, Clone)]
pub struct Conv {
    weight: ParamId,
    bias: ParamId,
    pub cin: usize,
    pub cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    one_d: bool,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new_2d(ps: &mut ParameterSet, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        let fan = cin * k * k;
        let weight = ps.add_uniform(format!("{name}.weight"), &[cout, cin, k, k], fan, rng);
        let bias = ps.add_uniform(format!("{name}.bias"), &[cout], fan, rng);
        Self { weight, bias, cin, cout, kh: k, kw: k, stride, pad, one_d: false }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new_1d(ps: &mut ParameterSet, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        let fan = cin * k;
        let weight = ps.add_uniform(format!("{name}.weight"), &[cout, cin, k], fan, rng);
        let bias = ps.add_uniform(format!("{name}.bias"), &[cout], fan, rng);
        Self { weight, bias, cin, cout, kh: 1, kw: k, stride, pad, one_d: true }
    }

    fn geom(&self, x: &Tensor) -> Result<(usize, ConvGeom)> {
        let (n, h, w) = spatial(x, "conv", self.cin)?;
        if self.one_d != (x.rank() == 3) {
            return Err(HerdError::shape("conv", format!("rank {} input for {}D conv", x.rank(), if self.one_d { 1 } else { 2 })));
        }
        let (sh, ph) = if self.one_d { (1, 0) } else { (self.stride, self.pad) };
        let g = ConvGeom::new(self.cin, h, w, self.kh, self.kw, sh, self.stride, ph, self.pad)
            .ok_or_else(|| HerdError::shape("conv", format!("input {:?} smaller than kernel", x.shape)))?;
        Ok((n, g))
    }

    pub fn forward(&self, ps: &ParameterSet, x: &Tensor) -> Result<Tensor> {
        let (n, g) = self.geom(x)?;
        let col = im2col(&x.data, n, &g);
        let p = g.out_len();
        let mut wide = vec![0.0f32; self.cout * n * p];
        sgemm(self.cout, g.rows(), n * p, &ps.get(self.weight).data, false, &col, false, &mut wide, 0.0);
        let mut y = wide_to_batch(&wide, n, self.cout, p);
        add_channel_bias(&mut y, &ps.get(self.bias).data, n, p);
        Ok(Tensor { shape: out_shape(x, n, self.cout, g.ho, g.wo), data: y })
    }

    pub fn backward(&self, ps: &ParameterSet, grads: &mut Grads, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        let (n, g) = self.geom(x)?;
        let p = g.out_len();
        if dy.len() != n * self.cout * p {
            return Err(HerdError::shape("conv.backward", format!("dy {:?}", dy.shape)));
        }
        let dyw = batch_to_wide(&dy.data, n, self.cout, p);
        let col = im2col(&x.data, n, &g);
        sgemm(self.cout, n * p, g.rows(), &dyw, false, &col, true, grads.get_mut(self.weight), 1.0);
        accumulate_channel_sum(grads.get_mut(self.bias), &dy.data, n, p);
        let mut dcol = vec![0.0f32; g.rows() * n * p];
        sgemm(g.rows(), self.cout, n * p, &ps.get(self.weight).data, true, &dyw, false, &mut dcol, 0.0);
        Ok(Tensor { shape: x.shape.clone(), data: col2im(&dcol, n, &g) })
    }
}

/// Transposed convolution (adjoint of [`Conv`]); weight layout `[Cin, Cout, k..]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose {
    weight: ParamId,
    bias: ParamId,
    pub cin: usize,
    pub cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    one_d: bool,
}

impl ConvTranspose {
    #[allow(clippy::too_many_arguments)]
    pub fn new_2d(ps: &mut ParameterSet, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        let fan = cout * k * k;
        let weight = ps.add_uniform(format!("{name}.weight"), &[cin, cout, k, k], fan, rng);
        let bias = ps.add_uniform(format!("{name}.bias"), &[cout], fan, rng);
        Self { weight, bias, cin, cout, kh: k, kw: k, stride, pad, one_d: false }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new_1d(ps: &mut ParameterSet, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        let fan = cout * k;
        let weight = ps.add_uniform(format!("{name}.weight"), &[cin, cout, k], fan, rng);
        let bias = ps.add_uniform(format!("{name}.bias"), &[cout], fan, rng);
        Self { weight, bias, cin, cout, kh: 1, kw: k, stride, pad, one_d: true }
    }

    /// Geometry of the equivalent forward conv whose input is our output.
    fn geom(&self, x: &Tensor) -> Result<(usize, usize, usize, ConvGeom)> {
        let (n, h, w) = spatial(x, "conv_transpose", self.cin)?;
        if self.one_d != (x.rank() == 3) {
            return Err(HerdError::shape("conv_transpose", format!("rank {} input", x.rank())));
        }
        let (sh, ph) = if self.one_d { (1, 0) } else { (self.stride, self.pad) };
        let ho = ((h - 1) * sh + self.kh)
            .checked_sub(2 * ph)
            .ok_or_else(|| HerdError::shape("conv_transpose", "padding exceeds output"))?;
        let wo = ((w - 1) * self.stride + self.kw)
            .checked_sub(2 * self.pad)
            .ok_or_else(|| HerdError::shape("conv_transpose", "padding exceeds output"))?;
        let g = ConvGeom::new(self.cout, ho, wo, self.kh, self.kw, sh, self.stride, ph, self.pad)
            .ok_or_else(|| HerdError::shape("conv_transpose", "degenerate geometry"))?;
        debug_assert_eq!((g.ho, g.wo), (h, w));
        Ok((n, h, w, g))
    }

    pub fn forward(&self, ps: &ParameterSet, x: &Tensor) -> Result<Tensor> {
        let (n, h, w, g) = self.geom(x)?;
        let p = h * w;
        let xw = batch_to_wide(&x.data, n, self.cin, p);
        let mut col = vec![0.0f32; g.rows() * n * p];
        sgemm(g.rows(), self.cin, n * p, &ps.get(self.weight).data, true, &xw, false, &mut col, 0.0);
        let mut y = col2im(&col, n, &g);
        add_channel_bias(&mut y, &ps.get(self.bias).data, n, g.h * g.w);
        Ok(Tensor { shape: out_shape(x, n, self.cout, g.h, g.w), data: y })
    }

    pub fn backward(&self, ps: &ParameterSet, grads: &mut Grads, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        let (n, h, w, g) = self.geom(x)?;
        let p = h * w;
        if dy.len() != n * g.in_len() {
            return Err(HerdError::shape("conv_transpose.backward", format!("dy {:?}", dy.shape)));
        }
        let dcol = im2col(&dy.data, n, &g);
        let xw = batch_to_wide(&x.data, n, self.cin, p);
        sgemm(self.cin, n * p, g.rows(), &xw, false, &dcol, true, grads.get_mut(self.weight), 1.0);
        accumulate_channel_sum(grads.get_mut(self.bias), &dy.data, n, g.h * g.w);
        let mut dxw = vec![0.0f32; self.cin * n * p];
        sgemm(self.cin, g.rows(), n * p, &ps.get(self.weight).data, false, &dcol, false, &mut dxw, 0.0);
        Ok(Tensor { shape: x.shape.clone(), data: wide_to_batch(&dxw, n, self.cin, p) })
    }
}

/// Fully connected layer over `[N, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(ps: &mut ParameterSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let weight = ps.add_uniform(format!("{name}.weight"), &[fan_out, fan_in], fan_in, rng);
        let bias = ps.add_uniform(format!("{name}.bias"), &[fan_out], fan_in, rng);
        Self { weight, bias, fan_in, fan_out }
    }

    fn batch(&self, x: &Tensor) -> Result<usize> {
        match x.shape.as_slice() {
            [n, f] if *f == self.fan_in => Ok(*n),
            _ => Err(HerdError::shape("linear", format!("expected [N, {}], got {:?}", self.fan_in, x.shape))),
        }
    }

    pub fn forward(&self, ps: &ParameterSet, x: &Tensor) -> Result<Tensor> {
        let n = self.batch(x)?;
        let bias = &ps.get(self.bias).data;
        let mut y: Vec<f32> = (0..n).flat_map(|_| bias.iter().copied()).collect();
        sgemm(n, self.fan_in, self.fan_out, &x.data, false, &ps.get(self.weight).data, true, &mut y, 1.0);
        Ok(Tensor { shape: vec![n, self.fan_out], data: y })
    }

    pub fn backward(&self, ps: &ParameterSet, grads: &mut Grads, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        let n = self.batch(x)?;
        if dy.shape != [n, self.fan_out] {
            return Err(HerdError::shape("linear.backward", format!("dy {:?}", dy.shape)));
        }
        sgemm(self.fan_out, n, self.fan_in, &dy.data, true, &x.data, false, grads.get_mut(self.weight), 1.0);
        let db = grads.get_mut(self.bias);
        for (o, d) in db.iter_mut().enumerate() {
            *d += (0..n).map(|i| dy.data[i * self.fan_out + o] as f64).sum::<f64>() as f32;
        }
        let mut dx = vec![0.0f32; n * self.fan_in];
        sgemm(n, self.fan_out, self.fan_in, &dy.data, false, &ps.get(self.weight).data, false, &mut dx, 0.0);
        Ok(Tensor { shape: x.shape.clone(), data: dx })
    }
}

/// Group normalization over `[N, C, ...]` with per-channel affine.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    gamma: ParamId,
    beta: ParamId,
    pub channels: usize,
    pub groups: usize,
    eps: f64,
}

impl GroupNorm {
    pub fn new(ps: &mut ParameterSet, name: &str, groups: usize, channels: usize) -> Self {
        assert!(groups > 0 && channels % groups == 0, "channels must divide into groups");
        let gamma = ps.add(format!("{name}.weight"), Tensor::full(&[channels], 1.0));
        let beta = ps.add(format!("{name}.bias"), Tensor::zeros(&[channels]));
        Self { gamma, beta, channels, groups, eps: 1e-5 }
    }

    fn dims(&self, x: &Tensor) -> Result<(usize, usize)> {
        if x.rank() < 2 || x.shape[1] != self.channels {
            return Err(HerdError::shape("group_norm", format!("expected [N, {}, ...], got {:?}", self.channels, x.shape)));
        }
        Ok((x.shape[0], x.shape[2..].iter().product()))
    }

    /// Mean and inverse std of each (sample, group).
    fn stats(&self, x: &Tensor, n: usize, l: usize) -> Vec<(f64, f64)> {
        let cg = self.channels / self.groups;
        let m = (cg * l) as f64;
        (0..n * self.groups)
            .map(|k| {
                let s = &x.data[k * cg * l..(k + 1) * cg * l];
                let mean = s.iter().map(|&v| v as f64).sum::<f64>() / m;
                let var = s.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / m;
                (mean, 1.0 / (var + self.eps).sqrt())
            })
            .collect()
    }

    pub fn forward(&self, ps: &ParameterSet, x: &Tensor) -> Result<Tensor> {
        let (n, l) = self.dims(x)?;
        let cg = self.channels / self.groups;
        let gamma = &ps.get(self.gamma).data;
        let beta = &ps.get(self.beta).data;
        let st = self.stats(x, n, l);
        let mut y = vec![0.0f32; x.len()];
        for i in 0..n {
            for c in 0..self.channels {
                let (mean, rstd) = st[i * self.groups + c / cg];
                let base = (i * self.channels + c) * l;
                for j in 0..l {
                    let xh = (x.data[base + j] as f64 - mean) * rstd;
                    y[base + j] = (xh * gamma[c] as f64 + beta[c] as f64) as f32;
                }
            }
        }
        Ok(Tensor { shape: x.shape.clone(), data: y })
    }

    pub fn backward(&self, ps: &ParameterSet, grads: &mut Grads, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        let (n, l) = self.dims(x)?;
        if dy.shape != x.shape {
            return Err(HerdError::shape("group_norm.backward", format!("dy {:?}", dy.shape)));
        }
        let cg = self.channels / self.groups;
        let m = (cg * l) as f64;
        let gamma = &ps.get(self.gamma).data;
        let st = self.stats(x, n, l);
        let mut dgamma = vec![0.0f64; self.channels];
        let mut dbeta = vec![0.0f64; self.channels];
        let mut dx = vec![0.0f32; x.len()];
        for i in 0..n {
            for g in 0..self.groups {
                let (mean, rstd) = st[i * self.groups + g];
                let mut sum_dxh = 0.0f64;
                let mut sum_dxh_xh = 0.0f64;
                for c in g * cg..(g + 1) * cg {
                    let base = (i * self.channels + c) * l;
                    for j in 0..l {
                        let xh = (x.data[base + j] as f64 - mean) * rstd;
                        let d = dy.data[base + j] as f64;
                        dgamma[c] += d * xh;
                        dbeta[c] += d;
                        let dxh = d * gamma[c] as f64;
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                    }
                }
                for c in g * cg..(g + 1) * cg {
                    let base = (i * self.channels + c) * l;
                    for j in 0..l {
                        let xh = (x.data[base + j] as f64 - mean) * rstd;
                        let dxh = dy.data[base + j] as f64 * gamma[c] as f64;
                        dx[base + j] = (rstd / m * (m * dxh - sum_dxh - xh * sum_dxh_xh)) as f32;
                    }
                }
            }
        }
        for (a, b) in grads.get_mut(self.gamma).iter_mut().zip(&dgamma) {
            *a += *b as f32;
        }
        for (a, b) in grads.get_mut(self.beta).iter_mut().zip(&dbeta) {
            *a += *b as f32;
        }
        Ok(Tensor { shape: x.shape.clone(), data: dx })
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor { shape: x.shape.clone(), data: x.data.iter().map(|&v| v.max(0.0)).collect() }
}

pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let data = x.data.iter().zip(&dy.data).map(|(&v, &d)| if v > 0.0 { d } else { 0.0 }).collect();
    Tensor { shape: x.shape.clone(), data }
}

fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

pub fn silu(x: &Tensor) -> Tensor {
    Tensor { shape: x.shape.clone(), data: x.data.iter().map(|&v| v * sigmoid(v)).collect() }
}

pub fn silu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let data = x
        .data
        .iter()
        .zip(&dy.data)
        .map(|(&v, &d)| {
            let s = sigmoid(v);
            d * s * (1.0 + v * (1.0 - s))
        })
        .collect();
    Tensor { shape: x.shape.clone(), data }
}

fn film_dims(x: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<(usize, usize, usize)> {
    if x.rank() < 2 {
        return Err(HerdError::shape("film", format!("feature {:?}", x.shape)));
    }
    let (n, c) = (x.shape[0], x.shape[1]);
    if scale.shape != [n, c] || shift.shape != [n, c] {
        return Err(HerdError::shape("film", format!("feature {:?}, scale {:?}, shift {:?}", x.shape, scale.shape, shift.shape)));
    }
    Ok((n, c, x.shape[2..].iter().product()))
}

/// Feature-wise affine modulation: `y[n,c,..] = scale[n,c]·x[n,c,..] + shift[n,c]`.
pub fn film(x: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<Tensor> {
    let (n, c, l) = film_dims(x, scale, shift)?;
    let mut y = x.data.clone();
    for k in 0..n * c {
        let (a, b) = (scale.data[k], shift.data[k]);
        y[k * l..(k + 1) * l].iter_mut().for_each(|v| *v = a * *v + b);
    }
    Ok(Tensor { shape: x.shape.clone(), data: y })
}

/// Gradients of [`film`] with respect to `(x, scale, shift)`.
pub fn film_backward(x: &Tensor, scale: &Tensor, shift: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, l) = film_dims(x, scale, shift)?;
    let mut dx = dy.data.clone();
    let mut dscale = vec![0.0f32; n * c];
    let mut dshift = vec![0.0f32; n * c];
    for k in 0..n * c {
        let a = scale.data[k];
        let seg = k * l..(k + 1) * l;
        dx[seg.clone()].iter_mut().for_each(|v| *v *= a);
        dscale[k] = x.data[seg.clone()].iter().zip(&dy.data[seg.clone()]).map(|(&u, &d)| u as f64 * d as f64).sum::<f64>() as f32;
        dshift[k] = dy.data[seg].iter().map(|&d| d as f64).sum::<f64>() as f32;
    }
    Ok((
        Tensor { shape: x.shape.clone(), data: dx },
        Tensor { shape: vec![n, c], data: dscale },
        Tensor { shape: vec![n, c], data: dshift },
    ))
}

/// Sinusoidal embedding `[sin(t·f_k) | cos(t·f_k)]` with geometric frequencies.
pub fn timestep_embedding(ts: &[f32], dim: usize) -> Tensor {
    assert!(dim >= 4 && dim % 2 == 0, "embedding dim must be even and >= 4");
    let half = dim / 2;
    let scale = (10000f64).ln() / (half as f64 - 1.0);
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        let freqs = (0..half).map(|k| t as f64 * (-(k as f64) * scale).exp());
        let args: Vec<f64> = freqs.collect();
        data.extend(args.iter().map(|a| a.sin() as f32));
        data.extend(args.iter().map(|a| a.cos() as f32));
    }
    Tensor { shape: vec![ts.len(), dim], data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv1d_impulse_reproduces_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParameterSet::new();
        let conv = Conv::new_1d(&mut ps, "c", 1, 1, 3, 1, 1, &mut rng);
        let kernel = [0.5f32, -2.0, 3.0];
        ps.get_mut(ParamId(0)).data.copy_from_slice(&kernel);
        ps.get_mut(ParamId(1)).data[0] = 0.0;
        let mut x = Tensor::zeros(&[1, 1, 7]);
        x.data[3] = 1.0;
        let y = conv.forward(&ps, &x).unwrap();
        // cross-correlation: y[i] = sum_k w[k] x[i + k - 1], so the impulse at 3
        // shows the kernel reversed around it
        assert_eq!(&y.data[2..5], &[3.0, -2.0, 0.5]);
        assert!(y.data[..2].iter().chain(&y.data[5..]).all(|&v| v == 0.0));
    }

    #[test]
    fn film_identity() {
        let x = Tensor::from_vec(&[2, 3, 4], (0..24).map(|v| v as f32 * 0.1).collect()).unwrap();
        let y = film(&x, &Tensor::full(&[2, 3], 1.0), &Tensor::zeros(&[2, 3])).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParameterSet::new();
        let lin = Linear::new(&mut ps, "l", 3, 2, &mut rng);
        let err = lin.forward(&ps, &Tensor::zeros(&[1, 4])).unwrap_err();
        assert!(err.to_string().contains("linear"));
        let conv = Conv::new_2d(&mut ps, "c", 2, 2, 3, 1, 1, &mut rng);
        let err = conv.forward(&ps, &Tensor::zeros(&[1, 3, 4, 4])).unwrap_err();
        assert!(err.to_string().contains("conv"));
    }

    #[test]
    fn transposed_conv_doubles_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParameterSet::new();
        let up = ConvTranspose::new_2d(&mut ps, "u", 3, 2, 4, 2, 1, &mut rng);
        let y = up.forward(&ps, &Tensor::zeros(&[2, 3, 5, 5])).unwrap();
        assert_eq!(y.shape, vec![2, 2, 10, 10]);
        let up1 = ConvTranspose::new_1d(&mut ps, "u1", 3, 2, 4, 2, 1, &mut rng);
        let y = up1.forward(&ps, &Tensor::zeros(&[2, 3, 8])).unwrap();
        assert_eq!(y.shape, vec![2, 2, 16]);
    }

    #[test]
    fn embedding_shape_and_zero() {
        let e = timestep_embedding(&[0.0, 5.0], 8);
        assert_eq!(e.shape, vec![2, 8]);
        assert_eq!(&e.data[..4], &[0.0; 4]);
        assert_eq!(&e.data[4..8], &[1.0; 4]);
    }
}
