//! First-order optimizers operating on a [`ParameterSet`] and matching [`Grads`].

use super::params::{Grads, ParameterSet};

/// Rescales `grads` so that their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale((max_norm / norm) as f32);
    }
    norm
}

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(ps: &ParameterSet, lr: f32, momentum: f32, weight_decay: f32) -> Self {
        let velocity = ps.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self { lr, momentum, weight_decay, velocity }
    }

    pub fn step(&mut self, ps: &mut ParameterSet, grads: &Grads) {
        for ((p, g), v) in ps.values_mut().zip(grads.iter()).zip(&mut self.velocity) {
            for ((w, &gi), vi) in p.data.iter_mut().zip(g).zip(v.iter_mut()) {
                let d = gi + self.weight_decay * *w;
                *vi = self.momentum * *vi + d;
                *w -= self.lr * *vi;
            }
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(ps: &ParameterSet, lr: f32, beta1: f32, beta2: f32, eps: f32, weight_decay: f32) -> Self {
        let zeros: Vec<Vec<f32>> = ps.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self { lr, beta1, beta2, eps, weight_decay, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, ps: &mut ParameterSet, grads: &Grads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in ps.values_mut().zip(grads.iter()).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &gi), mi), vi) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * *w);
            }
        }
    }
}
