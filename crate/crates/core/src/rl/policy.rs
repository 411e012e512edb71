//! Action selection, exploration schedule and the double-DQN update.

use super::qnet::QNetwork;
use super::replay::Transition;
use crate::error::{HerdError, Result};
use crate::nn::loss::smooth_l1;
use crate::nn::optim::{clip_grad_norm, Sgd};
use crate::nn::{Grads, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Linear exploration schedule, constant after `steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self { start: 1.0, end: 0.01, steps: 6000 }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, step: usize) -> f64 {
        if step >= self.steps {
            return self.end;
        }
        self.start + (self.end - self.start) * step as f64 / self.steps as f64
    }
}

pub fn epsilon_at(step: usize) -> f64 {
    EpsilonSchedule::default().at(step)
}

/// Index of the largest unmasked value; ties go to the first in row-major order.
pub fn masked_argmax(q: &[f32], mask: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f32)> = None;
    for (i, (&v, &ok)) in q.iter().zip(mask).enumerate() {
        if ok && best.map_or(true, |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Unmasked indices by decreasing value, ties row-major.
pub fn ranked_actions(q: &[f32], mask: &[bool]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..q.len()).filter(|&i| mask[i]).collect();
    idx.sort_by(|&a, &b| q[b].total_cmp(&q[a]).then(a.cmp(&b)));
    idx
}

/// ε-greedy over unmasked pixels of a `size × size` Q map.
pub fn select_action(q: &[f32], mask: &[bool], size: usize, epsilon: f64, rng: &mut impl Rng) -> Option<(usize, usize)> {
    debug_assert!((0.0..=1.0).contains(&epsilon));
    debug_assert_eq!(q.len(), size * size);
    let idx = if rng.gen::<f64>() < epsilon {
        let valid: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        if valid.is_empty() {
            return None;
        }
        valid[rng.gen_range(0..valid.len())]
    } else {
        masked_argmax(q, mask)?
    };
    Some((idx / size, idx % size))
}

pub fn discount(gamma_base: f64, step_distance: f64) -> f64 {
    gamma_base.powf(0.25 * step_distance)
}

/// Double-DQN targets from precomputed next-state Q maps: the online map
/// picks the action, the target map scores it.
pub fn td_targets(batch: &[&Transition], online_next: &[f32], target_next: &[f32], gamma_base: f64) -> Vec<f64> {
    let plane = online_next.len() / batch.len().max(1);
    batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.terminal {
                return t.reward;
            }
            let on = &online_next[i * plane..(i + 1) * plane];
            let tg = &target_next[i * plane..(i + 1) * plane];
            match masked_argmax(on, &t.next_state.mask) {
                Some(a) => t.reward + discount(gamma_base, t.step_distance) * tg[a] as f64,
                None => t.reward,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdConfig {
    pub gamma_base: f64,
    pub grad_clip: f64,
}

impl Default for TdConfig {
    fn default() -> Self {
        Self { gamma_base: 0.99, grad_clip: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdStats {
    pub loss: f64,
    pub grad_norm: f64,
}

/// One SGD step on the smooth-L1 TD error of the chosen pixels.
pub fn td_train_step(
    online: &mut QNetwork,
    target: &QNetwork,
    opt: &mut Sgd,
    grads: &mut Grads,
    batch: &[&Transition],
    cfg: &TdConfig,
) -> Result<TdStats> {
    if batch.is_empty() {
        return Err(HerdError::NotReady { have: 0, need: 1 });
    }
    let next = QNetwork::batch(&batch.iter().map(|t| &t.next_state.image).collect::<Vec<_>>())?;
    let online_next = online.forward(&next)?;
    let target_next = target.forward(&next)?;
    let targets = td_targets(batch, &online_next.data, &target_next.data, cfg.gamma_base);

    let x = QNetwork::batch(&batch.iter().map(|t| &t.state.image).collect::<Vec<_>>())?;
    let size = x.shape[2];
    let plane = size * size;
    let (q, cache) = online.forward_cached(&x)?;
    let picked: Vec<usize> = batch.iter().enumerate().map(|(i, t)| i * plane + t.action.0 * size + t.action.1).collect();
    let pred = Tensor { shape: vec![batch.len()], data: picked.iter().map(|&k| q.data[k]).collect() };
    let tgt = Tensor { shape: vec![batch.len()], data: targets.iter().map(|&v| v as f32).collect() };
    let (loss, dpred) = smooth_l1(&pred, &tgt)?;

    let mut dq = Tensor::zeros(&q.shape);
    for (&k, &d) in picked.iter().zip(&dpred.data) {
        dq.data[k] = d;
    }
    grads.zero();
    online.backward(grads, &cache, &dq)?;
    let grad_norm = clip_grad_norm(grads, cfg.grad_clip);
    opt.step(&mut online.params, grads);
    Ok(TdStats { loss, grad_norm })
}

/// Optimizer with the reference hyperparameters.
pub fn default_sgd(net: &QNetwork) -> Sgd {
    Sgd::new(&net.params, 0.01, 0.9, 1e-4)
}
