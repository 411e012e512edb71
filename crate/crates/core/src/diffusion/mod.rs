//! Goal-conditioned trajectory diffusion: training, endpoint inpainting and
//! DDIM/DDPM sampling.

pub mod schedule;
pub mod unet;

pub use schedule::NoiseSchedule;
pub use unet::{Denoiser, UnetConfig};

use crate::error::{HerdError, Result};
use crate::geometry::Vec2;
use crate::nn::optim::AdamW;
use crate::nn::{checkpoint, loss, Grads, Tensor};
use crate::observation::{LowDimObservation, NormStats, LOWDIM_LEN};
use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::{Duration, Instant};

/// Waypoints per trajectory.
pub const HORIZON: usize = 32;
pub const TRAIN_TIMESTEPS: usize = 100;
pub const DDIM_STEPS: usize = 15;

/// Overwrites the first and last waypoint of sample `i` in a `[N, 2, L]`
/// batch with the (normalized) robot and goal positions.
pub fn inpaint(x: &mut Tensor, i: usize, robot: Vec2, goal: Vec2) {
    let l = x.shape[2];
    let base = i * 2 * l;
    x.data[base] = robot.x as f32;
    x.data[base + l] = robot.y as f32;
    x.data[base + l - 1] = goal.x as f32;
    x.data[base + 2 * l - 1] = goal.y as f32;
}

/// `[N, 2, L]` layout of a list of equal-length point sequences.
pub fn pack_points(trajs: &[&[Vec2]]) -> Tensor {
    let l = trajs.first().map_or(0, |t| t.len());
    let mut data = Vec::with_capacity(trajs.len() * 2 * l);
    for t in trajs {
        assert_eq!(t.len(), l, "trajectories must share one length");
        data.extend(t.iter().map(|p| p.x as f32));
        data.extend(t.iter().map(|p| p.y as f32));
    }
    Tensor { shape: vec![trajs.len(), 2, l], data }
}

/// Sample `i` of a `[N, 2, L]` batch as points.
pub fn unpack_points(x: &Tensor, i: usize) -> Vec<Vec2> {
    let l = x.shape[2];
    let base = i * 2 * l;
    (0..l).map(|k| Vec2::new(x.data[base + k] as f64, x.data[base + l + k] as f64)).collect()
}

fn gaussian(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor { shape: shape.to_vec(), data: (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect() }
}

/// One AdamW step on the noise-prediction MSE. Trajectories and observations
/// must already be normalized; no inpainting is applied.
pub fn train_step(
    model: &mut Denoiser,
    opt: &mut AdamW,
    grads: &mut Grads,
    schedule: &NoiseSchedule,
    obs: &Tensor,
    x0: &Tensor,
    rng: &mut impl Rng,
) -> Result<f64> {
    let n = x0.shape[0];
    let ts: Vec<usize> = (0..n).map(|_| rng.gen_range(0..schedule.len())).collect();
    let eps = gaussian(&x0.shape, rng);
    let loss = denoising_loss(model, schedule, obs, x0, &ts, &eps, Some(grads))?;
    opt.step(&mut model.params, grads);
    Ok(loss)
}

/// Loss for given timesteps and noise; with `grads` also runs backward.
fn denoising_loss(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    obs: &Tensor,
    x0: &Tensor,
    ts: &[usize],
    eps: &Tensor,
    grads: Option<&mut Grads>,
) -> Result<f64> {
    let per = x0.len() / x0.shape[0].max(1);
    let mut xt = x0.clone();
    for (i, &t) in ts.iter().enumerate() {
        for k in i * per..(i + 1) * per {
            xt.data[k] = schedule.add_noise(x0.data[k] as f64, eps.data[k] as f64, t) as f32;
        }
    }
    match grads {
        Some(g) => {
            let (pred, cache) = model.forward_cached(&xt, ts, obs)?;
            let (l, dpred) = loss::mse(&pred, eps)?;
            g.zero();
            model.backward(g, &cache, &dpred)?;
            Ok(l)
        }
        None => {
            let pred = model.forward(&xt, ts, obs)?;
            Ok(loss::mse(&pred, eps)?.0)
        }
    }
}

fn check_finite(eps: &Tensor, t: usize) -> Result<()> {
    if eps.is_finite() {
        Ok(())
    } else {
        Err(HerdError::SamplingDiverged(t))
    }
}

fn check_batch(obs: &Tensor, robots: &[Vec2], goals: &[Vec2]) -> Result<usize> {
    let n = robots.len();
    if goals.len() != n || obs.rank() != 2 || obs.shape[0] != n {
        return Err(HerdError::shape("sample", format!("obs {:?}, {} robots, {} goals", obs.shape, n, goals.len())));
    }
    Ok(n)
}

/// Deterministic DDIM sampling (eta = 0) over `steps` evenly spaced
/// timesteps. Everything is in normalized coordinates.
pub fn sample_ddim(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    obs: &Tensor,
    robots: &[Vec2],
    goals: &[Vec2],
    steps: usize,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let n = check_batch(obs, robots, goals)?;
    let mut x = gaussian(&[n, model.cfg.point_dim, model.cfg.horizon], rng);
    for i in 0..n {
        inpaint(&mut x, i, robots[i], goals[i]);
    }
    let ts = schedule.ddim_timesteps(steps);
    for (j, &t) in ts.iter().enumerate() {
        let eps = model.forward(&x, &vec![t; n], obs)?;
        check_finite(&eps, t)?;
        let ab = schedule.alpha_bar(t);
        let ab_prev = ts.get(j + 1).map_or(1.0, |&tp| schedule.alpha_bar(tp));
        for (v, &e) in x.data.iter_mut().zip(&eps.data) {
            let xt = *v as f64;
            let x0 = schedule.predict_x0(xt, e as f64, t).clamp(-1.0, 1.0);
            let e = (xt - ab.sqrt() * x0) / (1.0 - ab).sqrt();
            *v = (ab_prev.sqrt() * x0 + (1.0 - ab_prev).sqrt() * e) as f32;
        }
        for i in 0..n {
            inpaint(&mut x, i, robots[i], goals[i]);
        }
    }
    Ok(x)
}

/// Ancestral sampling through every training timestep.
pub fn sample_ddpm(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    obs: &Tensor,
    robots: &[Vec2],
    goals: &[Vec2],
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let n = check_batch(obs, robots, goals)?;
    let mut x = gaussian(&[n, model.cfg.point_dim, model.cfg.horizon], rng);
    for i in 0..n {
        inpaint(&mut x, i, robots[i], goals[i]);
    }
    for t in (0..schedule.len()).rev() {
        let eps = model.forward(&x, &vec![t; n], obs)?;
        check_finite(&eps, t)?;
        let (c0, ct, var) = schedule.posterior(t);
        let sigma = var.sqrt();
        for (v, &e) in x.data.iter_mut().zip(&eps.data) {
            let xt = *v as f64;
            let x0 = schedule.predict_x0(xt, e as f64, t).clamp(-1.0, 1.0);
            let mut next = c0 * x0 + ct * xt;
            if t > 0 {
                next += sigma * rng.sample::<f64, _>(StandardNormal);
            }
            *v = next as f32;
        }
        for i in 0..n {
            inpaint(&mut x, i, robots[i], goals[i]);
        }
    }
    Ok(x)
}

/// Normalized training pairs in network layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    /// `N × obs_dim`
    pub obs: Vec<f32>,
    /// `N × 2 × HORIZON`, x coordinates first
    pub traj: Vec<f32>,
    pub obs_dim: usize,
    pub horizon: usize,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.obs.len() / self.obs_dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    fn gather(&self, idx: &[usize]) -> (Tensor, Tensor) {
        let (od, tl) = (self.obs_dim, 2 * self.horizon);
        let mut o = Vec::with_capacity(idx.len() * od);
        let mut t = Vec::with_capacity(idx.len() * tl);
        for &i in idx {
            o.extend_from_slice(&self.obs[i * od..(i + 1) * od]);
            t.extend_from_slice(&self.traj[i * tl..(i + 1) * tl]);
        }
        (Tensor { shape: vec![idx.len(), od], data: o }, Tensor { shape: vec![idx.len(), 2, self.horizon], data: t })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    pub val_fraction: f64,
    /// Validation and checkpoint selection cadence in epochs.
    pub val_every: usize,
    pub seed: u64,
    /// Stops after the epoch during which this much wall time has passed.
    pub time_budget: Option<Duration>,
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            lr: 1e-4,
            beta1: 0.95,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
            val_fraction: 0.02,
            val_every: 10,
            seed: 0,
            time_budget: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Trains a denoiser and returns the parameters with the lowest validation
/// loss (the final ones if no validation split is possible).
pub fn train_denoiser(
    data: &TrainingSet,
    unet: UnetConfig,
    cfg: &DiffusionTrainConfig,
    schedule: &NoiseSchedule,
) -> Result<(Denoiser, Vec<EpochLog>)> {
    if data.is_empty() {
        return Err(HerdError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Denoiser::new(unet, &mut rng)?;
    let mut opt = AdamW::new(&model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    let mut grads = Grads::zeros_like(&model.params);

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((data.len() as f64 * cfg.val_fraction).round() as usize).min(data.len().saturating_sub(1));
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let val = (!val_idx.is_empty()).then(|| data.gather(val_idx));

    let start = Instant::now();
    let mut best: Option<(f64, crate::nn::ParameterSet)> = None;
    let mut log = Vec::new();
    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in train_idx.chunks(cfg.batch_size.max(1)) {
            let (o, x0) = data.gather(chunk);
            total += train_step(&mut model, &mut opt, &mut grads, schedule, &o, &x0, &mut rng)?;
            batches += 1;
        }
        let train_loss = total / batches.max(1) as f64;
        let out_of_time = cfg.time_budget.map_or(false, |b| start.elapsed() >= b);
        let last = epoch == cfg.epochs || out_of_time;
        let mut val_loss = None;
        if let Some((vo, vx)) = &val {
            if epoch % cfg.val_every.max(1) == 0 || last {
                let l = validation_loss(&model, schedule, vo, vx, cfg.seed)?;
                if best.as_ref().map_or(true, |(b, _)| l < *b) {
                    best = Some((l, model.params.clone()));
                }
                val_loss = Some(l);
            }
        }
        info!("epoch {epoch}: train {train_loss:.5} val {val_loss:?}");
        log.push(EpochLog { epoch, train_loss, val_loss });
        if last {
            break;
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, log))
}

/// Validation loss with fixed timesteps and noise so epochs are comparable.
fn validation_loss(model: &Denoiser, schedule: &NoiseSchedule, obs: &Tensor, x0: &Tensor, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7661_6c);
    let n = x0.shape[0];
    let mut total = 0.0;
    let reps = 4;
    for _ in 0..reps {
        let ts: Vec<usize> = (0..n).map(|_| rng.gen_range(0..schedule.len())).collect();
        let eps = gaussian(&x0.shape, &mut rng);
        total += denoising_loss(model, schedule, obs, x0, &ts, &eps, None)?;
    }
    Ok(total / reps as f64)
}

/// Settings stored next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSidecar {
    pub schedule: String,
    pub train_timesteps: usize,
    pub ddim_steps: usize,
    pub unet: UnetConfig,
    pub obs_stats: NormStats,
    pub traj_stats: NormStats,
}

/// Trained denoiser with its schedule and normalization.
#[derive(Debug, Clone)]
pub struct DiffusionPolicy {
    pub model: Denoiser,
    pub schedule: NoiseSchedule,
    pub obs_stats: NormStats,
    pub traj_stats: NormStats,
    pub ddim_steps: usize,
}

impl DiffusionPolicy {
    pub fn new(model: Denoiser, obs_stats: NormStats, traj_stats: NormStats) -> Result<Self> {
        if obs_stats.dim() != model.cfg.obs_dim || traj_stats.dim() != 2 {
            return Err(HerdError::shape("diffusion policy", "normalization stats do not match the model"));
        }
        Ok(Self { model, schedule: NoiseSchedule::squared_cosine(TRAIN_TIMESTEPS), obs_stats, traj_stats, ddim_steps: DDIM_STEPS })
    }

    pub fn normalize_obs(&self, obs: &LowDimObservation) -> Vec<f32> {
        self.obs_stats.normalize(obs.as_slice()).into_iter().map(|v| v as f32).collect()
    }

    /// DDIM samples in meters for a batch of observations. The robot and goal
    /// of each sample are read from its observation.
    pub fn sample_batch(&self, obs: &[LowDimObservation], rng: &mut impl Rng) -> Result<Vec<Vec<Vec2>>> {
        if obs.is_empty() {
            return Ok(Vec::new());
        }
        let o = Tensor { shape: vec![obs.len(), LOWDIM_LEN], data: obs.iter().flat_map(|v| self.normalize_obs(v)).collect() };
        let robots: Vec<Vec2> = obs.iter().map(|v| self.traj_stats.normalize_point(v.robot_center())).collect();
        let goals: Vec<Vec2> = obs.iter().map(|v| self.traj_stats.normalize_point(v.goal())).collect();
        let x = sample_ddim(&self.model, &self.schedule, &o, &robots, &goals, self.ddim_steps, rng)?;
        Ok((0..obs.len()).map(|i| unpack_points(&x, i).into_iter().map(|p| self.traj_stats.denormalize_point(p)).collect()).collect())
    }

    pub fn sample(&self, obs: &LowDimObservation, rng: &mut impl Rng) -> Result<Vec<Vec2>> {
        Ok(self.sample_batch(std::slice::from_ref(obs), rng)?.remove(0))
    }

    pub fn sidecar(&self) -> DiffusionSidecar {
        DiffusionSidecar {
            schedule: "squared_cosine".into(),
            train_timesteps: self.schedule.len(),
            ddim_steps: self.ddim_steps,
            unet: self.model.cfg.clone(),
            obs_stats: self.obs_stats.clone(),
            traj_stats: self.traj_stats.clone(),
        }
    }

    /// Writes `<path>` (parameters) and `<path>.json` (sidecar).
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.model.params)?;
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.sidecar())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side: DiffusionSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        if side.schedule != "squared_cosine" {
            return Err(HerdError::Checkpoint(format!("unknown schedule {}", side.schedule)));
        }
        // parameter values are overwritten by the checkpoint
        let mut model = Denoiser::new(side.unet, &mut ChaCha8Rng::seed_from_u64(0))?;
        checkpoint::load_into(path, &mut model.params)?;
        Ok(Self {
            model,
            schedule: NoiseSchedule::squared_cosine(side.train_timesteps),
            obs_stats: side.obs_stats,
            traj_stats: side.traj_stats,
            ddim_steps: side.ddim_steps,
        })
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}
