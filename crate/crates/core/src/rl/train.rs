//! Online DDQN training: one environment step, one gradient step.

use super::policy::{default_sgd, select_action, td_train_step, EpsilonSchedule, TdConfig};
use super::qnet::QNetwork;
use super::replay::{Observed, ReplayBuffer, Transition};
use super::reward::{compute_reward, RewardConfig};
use crate::envs::EnvSpec;
use crate::error::{HerdError, Result};
use crate::grid::project_to_free;
use crate::nn::Grads;
use crate::observation::{ObservationBuilder, ObservationConfig};
use crate::rollout::{drive, grid_path, idle_outcome, ControllerConfig, StepContext};
use crate::world::{is_terminal, reset, WorldMaps, WorldState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub target_period: usize,
    pub td: TdConfig,
    pub epsilon: EpsilonSchedule,
    pub reward: RewardConfig,
    pub observation: ObservationConfig,
    pub controller: ControllerConfig,
    /// Each episode draws its environment uniformly from this list.
    pub env_mix: Vec<EnvSpec>,
    pub seed: u64,
    /// Metrics are written every this many steps and at every episode end.
    pub log_every: usize,
    /// Stops early once this much wall time has passed.
    pub time_budget: Option<Duration>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 15_000,
            warmup_steps: 1_000,
            batch_size: 32,
            replay_capacity: 10_000,
            target_period: 1_000,
            td: TdConfig::default(),
            epsilon: EpsilonSchedule::default(),
            reward: RewardConfig::default(),
            observation: ObservationConfig::default(),
            controller: ControllerConfig::default(),
            env_mix: Vec::new(),
            seed: 0,
            log_every: 100,
            time_budget: None,
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub episode: usize,
    /// Mean TD loss since the previous row; absent during warm-up.
    pub loss: Option<f64>,
    pub epsilon: f64,
    pub boxes_delivered: usize,
    pub episode_distance_m: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub qnet: QNetwork,
    pub metrics: Vec<MetricRow>,
    pub steps_done: usize,
    pub episodes: usize,
}

struct Episode {
    state: WorldState,
    maps: WorldMaps,
    ctx: StepContext,
    current: Arc<Observed>,
    idle: usize,
    distance: f64,
}

fn start_episode(spec: &EnvSpec, seed: u64, obs: &ObservationBuilder) -> Result<Episode> {
    let world = spec.config(seed);
    let state = reset(&world, seed)?;
    let maps = WorldMaps::build(&state, world.grid_resolution)?;
    let ctx = StepContext::build(obs, &state, &maps);
    let current = Arc::new(Observed { image: ctx.image.clone(), mask: ctx.mask.clone() });
    Ok(Episode { state, maps, ctx, current, idle: 0, distance: 0.0 })
}

/// Trains a Q-network from scratch. Metrics rows are also written as CSV to
/// `log` when given.
pub fn train(cfg: &TrainConfig, log: Option<&mut dyn Write>) -> Result<TrainOutcome> {
    if cfg.env_mix.is_empty() {
        return Err(HerdError::InvalidConfig("env_mix is empty".into()));
    }
    if cfg.batch_size == 0 || cfg.target_period == 0 || cfg.log_every == 0 {
        return Err(HerdError::InvalidConfig("batch_size, target_period and log_every must be positive".into()));
    }
    QNetwork::check_size(cfg.observation.size)?;
    let mut csv = log.map(csv::Writer::from_writer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut online = QNetwork::new(&mut rng);
    let mut target = online.clone();
    let mut opt = default_sgd(&online);
    let mut grads = Grads::zeros_like(&online.params);
    let mut replay = ReplayBuffer::new(cfg.replay_capacity);
    let obs = ObservationBuilder::new(cfg.observation);
    let size = cfg.observation.size;
    let started = Instant::now();

    let mut metrics = Vec::new();
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);
    let mut episode_idx = 0usize;
    let mut ep = start_episode(&cfg.env_mix[rng.gen_range(0..cfg.env_mix.len())], rng.gen(), &obs)?;
    let mut step = 0usize;

    while step < cfg.steps {
        if cfg.time_budget.map_or(false, |b| started.elapsed() >= b) {
            log::info!("time budget reached after {step} steps");
            break;
        }
        let eps = if step < cfg.warmup_steps { 1.0 } else { cfg.epsilon.at(step) };
        let q = if eps < 1.0 { Some(online.q_map(&ep.ctx.image)?) } else { None };
        let uniform = vec![0.0f32; size * size];
        let Some(action) = select_action(q.as_deref().unwrap_or(&uniform), &ep.ctx.mask, size, eps, &mut rng) else {
            return Err(HerdError::NoAction(0));
        };

        let outcome = match plan_path(&ep, &obs, action) {
            Some(path) => drive(&ep.state, &ep.maps, &path, &cfg.controller, |_| {}).outcome,
            None => idle_outcome(&ep.state),
        };
        let reward = compute_reward(&outcome, &cfg.reward);
        let delivered = outcome.delivered_this_step;
        let displacement = outcome.robot_displacement;
        ep.state = outcome.next_state;
        ep.state.step_index += 1;
        ep.idle = if delivered > 0 { 0 } else { ep.idle + 1 };
        ep.distance += displacement;
        ep.ctx = StepContext::build(&obs, &ep.state, &ep.maps);
        let next = Arc::new(Observed { image: ep.ctx.image.clone(), mask: ep.ctx.mask.clone() });
        replay.push(Transition {
            state: Arc::clone(&ep.current),
            action,
            reward,
            next_state: Arc::clone(&next),
            // time-outs are not terminal, so their value still bootstraps
            terminal: ep.state.all_delivered(),
            step_distance: displacement,
        });
        ep.current = next;

        if step >= cfg.warmup_steps && replay.len() >= cfg.batch_size {
            let batch = replay.sample(cfg.batch_size, &mut rng)?;
            let stats = td_train_step(&mut online, &target, &mut opt, &mut grads, &batch, &cfg.td)?;
            if !stats.loss.is_finite() {
                return Err(HerdError::InvalidConfig(format!("non-finite TD loss at step {step}")));
            }
            loss_sum += stats.loss;
            loss_n += 1;
        }
        step += 1;
        if step % cfg.target_period == 0 {
            target.params.copy_from(&online.params)?;
        }

        let done = is_terminal(&ep.state, ep.idle);
        if done || step % cfg.log_every == 0 {
            let row = MetricRow {
                step,
                episode: episode_idx,
                loss: (loss_n > 0).then(|| loss_sum / loss_n as f64),
                epsilon: eps,
                boxes_delivered: ep.state.boxes_delivered,
                episode_distance_m: ep.distance,
            };
            if let Some(w) = csv.as_mut() {
                w.serialize(&row).map_err(csv_err)?;
                w.flush()?;
            }
            metrics.push(row);
            loss_sum = 0.0;
            loss_n = 0;
        }
        if done {
            log::debug!("episode {episode_idx}: {} boxes, {:.2} m", ep.state.boxes_delivered, ep.distance);
            episode_idx += 1;
            ep = start_episode(&cfg.env_mix[rng.gen_range(0..cfg.env_mix.len())], rng.gen(), &obs)?;
        }
    }
    Ok(TrainOutcome { qnet: online, metrics, steps_done: step, episodes: episode_idx })
}

/// Grid path to the goal under `action`, or `None` when it is unreachable.
fn plan_path(ep: &Episode, obs: &ObservationBuilder, action: (usize, usize)) -> Option<Vec<crate::geometry::Vec2>> {
    let field = ep.ctx.robot_field.as_ref()?;
    let grid = &ep.maps.inflated;
    let raw = obs.pixel_to_world(&ep.state, action.0, action.1);
    let goal = if grid.point_blocked(raw) { project_to_free(grid, raw).ok()? } else { raw };
    grid_path(&ep.state, &ep.maps, field, goal).ok()
}

fn csv_err(e: csv::Error) -> HerdError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => HerdError::Io(io),
        other => HerdError::InvalidConfig(format!("metrics log: {other:?}")),
    }
}
