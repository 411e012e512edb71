//! Hierarchical executor: the Q-network picks a spatial goal, the path to it
//! comes from the grid planner or the diffusion policy, and a
//! rotate-then-translate controller drives it.

use crate::diffusion::DiffusionPolicy;
use crate::error::{HerdError, Result};
use crate::geometry::{point_segment_distance, wrap_angle, Vec2};
use crate::grid::{path_from_field, project_to_free, segment_blocked, DistanceField};
use crate::observation::{build_lowdim, ObservationBuilder, ObservationConfig, StateImage};
use crate::postprocess::{postprocess, PostprocessConfig};
use crate::rl::policy::ranked_actions;
use crate::rl::{compute_reward, select_action, QNetwork, RewardConfig};
use crate::world::{is_terminal, reset, step_motion, Snapshot, StepOutcome, WorldConfig, WorldMaps, WorldState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

/// Goal re-selections after the first choice turns out unreachable.
pub const GOAL_RETRIES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    /// Diffusion path unless the planned path would push a box.
    Herd,
    NoDiffusion,
    OnlyDiffusion,
    /// Grid paths only, as in plain spatial-action-map rollouts.
    Baseline,
}

impl RolloutMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RolloutMode::Herd => "herd",
            RolloutMode::NoDiffusion => "no_diffusion",
            RolloutMode::OnlyDiffusion => "only_diffusion",
            RolloutMode::Baseline => "baseline",
        }
    }

    pub fn uses_diffusion(&self) -> bool {
        matches!(self, RolloutMode::Herd | RolloutMode::OnlyDiffusion)
    }
}

impl fmt::Display for RolloutMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RolloutMode {
    type Err = HerdError;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "herd" => Ok(RolloutMode::Herd),
            "no_diffusion" => Ok(RolloutMode::NoDiffusion),
            "only_diffusion" => Ok(RolloutMode::OnlyDiffusion),
            "baseline" => Ok(RolloutMode::Baseline),
            _ => Err(HerdError::InvalidConfig(format!("unknown rollout mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Rotation per tick is `k_omega · heading error`, capped at `max_turn`.
    pub k_omega: f64,
    pub max_turn: f64,
    /// Longest translation per tick (m).
    pub max_step: f64,
    pub heading_tol: f64,
    pub arrive_tol: f64,
    /// Ticks without moving more than `stall_distance` before giving up.
    pub stall_ticks: usize,
    pub stall_distance: f64,
    /// Net displacement needed for the step to count as movement.
    pub moved_threshold: f64,
    pub max_ticks: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            k_omega: 1.0,
            max_turn: std::f64::consts::PI,
            max_step: 0.1,
            heading_tol: 0.1,
            arrive_tol: 0.05,
            stall_ticks: 50,
            stall_distance: 0.01,
            moved_threshold: 0.05,
            max_ticks: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Rotate,
    Translate,
}

/// Progress of the controller along its path.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub path: Vec<Vec2>,
    pub target: usize,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriveResult {
    /// Summed over all ticks; `next_state` is the final state.
    pub outcome: StepOutcome,
    pub ticks: usize,
    pub stalled: bool,
}

/// Follows `path` from the robot's current pose. `on_tick` sees the state
/// after every controller tick.
pub fn drive(
    state: &WorldState,
    maps: &WorldMaps,
    path: &[Vec2],
    cfg: &ControllerConfig,
    mut on_tick: impl FnMut(&WorldState),
) -> DriveResult {
    let mut s = state.clone();
    let mut ctl = ControllerState { path: path.to_vec(), target: 0, phase: Phase::Rotate };
    let mut progress = vec![0.0; s.boxes.len()];
    let (mut delivered, mut collision, mut displacement) = (0, false, 0.0);
    let (mut ticks, mut stalled) = (0usize, false);
    let mut anchor = s.robot_position();
    let mut anchor_tick = 0usize;

    loop {
        let pos = s.robot_position();
        while ctl.target < ctl.path.len() && pos.dist(ctl.path[ctl.target]) < cfg.arrive_tol {
            ctl.target += 1;
            ctl.phase = Phase::Rotate;
        }
        if ctl.target >= ctl.path.len() {
            break;
        }
        if ticks >= cfg.max_ticks {
            stalled = true;
            break;
        }
        let to = ctl.path[ctl.target] - pos;
        let desired = to.angle();
        let err = wrap_angle(desired - s.robot.theta);
        if ctl.phase == Phase::Rotate && err.abs() >= cfg.heading_tol {
            let turn = (cfg.k_omega * err).clamp(-cfg.max_turn, cfg.max_turn);
            s.robot.theta = wrap_angle(s.robot.theta + turn);
        } else {
            ctl.phase = Phase::Translate;
            s.robot.theta = desired;
            let dist = to.norm();
            let end = pos + to * (cfg.max_step.min(dist) / dist);
            let out = step_motion(&s, maps, pos, end);
            for (a, b) in progress.iter_mut().zip(&out.per_box_progress) {
                *a += b;
            }
            delivered += out.delivered_this_step;
            collision |= out.collision;
            displacement += out.robot_displacement;
            let blocked = out.collision && out.robot_displacement == 0.0;
            s = out.next_state;
            if blocked {
                // the world is static between ticks, so retrying cannot help
                ticks += 1;
                on_tick(&s);
                stalled = true;
                break;
            }
        }
        ticks += 1;
        on_tick(&s);
        let now = s.robot_position();
        if now.dist(anchor) > cfg.stall_distance {
            anchor = now;
            anchor_tick = ticks;
        } else if ticks - anchor_tick >= cfg.stall_ticks {
            stalled = true;
            break;
        }
    }

    let moved = !stalled && displacement > cfg.moved_threshold;
    DriveResult {
        outcome: StepOutcome {
            next_state: s,
            delivered_this_step: delivered,
            collision,
            robot_displacement: displacement,
            per_box_progress: progress,
            moved,
        },
        ticks,
        stalled,
    }
}

/// True if the robot disc swept along `path` would touch an active box.
pub fn path_hits_box(state: &WorldState, path: &[Vec2]) -> bool {
    let clearance = state.robot_radius + state.box_side / 2.0;
    state.active_boxes().any(|(_, b)| match path {
        [] => false,
        [p] => p.dist(b.center) < clearance,
        _ => path.windows(2).any(|w| point_segment_distance(b.center, w[0], w[1]) < clearance),
    })
}

/// Grid path from the robot to `goal`: the robot position, the cell centers
/// of the shortest path and finally `goal` itself. The robot's own cell
/// center is skipped when the direct segment to the next cell is free.
pub fn grid_path(state: &WorldState, maps: &WorldMaps, field: &DistanceField, goal: Vec2) -> Result<Vec<Vec2>> {
    let grid = &maps.inflated;
    let robot = state.robot_position();
    let mut cells = path_from_field(grid, field, goal)?;
    if cells.len() >= 2 && !grid.point_blocked(robot) && !segment_blocked(grid, robot, cells[1]) {
        cells.remove(0);
    }
    if !grid.point_blocked(goal) && cells.last().map_or(false, |&c| grid.cell_of(c) == grid.cell_of(goal)) {
        cells.pop();
    }
    let mut path = Vec::with_capacity(cells.len() + 2);
    path.push(robot);
    path.extend(cells);
    path.push(goal);
    path.dedup_by(|a, b| a.dist(*b) < 1e-9);
    Ok(path)
}

/// The trained policies available to a rollout.
#[derive(Clone, Copy)]
pub struct Policies<'a> {
    pub qnet: &'a QNetwork,
    pub diffusion: Option<&'a DiffusionPolicy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub pixel: (usize, usize),
    pub goal: Vec2,
    pub path: Vec<Vec2>,
    pub used_diffusion: bool,
    /// Diffusion was requested but failed; the grid path was used instead.
    pub diffusion_failed: bool,
    pub path_hits_box: bool,
}

/// Per-step inputs shared by planning and training.
pub struct StepContext {
    pub image: StateImage,
    pub mask: Vec<bool>,
    pub robot_field: Option<DistanceField>,
}

impl StepContext {
    pub fn build(obs: &ObservationBuilder, state: &WorldState, maps: &WorldMaps) -> Self {
        let robot_field = ObservationBuilder::robot_field(state, maps);
        let image = obs.render_with_field(state, maps, robot_field.as_ref());
        let mask = obs.action_mask(state);
        Self { image, mask, robot_field }
    }
}

/// Counts diffusion model invocations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CallCounter {
    pub diffusion_calls: usize,
}

/// Chooses a goal and produces the path to drive.
#[allow(clippy::too_many_arguments)]
pub fn decide_and_plan(
    state: &WorldState,
    maps: &WorldMaps,
    ctx: &StepContext,
    obs: &ObservationBuilder,
    policies: Policies<'_>,
    mode: RolloutMode,
    epsilon: f64,
    post: &PostprocessConfig,
    rng: &mut impl Rng,
    counter: &mut CallCounter,
) -> Result<Plan> {
    if mode.uses_diffusion() && policies.diffusion.is_none() {
        return Err(HerdError::InvalidConfig(format!("mode {mode} needs a diffusion policy")));
    }
    let size = obs.cfg.size;
    let field = ctx.robot_field.as_ref().ok_or(HerdError::NoAction(0))?;
    let q = policies.qnet.q_map(&ctx.image)?;
    let first = select_action(&q, &ctx.mask, size, epsilon, rng).ok_or(HerdError::NoAction(0))?;
    let first_idx = first.0 * size + first.1;
    let candidates = std::iter::once(first_idx)
        .chain(ranked_actions(&q, &ctx.mask).into_iter().filter(|&i| i != first_idx).take(GOAL_RETRIES));

    for idx in candidates {
        let pixel = (idx / size, idx % size);
        let raw_goal = obs.pixel_to_world(state, pixel.0, pixel.1);
        let grid = &maps.inflated;
        let goal = if grid.point_blocked(raw_goal) {
            match project_to_free(grid, raw_goal) {
                Ok(g) => g,
                Err(_) => continue,
            }
        } else {
            raw_goal
        };
        let spfa = match grid_path(state, maps, field, goal) {
            Ok(p) => p,
            Err(HerdError::Unreachable) => continue,
            Err(e) => return Err(e),
        };
        let hits = path_hits_box(state, &spfa);
        let want_diffusion = match mode {
            RolloutMode::Herd => !hits,
            RolloutMode::OnlyDiffusion => true,
            RolloutMode::NoDiffusion | RolloutMode::Baseline => false,
        };
        let mut plan = Plan { pixel, goal, path: spfa, used_diffusion: false, diffusion_failed: false, path_hits_box: hits };
        if want_diffusion {
            let policy = policies.diffusion.expect("checked above");
            counter.diffusion_calls += 1;
            let lowdim = build_lowdim(state, goal);
            let sampled = policy
                .sample(&lowdim, rng)
                .and_then(|raw| postprocess(&raw, state.robot_position(), goal, grid, post));
            match sampled {
                Ok(p) => {
                    plan.path = p.points;
                    plan.used_diffusion = true;
                }
                Err(_) => plan.diffusion_failed = true,
            }
        }
        return Ok(plan);
    }
    Err(HerdError::NoAction(GOAL_RETRIES))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub observation: ObservationConfig,
    pub controller: ControllerConfig,
    pub postprocess: PostprocessConfig,
    pub reward: RewardConfig,
    /// Exploration during evaluation; 0 is greedy.
    pub epsilon: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            observation: ObservationConfig::default(),
            controller: ControllerConfig::default(),
            postprocess: PostprocessConfig::default(),
            reward: RewardConfig::default(),
            epsilon: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub seed: u64,
    pub boxes_delivered: usize,
    pub boxes_total: usize,
    pub distance_m: f64,
    pub high_level_steps: usize,
    /// High-level step at which the last box was delivered.
    pub completion_step: Option<usize>,
    pub diffusion_calls: usize,
    pub diffusion_paths: usize,
    pub total_reward: f64,
}

/// One line of an episode replay file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub step: usize,
    /// State before the step.
    pub state: Snapshot,
    pub goal: Option<[f64; 2]>,
    pub path: Option<Vec<[f64; 2]>>,
    pub used_diffusion: bool,
    pub reward: f64,
    pub delivered: usize,
    pub displacement: f64,
}

/// Runs one episode to termination. Replay records go to `replay` when given.
pub fn run_episode(
    world: &WorldConfig,
    policies: Policies<'_>,
    mode: RolloutMode,
    seed: u64,
    cfg: &RolloutConfig,
    mut replay: Option<&mut dyn Write>,
) -> Result<EpisodeReport> {
    let mut state = reset(world, seed)?;
    let maps = WorldMaps::build(&state, world.grid_resolution)?;
    let obs = ObservationBuilder::new(cfg.observation);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x5eed);
    let mut counter = CallCounter::default();
    let mut report = EpisodeReport {
        seed,
        boxes_delivered: 0,
        boxes_total: state.boxes.len(),
        distance_m: 0.0,
        high_level_steps: 0,
        completion_step: None,
        diffusion_calls: 0,
        diffusion_paths: 0,
        total_reward: 0.0,
    };
    let mut idle = 0;
    while !is_terminal(&state, idle) {
        let before = state.snapshot();
        let ctx = StepContext::build(&obs, &state, &maps);
        let planned =
            decide_and_plan(&state, &maps, &ctx, &obs, policies, mode, cfg.epsilon, &cfg.postprocess, &mut rng, &mut counter);
        let (plan, outcome) = match planned {
            Ok(plan) => {
                let res = drive(&state, &maps, &plan.path, &cfg.controller, |_| {});
                (Some(plan), res.outcome)
            }
            Err(HerdError::NoAction(_)) => (None, idle_outcome(&state)),
            Err(e) => return Err(e),
        };
        let reward = compute_reward(&outcome, &cfg.reward);
        report.total_reward += reward;
        report.distance_m += outcome.robot_displacement;
        if plan.as_ref().map_or(false, |p| p.used_diffusion) {
            report.diffusion_paths += 1;
        }
        if let Some(w) = replay.as_deref_mut() {
            let rec = ReplayRecord {
                step: state.step_index,
                state: before,
                goal: plan.as_ref().map(|p| p.goal.to_array()),
                path: plan.as_ref().map(|p| p.path.iter().map(|v| v.to_array()).collect()),
                used_diffusion: plan.as_ref().map_or(false, |p| p.used_diffusion),
                reward,
                delivered: outcome.delivered_this_step,
                displacement: outcome.robot_displacement,
            };
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
        }
        idle = if outcome.delivered_this_step > 0 { 0 } else { idle + 1 };
        state = outcome.next_state;
        state.step_index += 1;
        report.high_level_steps += 1;
        if state.all_delivered() && report.completion_step.is_none() {
            report.completion_step = Some(report.high_level_steps);
        }
    }
    report.boxes_delivered = state.boxes_delivered;
    report.diffusion_calls = counter.diffusion_calls;
    Ok(report)
}

/// Outcome of a step in which the robot could not pick any goal.
pub fn idle_outcome(state: &WorldState) -> StepOutcome {
    StepOutcome {
        next_state: state.clone(),
        delivered_this_step: 0,
        collision: false,
        robot_displacement: 0.0,
        per_box_progress: vec![0.0; state.boxes.len()],
        moved: false,
    }
}
