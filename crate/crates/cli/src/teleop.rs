//! Simulation side of human demonstration collection.

use crate::protocol::{AckMessage, SessionAction, SessionStatus, StateMessage};
use herd_core::demo::{append_episode, DemoSource, Recorder};
use herd_core::envs::EnvSpec;
use herd_core::geometry::wrap_angle;
use herd_core::grid::project_to_free;
use herd_core::observation::{ObservationBuilder, ObservationConfig};
use herd_core::rl::policy::masked_argmax;
use herd_core::rl::QNetwork;
use herd_core::rollout::grid_path;
use herd_core::world::{reset, step_motion, WorldMaps, WorldState};
use herd_core::{Result, Vec2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

/// Speed limits applied to incoming commands.
pub const MAX_SPEED: f64 = 0.5;
pub const MAX_TURN_RATE: f64 = 2.0;

pub struct TeleopSession {
    env: EnvSpec,
    state: WorldState,
    maps: WorldMaps,
    rng: ChaCha8Rng,
    qnet: Option<QNetwork>,
    obs: ObservationBuilder,
    demo_path: PathBuf,
    goal: Option<Vec2>,
    path: Option<Vec<Vec2>>,
    recorder: Option<Recorder>,
    time: f64,
    saved: usize,
}

impl TeleopSession {
    /// `qnet`, when given, proposes goals greedily; otherwise goals are random.
    pub fn new(env: EnvSpec, seed: u64, demo_path: PathBuf, qnet: Option<QNetwork>) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (state, maps) = Self::fresh_world(&env, &mut rng)?;
        Ok(Self {
            env,
            state,
            maps,
            rng,
            qnet,
            obs: ObservationBuilder::new(ObservationConfig::default()),
            demo_path,
            goal: None,
            path: None,
            recorder: None,
            time: 0.0,
            saved: 0,
        })
    }

    fn fresh_world(env: &EnvSpec, rng: &mut ChaCha8Rng) -> Result<(WorldState, WorldMaps)> {
        let seed: u64 = rng.gen();
        let cfg = env.config(seed);
        let state = reset(&cfg, seed)?;
        let maps = WorldMaps::build(&state, cfg.grid_resolution)?;
        Ok((state, maps))
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn goal(&self) -> Option<Vec2> {
        self.goal
    }

    pub fn saved(&self) -> usize {
        self.saved
    }

    pub fn recording(&self) -> bool {
        self.recorder.is_some()
    }

    /// Integrates a velocity command for `dt` seconds: turn first, then
    /// drive along the new heading (pushing boxes on contact).
    pub fn advance(&mut self, v: f64, w: f64, dt: f64) {
        let v = v.clamp(-MAX_SPEED, MAX_SPEED);
        let w = w.clamp(-MAX_TURN_RATE, MAX_TURN_RATE);
        self.time += dt;
        self.state.robot.theta = wrap_angle(self.state.robot.theta + w * dt);
        let d = v * dt;
        if d != 0.0 {
            let start = self.state.robot_position();
            let end = start + Vec2::from_angle(self.state.robot.theta) * d;
            self.state = step_motion(&self.state, &self.maps, start, end).next_state;
        }
        if let Some(rec) = self.recorder.as_mut() {
            rec.log_waypoint(&self.state);
        }
    }

    fn pick_goal(&mut self) -> Vec2 {
        let grid = &self.maps.inflated;
        if let Some(q) = &self.qnet {
            let img = self.obs.render(&self.state, &self.maps);
            let mask = self.obs.action_mask(&self.state);
            if let Some(idx) = q.q_map(&img).ok().and_then(|v| masked_argmax(&v, &mask)) {
                let size = self.obs.cfg.size;
                let g = self.obs.pixel_to_world(&self.state, idx / size, idx % size);
                if let Ok(g) = if grid.point_blocked(g) { project_to_free(grid, g) } else { Ok(g) } {
                    return g;
                }
            }
        }
        loop {
            let g = Vec2::new(self.rng.gen_range(0.0..self.state.width), self.rng.gen_range(0.0..self.state.height));
            if !grid.point_blocked(g) {
                return g;
            }
        }
    }

    pub fn handle(&mut self, action: SessionAction) -> AckMessage {
        let (ok, detail) = match action {
            SessionAction::Start => {
                let goal = self.pick_goal();
                self.path = herd_core::observation::ObservationBuilder::robot_field(&self.state, &self.maps)
                    .and_then(|f| grid_path(&self.state, &self.maps, &f, goal).ok());
                self.goal = Some(goal);
                self.recorder = Some(Recorder::start(&self.state, goal));
                (true, format!("recording towards ({:.2}, {:.2})", goal.x, goal.y))
            }
            SessionAction::Save => match self.recorder.take() {
                Some(rec) if rec.waypoint_count() >= 2 => {
                    let ep = rec.finish(DemoSource::Human);
                    match append_episode(&self.demo_path, &ep) {
                        Ok(()) => {
                            self.saved += 1;
                            self.clear_goal();
                            (true, format!("saved episode with {} waypoints", ep.waypoints.len()))
                        }
                        Err(e) => (false, format!("could not write demo file: {e}")),
                    }
                }
                Some(rec) => {
                    let n = rec.waypoint_count();
                    self.recorder = Some(rec);
                    (false, format!("need at least 2 waypoints, have {n}"))
                }
                None => (false, "no recording in progress".into()),
            },
            SessionAction::Discard => {
                let had = self.recorder.take().is_some();
                self.clear_goal();
                (had, if had { "discarded".into() } else { "no recording in progress".into() })
            }
        };
        AckMessage { action, ok, detail, saved: self.saved }
    }

    fn clear_goal(&mut self) {
        self.goal = None;
        self.path = None;
    }

    /// Starts over in a new random world.
    pub fn new_world(&mut self) -> Result<()> {
        let (s, m) = Self::fresh_world(&self.env, &mut self.rng)?;
        self.state = s;
        self.maps = m;
        self.recorder = None;
        self.clear_goal();
        Ok(())
    }

    pub fn message(&self) -> StateMessage {
        let snap = self.state.snapshot();
        StateMessage {
            t: self.time,
            robot: snap.robot,
            boxes: snap.boxes,
            receptacle: snap.receptacle,
            obstacles: snap.obstacles,
            goal: self.goal.map(|g| g.to_array()),
            path: self.path.as_ref().map(|p| p.iter().map(|v| v.to_array()).collect()),
            session: SessionStatus {
                recording: self.recorder.is_some(),
                waypoints: self.recorder.as_ref().map_or(0, |r| r.waypoint_count()),
            },
        }
    }
}
