//! Demonstrations: sparse waypoint recording, resampling to a fixed horizon,
//! suffix augmentation, datasets for diffusion training and a scripted
//! demonstrator.

use crate::diffusion::{TrainingSet, HORIZON};
use crate::envs::EnvSpec;
use crate::error::{HerdError, Result};
use crate::geometry::{polyline_length, Rect, Vec2};
use crate::grid::{path_from_field, segment_blocked, spfa_distance, OccupancyGrid};
use crate::observation::{build_lowdim, build_lowdim_from_snapshot, NormStats, LOWDIM_LEN};
use crate::rollout::{drive, ControllerConfig};
use crate::world::{reset, Snapshot, WorldMaps, WorldState};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

/// Travel between logged waypoints (m).
pub const WAYPOINT_SPACING: f64 = 0.3;
const SPACING_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoSource {
    Human,
    Synthetic,
}

/// One recorded demonstration towards a spatial goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoEpisode {
    pub source: DemoSource,
    pub goal: Vec2,
    /// Sparse waypoints; the first is the start position.
    pub waypoints: Vec<Vec2>,
    /// World snapshot at each sparse waypoint.
    pub snapshots: Vec<Snapshot>,
    pub robot_radius: f64,
    /// Conditioning vector at the start.
    pub obs: Vec<f64>,
    pub trajectory: Vec<Vec2>,
}

/// Logs a waypoint whenever the robot has travelled `WAYPOINT_SPACING`
/// along its path since the previous one.
#[derive(Debug, Clone)]
pub struct Recorder {
    goal: Vec2,
    robot_radius: f64,
    waypoints: Vec<Vec2>,
    snapshots: Vec<Snapshot>,
    start_obs: Vec<f64>,
    last_pos: Vec2,
    travel: f64,
}

impl Recorder {
    /// Starts a recording; the start position is always the first waypoint.
    pub fn start(state: &WorldState, goal: Vec2) -> Self {
        let p = state.robot_position();
        Self {
            goal,
            robot_radius: state.robot_radius,
            waypoints: vec![p],
            snapshots: vec![state.snapshot()],
            start_obs: build_lowdim(state, goal).0.to_vec(),
            last_pos: p,
            travel: 0.0,
        }
    }

    /// Feeds the current pose. Returns true when a waypoint was logged.
    pub fn log_waypoint(&mut self, state: &WorldState) -> bool {
        let p = state.robot_position();
        self.travel += p.dist(self.last_pos);
        self.last_pos = p;
        if self.travel + SPACING_TOL >= WAYPOINT_SPACING {
            self.waypoints.push(p);
            self.snapshots.push(state.snapshot());
            self.travel = 0.0;
            true
        } else {
            false
        }
    }

    pub fn waypoint_count(&self) -> usize {
        self.waypoints.len()
    }

    pub fn goal(&self) -> Vec2 {
        self.goal
    }

    pub fn finish(self, source: DemoSource) -> DemoEpisode {
        let trajectory = finalize(&self.waypoints, self.goal);
        DemoEpisode {
            source,
            goal: self.goal,
            waypoints: self.waypoints,
            snapshots: self.snapshots,
            robot_radius: self.robot_radius,
            obs: self.start_obs,
            trajectory,
        }
    }
}

/// Point at arc length `s` along `pts` (clamped to the ends).
fn point_at(pts: &[Vec2], cum: &[f64], s: f64) -> Vec2 {
    let k = cum.partition_point(|&c| c <= s).clamp(1, pts.len() - 1);
    let seg = cum[k] - cum[k - 1];
    if seg <= 0.0 {
        return pts[k];
    }
    pts[k - 1].lerp(pts[k], ((s - cum[k - 1]) / seg).clamp(0.0, 1.0))
}

fn cumulative(pts: &[Vec2]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(pts.len());
    let mut acc = 0.0;
    cum.push(0.0);
    for w in pts.windows(2) {
        acc += w[0].dist(w[1]);
        cum.push(acc);
    }
    cum
}

/// Anchors `waypoints + goal`, resampled to `HORIZON` points evenly spaced in
/// arc length. Both endpoints are kept exactly.
pub fn finalize(waypoints: &[Vec2], goal: Vec2) -> Vec<Vec2> {
    let mut anchors = waypoints.to_vec();
    anchors.push(goal);
    let cum = cumulative(&anchors);
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(HORIZON);
    out.push(anchors[0]);
    for j in 1..HORIZON - 1 {
        out.push(point_at(&anchors, &cum, total * j as f64 / (HORIZON - 1) as f64));
    }
    out.push(goal);
    out
}

/// Resamples `anchors` at a fixed `spacing`, then pads with the goal (the
/// last anchor) up to `HORIZON` points.
fn resample_padded(anchors: &[Vec2], spacing: f64) -> Vec<Vec2> {
    let goal = *anchors.last().unwrap();
    let cum = cumulative(anchors);
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(HORIZON);
    if spacing > 0.0 {
        let mut j = 0usize;
        while out.len() < HORIZON - 1 && (j as f64) * spacing < total - 1e-9 {
            out.push(point_at(anchors, &cum, j as f64 * spacing));
            j += 1;
        }
    }
    if out.is_empty() {
        out.push(anchors[0]);
    }
    out.resize(HORIZON, goal);
    out
}

/// Demos starting from every sparse waypoint after the first. Each keeps the
/// point spacing of the full episode and is padded with the goal.
pub fn augment(ep: &DemoEpisode) -> Vec<DemoEpisode> {
    let mut full = ep.waypoints.clone();
    full.push(ep.goal);
    let spacing = polyline_length(&full) / (HORIZON - 1) as f64;
    (1..ep.waypoints.len())
        .map(|k| {
            let mut anchors = ep.waypoints[k..].to_vec();
            anchors.push(ep.goal);
            let obs = build_lowdim_from_snapshot(&ep.snapshots[k], ep.robot_radius, ep.goal).0.to_vec();
            DemoEpisode {
                source: ep.source,
                goal: ep.goal,
                waypoints: ep.waypoints[k..].to_vec(),
                snapshots: ep.snapshots[k..].to_vec(),
                robot_radius: ep.robot_radius,
                obs,
                trajectory: resample_padded(&anchors, spacing),
            }
        })
        .collect()
}

/// One stored training pair in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub obs: Vec<f64>,
    pub traj: Vec<[f64; 2]>,
    pub source: DemoSource,
}

impl DemoRecord {
    pub fn from_episode(ep: &DemoEpisode) -> Self {
        Self { obs: ep.obs.clone(), traj: ep.trajectory.iter().map(|p| p.to_array()).collect(), source: ep.source }
    }
}

/// Stats written next to a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub obs: NormStats,
    /// Shared by every trajectory point: x then y.
    pub traj: NormStats,
    pub human: usize,
    pub synthetic: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    pub records: Vec<DemoRecord>,
    pub stats: DatasetStats,
}

pub fn stats_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".stats.json");
    PathBuf::from(s)
}

impl DemoDataset {
    /// Every episode plus its augmentations, with stats fitted over all of them.
    pub fn build(episodes: &[DemoEpisode]) -> Result<Self> {
        let mut records = Vec::new();
        for ep in episodes {
            records.push(DemoRecord::from_episode(ep));
            records.extend(augment(ep).iter().map(DemoRecord::from_episode));
        }
        Self::from_records(records)
    }

    pub fn from_records(records: Vec<DemoRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(HerdError::EmptyDataset);
        }
        for r in &records {
            if r.obs.len() != LOWDIM_LEN || r.traj.len() != HORIZON {
                return Err(HerdError::shape("demo dataset", format!("record with {} obs values and {} points", r.obs.len(), r.traj.len())));
            }
        }
        let obs = NormStats::fit(records.iter().map(|r| r.obs.as_slice())).ok_or(HerdError::EmptyDataset)?;
        let traj = NormStats::fit(records.iter().flat_map(|r| r.traj.iter().map(|p| p.as_slice()))).ok_or(HerdError::EmptyDataset)?;
        let human = records.iter().filter(|r| r.source == DemoSource::Human).count();
        let synthetic = records.len() - human;
        Ok(Self { records, stats: DatasetStats { obs, traj, human, synthetic } })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Normalized observation and trajectory of record `i`.
    pub fn normalized(&self, i: usize) -> (Vec<f64>, Vec<Vec2>) {
        let r = &self.records[i];
        let obs = self.stats.obs.normalize(&r.obs);
        let traj = r.traj.iter().map(|p| self.stats.traj.normalize_point(Vec2::new(p[0], p[1]))).collect();
        (obs, traj)
    }

    /// Normalized tensors for the denoiser, trajectories as `[x.. | y..]`.
    pub fn training_set(&self) -> TrainingSet {
        let mut obs = Vec::with_capacity(self.len() * LOWDIM_LEN);
        let mut traj = Vec::with_capacity(self.len() * 2 * HORIZON);
        for i in 0..self.len() {
            let (o, t) = self.normalized(i);
            obs.extend(o.iter().map(|&v| v as f32));
            traj.extend(t.iter().map(|p| p.x as f32));
            traj.extend(t.iter().map(|p| p.y as f32));
        }
        TrainingSet { obs, traj, obs_dim: LOWDIM_LEN, horizon: HORIZON }
    }

    /// Writes the records as JSON lines and the stats to `<path>.stats.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        std::fs::write(stats_path(path), serde_json::to_string_pretty(&self.stats)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let records = read_jsonl(path)?;
        let stats: DatasetStats = serde_json::from_str(&std::fs::read_to_string(stats_path(path))?)?;
        let ds = Self::from_records(records)?;
        if ds.stats != stats {
            return Err(HerdError::InvalidConfig(format!("{}: stats file does not match the records", path.display())));
        }
        Ok(ds)
    }
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Appends one episode as a JSON line.
pub fn append_episode(path: &Path, ep: &DemoEpisode) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_vec(ep)?;
    line.push(b'\n');
    f.write_all(&line)?;
    Ok(())
}

pub fn read_episodes(path: &Path) -> Result<Vec<DemoEpisode>> {
    read_jsonl(path)
}

/// Extra clearance kept from boxes by the scripted demonstrator, on top of
/// the robot radius. Covers the half-cell slack of grid planning.
pub const BOX_MARGIN: f64 = 0.1;
const MIN_GOAL_DISTANCE: f64 = 0.5;
const GOAL_ATTEMPTS: usize = 200;

/// Planning grid of the scripted demonstrator: obstacles, walls and boxes
/// inflated by the robot radius plus `BOX_MARGIN` for boxes.
fn demonstrator_grid(state: &WorldState, res: f64) -> OccupancyGrid {
    let grow = BOX_MARGIN;
    let mut obstacles: Vec<Rect> = state.obstacles.clone();
    obstacles.extend(state.active_boxes().map(|(i, _)| state.box_rect(i).expand(grow)));
    OccupancyGrid::from_obstacles(state.width, state.height, &obstacles, res, state.robot_radius)
}

/// Straight-to-goal path that detours around obstacles and boxes: a grid
/// shortest path shortened by line-of-sight checks.
pub fn synthetic_path(state: &WorldState, goal: Vec2, res: f64) -> Option<Vec<Vec2>> {
    let grid = demonstrator_grid(state, res);
    let robot = state.robot_position();
    if grid.point_blocked(robot) || grid.point_blocked(goal) {
        return None;
    }
    let field = spfa_distance(&grid, grid.cell_of(robot)).ok()?;
    let cells = path_from_field(&grid, &field, goal).ok()?;
    let mut dense = vec![robot];
    dense.extend(cells);
    dense.push(goal);
    // greedy string pulling
    let mut out = vec![robot];
    let mut i = 0;
    while i < dense.len() - 1 {
        let mut j = dense.len() - 1;
        while j > i + 1 && segment_blocked(&grid, dense[i], dense[j]) {
            j -= 1;
        }
        out.push(dense[j]);
        i = j;
    }
    out.dedup_by(|a, b| a.dist(*b) < 1e-9);
    Some(out)
}

/// Scripted demonstrations in randomized worlds of `env`, each towards a
/// random free goal.
pub fn synthesize_demos(n: usize, env: &EnvSpec, rng: &mut impl Rng) -> Result<Vec<DemoEpisode>> {
    let ctl = ControllerConfig::default();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let seed: u64 = rng.gen();
        let world = env.config(seed);
        let state = reset(&world, seed)?;
        let maps = WorldMaps::build(&state, world.grid_resolution)?;
        let robot = state.robot_position();
        let found = (0..GOAL_ATTEMPTS).find_map(|_| {
            let g = Vec2::new(rng.gen_range(0.0..state.width), rng.gen_range(0.0..state.height));
            if g.dist(robot) < MIN_GOAL_DISTANCE {
                return None;
            }
            synthetic_path(&state, g, world.grid_resolution).map(|p| (g, p))
        });
        let Some((goal, path)) = found else { continue };
        let mut rec = Recorder::start(&state, goal);
        drive(&state, &maps, &path, &ctl, |s| {
            rec.log_waypoint(s);
        });
        out.push(rec.finish(DemoSource::Synthetic));
    }
    Ok(out)
}

/// Demos that drive straight from the start to a random free goal, without
/// simulating the motion. Useful as a sanity set for the denoiser.
pub fn straight_line_demos(n: usize, env: &EnvSpec, rng: &mut impl Rng) -> Result<Vec<DemoEpisode>> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let seed: u64 = rng.gen();
        let world = env.config(seed);
        let state = reset(&world, seed)?;
        let maps = WorldMaps::build(&state, world.grid_resolution)?;
        let robot = state.robot_position();
        let goal = Vec2::new(rng.gen_range(0.0..state.width), rng.gen_range(0.0..state.height));
        if goal.dist(robot) < MIN_GOAL_DISTANCE || maps.inflated.point_blocked(goal) {
            continue;
        }
        out.push(Recorder::start(&state, goal).finish(DemoSource::Synthetic));
    }
    Ok(out)
}
