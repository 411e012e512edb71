//! Quasi-static 2D box pushing.
//!
//! The robot is a disc, boxes are axis-aligned squares that only translate,
//! obstacles are static rectangles. Motion is applied in fixed substeps; on
//! contact the touched box is displaced by the minimal translation vector and
//! box-box contacts propagate transitively. A push that would drive any box
//! into a wall or obstacle is rejected as a whole and stops the robot.

use crate::error::{HerdError, Result};
use crate::geometry::{Rect, Vec2};
use crate::grid::{spfa_multi_source, Cell, DistanceField, OccupancyGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// High-level steps without a delivery after which an episode ends.
pub const IDLE_STEP_LIMIT: usize = 100;

const CONTACT_EPS: f64 = 1e-9;
const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ObstacleLayout {
    Empty,
    /// Number of square columns drawn uniformly from `min..=max`.
    Columns { min: usize, max: usize },
    /// A wall splitting the workspace, open near the receptacle side.
    Divider,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub width: f64,
    pub height: f64,
    pub n_boxes: usize,
    pub obstacle_layout: ObstacleLayout,
    pub box_side: f64,
    pub robot_radius: f64,
    pub receptacle: Rect,
    pub t_max_steps: usize,
    pub rng_seed: u64,
    pub column_side: f64,
    pub substep: f64,
    /// Cells per meter of the planning and distance grids.
    pub grid_resolution: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self::with_size(10.0, 5.0, 10, ObstacleLayout::Empty)
    }
}

impl WorldConfig {
    /// Default object dimensions, receptacle 1.5 m square in the top-right corner.
    pub fn with_size(width: f64, height: f64, n_boxes: usize, layout: ObstacleLayout) -> Self {
        let rec = 1.5_f64.min(width / 2.0).min(height / 2.0);
        Self {
            width,
            height,
            n_boxes,
            obstacle_layout: layout,
            box_side: 0.25,
            robot_radius: 0.15,
            receptacle: Rect::new(width - rec, height - rec, width, height),
            t_max_steps: 1000,
            rng_seed: 0,
            column_side: 1.0,
            substep: 0.01,
            grid_resolution: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HerdError::InvalidConfig(m.to_string()));
        if !(self.width > 0.0 && self.height > 0.0) {
            return bad("workspace dimensions must be positive");
        }
        if !(self.box_side > 0.0 && self.robot_radius > 0.0) {
            return bad("box_side and robot_radius must be positive");
        }
        if self.n_boxes == 0 {
            return bad("n_boxes must be at least 1");
        }
        let ws = Rect::new(0.0, 0.0, self.width, self.height);
        if !ws.contains_rect(&self.receptacle) || self.receptacle.width() <= 0.0 {
            return bad("receptacle must lie inside the workspace");
        }
        if !(self.substep > 0.0 && self.substep <= self.box_side / 2.0) {
            return bad("substep must be positive and below half the box side");
        }
        if let ObstacleLayout::Columns { min, max } = self.obstacle_layout {
            if min > max {
                return bad("column range is empty");
            }
        }
        Ok(())
    }

    pub fn workspace(&self) -> Rect {
        Rect::new(0.0, 0.0, self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxState {
    pub center: Vec2,
    pub delivered: bool,
}

/// Complete simulator ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub width: f64,
    pub height: f64,
    pub box_side: f64,
    pub robot_radius: f64,
    pub substep: f64,
    pub robot: Pose,
    pub boxes: Vec<BoxState>,
    pub obstacles: Vec<Rect>,
    pub receptacle: Rect,
    pub step_index: usize,
    pub boxes_delivered: usize,
    pub t_max_steps: usize,
}

impl WorldState {
    pub fn robot_position(&self) -> Vec2 {
        self.robot.position()
    }

    pub fn box_rect(&self, i: usize) -> Rect {
        Rect::square(self.boxes[i].center, self.box_side)
    }

    pub fn active_boxes(&self) -> impl Iterator<Item = (usize, &BoxState)> {
        self.boxes.iter().enumerate().filter(|(_, b)| !b.delivered)
    }

    pub fn remaining(&self) -> usize {
        self.boxes.iter().filter(|b| !b.delivered).count()
    }

    pub fn all_delivered(&self) -> bool {
        self.boxes.iter().all(|b| b.delivered)
    }

    pub fn workspace(&self) -> Rect {
        Rect::new(0.0, 0.0, self.width, self.height)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot::from(self)
    }

    /// Checks the placement invariants: everything inside the workspace,
    /// nothing overlapping obstacles, no box-box overlap.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let ws = self.workspace();
        let p = self.robot_position();
        let r = self.robot_radius;
        if p.x < r - 1e-7 || p.y < r - 1e-7 || p.x > self.width - r + 1e-7 || p.y > self.height - r + 1e-7 {
            return Err(format!("robot outside workspace at {p:?}"));
        }
        for o in &self.obstacles {
            if o.distance_to(p) < r - 1e-7 {
                return Err(format!("robot overlaps obstacle {o:?}"));
            }
        }
        for (i, _) in self.active_boxes() {
            let br = self.box_rect(i);
            if !ws.expand(1e-7).contains_rect(&br) {
                return Err(format!("box {i} outside workspace"));
            }
            if self.obstacles.iter().any(|o| o.expand(-1e-7).overlaps(&br)) {
                return Err(format!("box {i} overlaps an obstacle"));
            }
            for (j, _) in self.active_boxes().filter(|(j, _)| *j > i) {
                if self.box_rect(j).expand(-1e-7).overlaps(&br) {
                    return Err(format!("boxes {i} and {j} overlap"));
                }
            }
        }
        Ok(())
    }
}

/// Wire form of a world snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub robot: [f64; 3],
    pub boxes: Vec<[f64; 2]>,
    pub obstacles: Vec<[f64; 4]>,
    pub receptacle: [f64; 4],
    pub step: usize,
}

impl From<&WorldState> for Snapshot {
    fn from(s: &WorldState) -> Self {
        Snapshot {
            robot: [s.robot.x, s.robot.y, s.robot.theta],
            boxes: s.active_boxes().map(|(_, b)| b.center.to_array()).collect(),
            obstacles: s.obstacles.iter().map(Rect::to_array).collect(),
            receptacle: s.receptacle.to_array(),
            step: s.step_index,
        }
    }
}

/// Result of driving the robot along one straight segment.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: WorldState,
    pub delivered_this_step: usize,
    pub collision: bool,
    pub robot_displacement: f64,
    /// Signed decrease of each box's receptacle distance (positive = closer).
    pub per_box_progress: Vec<f64>,
    pub moved: bool,
}

/// Static grids and fields derived from the obstacle layout.
#[derive(Debug, Clone)]
pub struct WorldMaps {
    /// Obstacles only, no inflation (box distances).
    pub free: OccupancyGrid,
    /// Obstacles and walls inflated by the robot radius (robot planning).
    pub inflated: OccupancyGrid,
    /// Distance from every free cell to the receptacle.
    pub receptacle_field: DistanceField,
}

impl WorldMaps {
    pub fn build(state: &WorldState, resolution: f64) -> Result<Self> {
        let free = OccupancyGrid::from_obstacles(state.width, state.height, &state.obstacles, resolution, 0.0);
        let inflated = OccupancyGrid::from_obstacles(
            state.width,
            state.height,
            &state.obstacles,
            resolution,
            state.robot_radius,
        );
        let sources: Vec<Cell> = (0..free.len())
            .map(|i| free.cell_at(i))
            .filter(|&c| !free.is_blocked(c) && state.receptacle.contains(free.cell_center(c)))
            .collect();
        if sources.is_empty() {
            return Err(HerdError::ConfigInfeasible("receptacle covers no free cell".into()));
        }
        let receptacle_field = spfa_multi_source(&free, &sources)?;
        Ok(Self { free, inflated, receptacle_field })
    }

    pub fn box_distance(&self, center: Vec2) -> f64 {
        self.receptacle_field.interpolate(center)
    }
}

/// Randomized initial state; deterministic in `seed`.
pub fn reset(cfg: &WorldConfig, seed: u64) -> Result<WorldState> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ws = cfg.workspace();
    let r = cfg.robot_radius;
    let s = cfg.box_side;

    let obstacles = match cfg.obstacle_layout {
        ObstacleLayout::Empty => Vec::new(),
        ObstacleLayout::Divider => {
            let t = 0.2;
            let gap = (cfg.height * 0.4).max(cfg.receptacle.height() + 4.0 * r);
            let x = cfg.width / 2.0;
            vec![Rect::new(x - t / 2.0, 0.0, x + t / 2.0, (cfg.height - gap).max(0.0))]
        }
        ObstacleLayout::Columns { min, max } => {
            let count = rng.gen_range(min..=max);
            let side = cfg.column_side;
            let gap = 2.0 * r + s + 0.05;
            let mut cols: Vec<Rect> = Vec::with_capacity(count);
            for _ in 0..count {
                let placed = sample_until(&mut rng, |rng| {
                    let c = uniform_in(rng, &ws.expand(-(side / 2.0 + gap)))?;
                    let rect = Rect::square(c, side);
                    let clear = !rect.expand(gap).overlaps(&cfg.receptacle)
                        && cols.iter().all(|o| !o.expand(gap).overlaps(&rect));
                    clear.then_some(rect)
                });
                cols.push(placed.ok_or_else(|| infeasible("columns"))?);
            }
            cols
        }
    };

    let robot_area = ws.expand(-2.0 * r);
    let robot_pos = sample_until(&mut rng, |rng| {
        let p = uniform_in(rng, &robot_area)?;
        obstacles.iter().all(|o| o.distance_to(p) >= 2.0 * r).then_some(p)
    })
    .ok_or_else(|| infeasible("robot"))?;
    let theta = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);

    let box_area = ws.expand(-(s / 2.0 + r));
    let mut boxes: Vec<Rect> = Vec::with_capacity(cfg.n_boxes);
    for _ in 0..cfg.n_boxes {
        let placed = sample_until(&mut rng, |rng| {
            let c = uniform_in(rng, &box_area)?;
            let rect = Rect::square(c, s);
            let ok = !rect.overlaps(&cfg.receptacle)
                && obstacles.iter().all(|o| !o.expand(r).overlaps(&rect))
                && rect.distance_to(robot_pos) >= r
                && boxes.iter().all(|b| !b.overlaps(&rect));
            ok.then_some(rect)
        });
        boxes.push(placed.ok_or_else(|| infeasible("boxes"))?);
    }

    Ok(WorldState {
        width: cfg.width,
        height: cfg.height,
        box_side: s,
        robot_radius: r,
        substep: cfg.substep,
        robot: Pose { x: robot_pos.x, y: robot_pos.y, theta },
        boxes: boxes.iter().map(|b| BoxState { center: b.center(), delivered: false }).collect(),
        obstacles,
        receptacle: cfg.receptacle,
        step_index: 0,
        boxes_delivered: 0,
        t_max_steps: cfg.t_max_steps,
    })
}

fn infeasible(what: &str) -> HerdError {
    HerdError::ConfigInfeasible(format!("could not place {what} after {PLACEMENT_ATTEMPTS} attempts"))
}

fn uniform_in(rng: &mut ChaCha8Rng, area: &Rect) -> Option<Vec2> {
    if area.width() < 0.0 || area.height() < 0.0 {
        return None;
    }
    let x = area.min.x + rng.gen::<f64>() * area.width();
    let y = area.min.y + rng.gen::<f64>() * area.height();
    Some(Vec2::new(x, y))
}

fn sample_until<T>(rng: &mut ChaCha8Rng, mut f: impl FnMut(&mut ChaCha8Rng) -> Option<T>) -> Option<T> {
    (0..PLACEMENT_ATTEMPTS).find_map(|_| f(rng))
}

/// Episode end: everything delivered, the idle limit reached, or out of time.
pub fn is_terminal(state: &WorldState, steps_since_last_delivery: usize) -> bool {
    state.all_delivered() || steps_since_last_delivery >= IDLE_STEP_LIMIT || state.step_index >= state.t_max_steps
}

/// Drives the robot from `start` (its current position) towards `end`.
pub fn step_motion(state: &WorldState, maps: &WorldMaps, start: Vec2, end: Vec2) -> StepOutcome {
    debug_assert!(start.dist(state.robot_position()) < 1e-6, "segment must start at the robot");
    let mut next = state.clone();
    let start_dist: Vec<Option<f64>> = state
        .boxes
        .iter()
        .map(|b| (!b.delivered).then(|| maps.box_distance(b.center)))
        .collect();
    let origin = state.robot_position();
    let total = origin.dist(end);
    let n = (total / state.substep).ceil() as usize;
    let mut collision = false;
    let mut displacement = 0.0;
    let mut delivered = 0;
    let mut final_centers: Vec<Vec2> = state.boxes.iter().map(|b| b.center).collect();

    for k in 1..=n {
        let target = origin.lerp(end, k as f64 / n as f64);
        let prev = next.robot_position();
        match try_substep(&next, target) {
            Some(centers) => {
                displacement += prev.dist(target);
                next.robot.x = target.x;
                next.robot.y = target.y;
                for (i, c) in centers.into_iter().enumerate() {
                    next.boxes[i].center = c;
                    final_centers[i] = c;
                }
                for i in 0..next.boxes.len() {
                    if !next.boxes[i].delivered && next.receptacle.contains_rect(&next.box_rect(i)) {
                        next.boxes[i].delivered = true;
                        next.boxes_delivered += 1;
                        delivered += 1;
                    }
                }
            }
            None => {
                collision = true;
                break;
            }
        }
    }

    let per_box_progress = start_dist
        .iter()
        .zip(&state.boxes)
        .zip(&final_centers)
        .map(|((d0, b0), c)| match d0 {
            Some(d0) if *c != b0.center => d0 - maps.box_distance(*c),
            _ => 0.0,
        })
        .collect();

    StepOutcome {
        next_state: next,
        delivered_this_step: delivered,
        collision,
        robot_displacement: displacement,
        per_box_progress,
        moved: displacement > 0.0,
    }
}

/// Box centers after moving the robot to `target`, or `None` if blocked.
fn try_substep(state: &WorldState, target: Vec2) -> Option<Vec<Vec2>> {
    let r = state.robot_radius;
    let ws = state.workspace();
    if target.x < r - CONTACT_EPS
        || target.y < r - CONTACT_EPS
        || target.x > state.width - r + CONTACT_EPS
        || target.y > state.height - r + CONTACT_EPS
    {
        return None;
    }
    if state.obstacles.iter().any(|o| o.distance_to(target) < r - CONTACT_EPS) {
        return None;
    }
    let motion = target - state.robot_position();
    let mut centers: Vec<Vec2> = state.boxes.iter().map(|b| b.center).collect();
    let active: Vec<bool> = state.boxes.iter().map(|b| !b.delivered).collect();
    let mut queue: Vec<usize> = Vec::new();

    for i in 0..centers.len() {
        if !active[i] {
            continue;
        }
        let rect = Rect::square(centers[i], state.box_side);
        if let Some(push) = disc_rect_push(target, r, &rect, motion) {
            centers[i] = centers[i] + push;
            queue.push(i);
        }
    }

    let mut budget = 8 * centers.len().max(1);
    while let Some(i) = queue.pop() {
        budget = budget.checked_sub(1)?;
        let rect = Rect::square(centers[i], state.box_side);
        if !ws.expand(CONTACT_EPS).contains_rect(&rect)
            || state.obstacles.iter().any(|o| o.expand(-CONTACT_EPS).overlaps(&rect))
        {
            return None;
        }
        for j in 0..centers.len() {
            if j == i || !active[j] {
                continue;
            }
            let other = Rect::square(centers[j], state.box_side);
            if let Some(push) = rect_rect_push(&rect, &other, motion) {
                centers[j] = centers[j] + push;
                queue.push(j);
            }
        }
    }

    // a chain reaction must not fold back onto the robot
    for i in 0..centers.len() {
        if active[i] {
            let rect = Rect::square(centers[i], state.box_side);
            if rect.distance_to(target) < r - 1e-6 {
                return None;
            }
        }
    }
    Some(centers)
}

/// Translation that separates a box from the robot disc, if they overlap.
fn disc_rect_push(c: Vec2, r: f64, rect: &Rect, motion: Vec2) -> Option<Vec2> {
    let q = rect.closest_point(c);
    let d = q.dist(c);
    if d >= r - CONTACT_EPS {
        return None;
    }
    if d > 1e-12 {
        let dir = (q - c) * (1.0 / d);
        return Some(dir * (r - d + CONTACT_EPS));
    }
    // disc center inside the box: exit along the motion's dominant axis
    let (dx, dy) = if motion.x.abs() >= motion.y.abs() {
        let dx = if motion.x >= 0.0 { c.x + r - rect.min.x } else { c.x - r - rect.max.x };
        (dx, 0.0)
    } else {
        let dy = if motion.y >= 0.0 { c.y + r - rect.min.y } else { c.y - r - rect.max.y };
        (0.0, dy)
    };
    Some(Vec2::new(dx, dy) + Vec2::new(dx.signum(), dy.signum()) * CONTACT_EPS)
}

/// Minimal axis push moving `b` out of `a`, if they overlap.
fn rect_rect_push(a: &Rect, b: &Rect, motion: Vec2) -> Option<Vec2> {
    let ox = a.max.x.min(b.max.x) - a.min.x.max(b.min.x);
    let oy = a.max.y.min(b.max.y) - a.min.y.max(b.min.y);
    if ox <= CONTACT_EPS || oy <= CONTACT_EPS {
        return None;
    }
    let (ca, cb) = (a.center(), b.center());
    let sign = |delta: f64, fallback: f64| {
        if delta > 0.0 {
            1.0
        } else if delta < 0.0 {
            -1.0
        } else if fallback >= 0.0 {
            1.0
        } else {
            -1.0
        }
    };
    if ox <= oy {
        Some(Vec2::new(sign(cb.x - ca.x, motion.x) * (ox + CONTACT_EPS), 0.0))
    } else {
        Some(Vec2::new(0.0, sign(cb.y - ca.y, motion.y) * (oy + CONTACT_EPS)))
    }
}
