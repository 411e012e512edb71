//! Robot-centric state images and the low-dimensional conditioning vector.

use crate::geometry::{Rect, Vec2};
use crate::grid::{project_to_free, spfa_distance, DistanceField};
use crate::world::{Snapshot, WorldMaps, WorldState};
use serde::{Deserialize, Serialize};

pub const NUM_CHANNELS: usize = 4;
pub const LOWDIM_LEN: usize = 26;
pub const NEAREST_BOXES: usize = 4;

pub const CLASS_FLOOR: f32 = 0.0;
pub const CLASS_OBSTACLE: f32 = 0.25;
pub const CLASS_RECEPTACLE: f32 = 0.5;
pub const CLASS_BOX: f32 = 0.75;
pub const CLASS_ROBOT: f32 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationConfig {
    /// Image height and width in pixels.
    pub size: usize,
    pub meters_per_pixel: f64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self { size: 96, meters_per_pixel: 0.1 }
    }
}

/// Maps between image pixels and world coordinates for one robot pose.
/// The robot sits at the image center with its heading pointing to row 0.
#[derive(Debug, Clone, Copy)]
pub struct RobotFrame {
    origin: Vec2,
    forward: Vec2,
    right: Vec2,
    size: usize,
    mpp: f64,
}

impl RobotFrame {
    pub fn new(state: &WorldState, cfg: &ObservationConfig) -> Self {
        let theta = state.robot.theta;
        Self {
            origin: state.robot_position(),
            forward: Vec2::from_angle(theta),
            right: Vec2::new(theta.sin(), -theta.cos()),
            size: cfg.size,
            mpp: cfg.meters_per_pixel,
        }
    }

    pub fn pixel_to_world(&self, row: usize, col: usize) -> Vec2 {
        let half = self.size as f64 / 2.0;
        let fwd = (half - row as f64 - 0.5) * self.mpp;
        let lat = (col as f64 + 0.5 - half) * self.mpp;
        self.origin + self.forward * fwd + self.right * lat
    }

    pub fn world_to_pixel(&self, p: Vec2) -> Option<(usize, usize)> {
        let d = p - self.origin;
        let half = self.size as f64 / 2.0;
        let row = half - d.dot(self.forward) / self.mpp;
        let col = half + d.dot(self.right) / self.mpp;
        (row >= 0.0 && col >= 0.0 && row < self.size as f64 && col < self.size as f64)
            .then(|| (row as usize, col as usize))
    }
}

/// Four-channel observation, stored channel-major (`[c][row][col]`).
#[derive(Debug, Clone, PartialEq)]
pub struct StateImage {
    pub size: usize,
    pub data: Vec<f32>,
}

impl StateImage {
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.size * self.size;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[(c * self.size + row) * self.size + col]
    }
}

/// Renders state images and the matching action mask.
#[derive(Debug, Clone, Copy)]
pub struct ObservationBuilder {
    pub cfg: ObservationConfig,
}

impl ObservationBuilder {
    pub fn new(cfg: ObservationConfig) -> Self {
        Self { cfg }
    }

    /// Distance field from the robot over the inflated grid. A robot sitting
    /// in an inflated cell starts from the nearest free cell.
    pub fn robot_field(state: &WorldState, maps: &WorldMaps) -> Option<DistanceField> {
        let grid = &maps.inflated;
        let p = state.robot_position();
        let src = if grid.point_blocked(p) { project_to_free(grid, p).ok()? } else { p };
        spfa_distance(grid, grid.cell_of(src)).ok()
    }

    pub fn render(&self, state: &WorldState, maps: &WorldMaps) -> StateImage {
        let field = Self::robot_field(state, maps);
        self.render_with_field(state, maps, field.as_ref())
    }

    pub fn render_with_field(
        &self,
        state: &WorldState,
        maps: &WorldMaps,
        robot_field: Option<&DistanceField>,
    ) -> StateImage {
        let n = self.cfg.size;
        let frame = RobotFrame::new(state, &self.cfg);
        let mut data = vec![0.0f32; NUM_CHANNELS * n * n];
        let ws = state.workspace();
        let robot = state.robot_position();
        let r = state.robot_radius;
        let boxes: Vec<Rect> = state.active_boxes().map(|(i, _)| state.box_rect(i)).collect();
        let robot_max = robot_field.map(|f| f.max_finite()).unwrap_or(0.0);
        let rec_max = maps.receptacle_field.max_finite();
        let norm = |d: f64, max: f64| -> f32 {
            if !d.is_finite() {
                0.0
            } else if max <= 0.0 {
                1.0
            } else {
                (1.0 - d / max).clamp(0.0, 1.0) as f32
            }
        };
        let plane = n * n;
        for row in 0..n {
            for col in 0..n {
                let p = frame.pixel_to_world(row, col);
                let k = row * n + col;
                let inside = ws.contains(p) && p.x < state.width && p.y < state.height;
                let in_robot = p.dist(robot) <= r;
                let class = if !inside || state.obstacles.iter().any(|o| o.contains(p)) {
                    CLASS_OBSTACLE
                } else if in_robot {
                    CLASS_ROBOT
                } else if boxes.iter().any(|b| b.contains(p)) {
                    CLASS_BOX
                } else if state.receptacle.contains(p) {
                    CLASS_RECEPTACLE
                } else {
                    CLASS_FLOOR
                };
                data[k] = class;
                data[plane + k] = if in_robot { 1.0 } else { 0.0 };
                if inside {
                    if let Some(f) = robot_field {
                        data[2 * plane + k] = norm(f.at_point(p), robot_max);
                    }
                    data[3 * plane + k] = norm(maps.receptacle_field.at_point(p), rec_max);
                }
            }
        }
        StateImage { size: n, data }
    }

    /// `true` for pixels that may be chosen as goals: inside the workspace
    /// and outside every obstacle.
    pub fn action_mask(&self, state: &WorldState) -> Vec<bool> {
        let n = self.cfg.size;
        let frame = RobotFrame::new(state, &self.cfg);
        let ws = state.workspace();
        let mut mask = Vec::with_capacity(n * n);
        for row in 0..n {
            for col in 0..n {
                let p = frame.pixel_to_world(row, col);
                let inside = ws.contains(p) && p.x < state.width && p.y < state.height;
                mask.push(inside && !state.obstacles.iter().any(|o| o.contains(p)));
            }
        }
        mask
    }

    pub fn pixel_to_world(&self, state: &WorldState, row: usize, col: usize) -> Vec2 {
        RobotFrame::new(state, &self.cfg).pixel_to_world(row, col)
    }
}

/// Fixed-layout conditioning vector: robot corners (8), receptacle corners
/// (8), four nearest box centers (8), spatial goal (2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowDimObservation(pub [f64; LOWDIM_LEN]);

impl LowDimObservation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn goal(&self) -> Vec2 {
        Vec2::new(self.0[24], self.0[25])
    }

    pub fn robot_center(&self) -> Vec2 {
        let mut c = Vec2::ZERO;
        for k in 0..4 {
            c = c + Vec2::new(self.0[2 * k], self.0[2 * k + 1]);
        }
        c * 0.25
    }
}

/// Indices of up to four undelivered boxes nearest to the robot, closest
/// first, ties by index.
pub fn nearest_boxes(state: &WorldState) -> Vec<usize> {
    let robot = state.robot_position();
    let mut idx: Vec<(f64, usize)> = state.active_boxes().map(|(i, b)| (b.center.dist(robot), i)).collect();
    idx.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    idx.into_iter().take(NEAREST_BOXES).map(|(_, i)| i).collect()
}

pub fn build_lowdim(state: &WorldState, goal: Vec2) -> LowDimObservation {
    let near: Vec<Vec2> = nearest_boxes(state).into_iter().map(|i| state.boxes[i].center).collect();
    lowdim_from_parts(state.robot.position(), state.robot.theta, state.robot_radius, &state.receptacle, &near, goal)
}

/// Same vector as [`build_lowdim`], from a stored snapshot. Snapshot boxes
/// are the undelivered ones in index order, so nearest-box ties agree.
pub fn build_lowdim_from_snapshot(snap: &Snapshot, robot_radius: f64, goal: Vec2) -> LowDimObservation {
    let p = Vec2::new(snap.robot[0], snap.robot[1]);
    let mut idx: Vec<(f64, usize)> =
        snap.boxes.iter().enumerate().map(|(i, b)| (Vec2::new(b[0], b[1]).dist(p), i)).collect();
    idx.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let near: Vec<Vec2> =
        idx.into_iter().take(NEAREST_BOXES).map(|(_, i)| Vec2::new(snap.boxes[i][0], snap.boxes[i][1])).collect();
    let [x0, y0, x1, y1] = snap.receptacle;
    lowdim_from_parts(p, snap.robot[2], robot_radius, &Rect::new(x0, y0, x1, y1), &near, goal)
}

fn lowdim_from_parts(p: Vec2, theta: f64, r: f64, receptacle: &Rect, near: &[Vec2], goal: Vec2) -> LowDimObservation {
    let mut v = [0.0; LOWDIM_LEN];
    let local = [Vec2::new(r, r), Vec2::new(-r, r), Vec2::new(-r, -r), Vec2::new(r, -r)];
    for (k, c) in local.iter().enumerate() {
        let w = p + c.rotate(theta);
        v[2 * k] = w.x;
        v[2 * k + 1] = w.y;
    }
    for (k, c) in receptacle.corners().iter().enumerate() {
        v[8 + 2 * k] = c.x;
        v[8 + 2 * k + 1] = c.y;
    }
    let placeholder = receptacle.center();
    for k in 0..NEAREST_BOXES {
        let c = near.get(k).copied().unwrap_or(placeholder);
        v[16 + 2 * k] = c.x;
        v[16 + 2 * k + 1] = c.y;
    }
    v[24] = goal.x;
    v[25] = goal.y;
    LowDimObservation(v)
}

/// Per-dimension min/max used to map values affinely onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    /// Fits over rows of equal length. Returns `None` for no rows.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Option<Self> {
        let mut it = rows.into_iter();
        let first = it.next()?;
        let mut min = first.to_vec();
        let mut max = first.to_vec();
        for row in it {
            for (k, &x) in row.iter().enumerate() {
                min[k] = min[k].min(x);
                max[k] = max[k].max(x);
            }
        }
        Some(Self { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn normalize_value(&self, k: usize, x: f64) -> f64 {
        let span = self.max[k] - self.min[k];
        if span <= 0.0 {
            0.0
        } else {
            2.0 * (x - self.min[k]) / span - 1.0
        }
    }

    pub fn denormalize_value(&self, k: usize, y: f64) -> f64 {
        let span = self.max[k] - self.min[k];
        if span <= 0.0 {
            self.min[k]
        } else {
            (y + 1.0) * 0.5 * span + self.min[k]
        }
    }

    pub fn normalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter().enumerate().map(|(k, &x)| self.normalize_value(k, x)).collect()
    }

    pub fn denormalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter().enumerate().map(|(k, &y)| self.denormalize_value(k, y)).collect()
    }

    /// Normalizes a point using dimensions `(0, 1)`.
    pub fn normalize_point(&self, p: Vec2) -> Vec2 {
        Vec2::new(self.normalize_value(0, p.x), self.normalize_value(1, p.y))
    }

    pub fn denormalize_point(&self, p: Vec2) -> Vec2 {
        Vec2::new(self.denormalize_value(0, p.x), self.denormalize_value(1, p.y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{reset, BoxState, ObstacleLayout, Pose, WorldConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn empty_state(w: f64, h: f64, robot: Vec2, theta: f64, boxes: &[Vec2]) -> WorldState {
        let cfg = WorldConfig::with_size(w, h, 1, ObstacleLayout::Empty);
        WorldState {
            width: w,
            height: h,
            box_side: cfg.box_side,
            robot_radius: cfg.robot_radius,
            substep: cfg.substep,
            robot: Pose { x: robot.x, y: robot.y, theta },
            boxes: boxes.iter().map(|&c| BoxState { center: c, delivered: false }).collect(),
            obstacles: vec![],
            receptacle: cfg.receptacle,
            step_index: 0,
            boxes_delivered: 0,
            t_max_steps: 100,
        }
    }

    #[test]
    fn footprint_is_centered_disc() {
        let s = empty_state(10.0, 10.0, Vec2::new(5.0, 5.0), 0.3, &[]);
        let maps = WorldMaps::build(&s, 10.0).unwrap();
        let img = ObservationBuilder::new(ObservationConfig::default()).render(&s, &maps);
        let ch = img.channel(1);
        let on: Vec<(usize, usize)> =
            (0..96 * 96).filter(|&k| ch[k] == 1.0).map(|k| (k / 96, k % 96)).collect();
        assert!(!on.is_empty());
        let (sr, sc) = on.iter().fold((0.0, 0.0), |a, &(r, c)| (a.0 + r as f64, a.1 + c as f64));
        let (mr, mc) = (sr / on.len() as f64, sc / on.len() as f64);
        assert!((mr - 47.5).abs() < 0.6 && (mc - 47.5).abs() < 0.6);
        assert!(ch.iter().all(|&v| v == 0.0 || v == 1.0));
        // the robot's own cell is at distance zero
        let frame = RobotFrame::new(&s, &ObservationConfig::default());
        let robot_cell = maps.inflated.cell_of(s.robot_position());
        let mut hits = 0;
        for r in 0..96 {
            for c in 0..96 {
                if maps.inflated.cell_of(frame.pixel_to_world(r, c)) == robot_cell {
                    assert_eq!(img.at(2, r, c), 1.0);
                    hits += 1;
                }
            }
        }
        assert!(hits > 0);
    }

    #[test]
    fn values_in_unit_interval() {
        let cfg = WorldConfig::with_size(10.0, 10.0, 20, ObstacleLayout::Columns { min: 2, max: 8 });
        for seed in 0..5 {
            let s = reset(&cfg, seed).unwrap();
            let maps = WorldMaps::build(&s, 10.0).unwrap();
            let img = ObservationBuilder::new(ObservationConfig::default()).render(&s, &maps);
            assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn lowdim_layout_and_placeholders() {
        let s = empty_state(10.0, 5.0, Vec2::new(2.0, 2.0), 0.0, &[]);
        let o = build_lowdim(&s, Vec2::new(3.0, 3.0));
        assert_eq!(o.0.len(), 26);
        let c = s.receptacle.center();
        for k in 0..4 {
            assert_eq!((o.0[16 + 2 * k], o.0[17 + 2 * k]), (c.x, c.y));
        }
        assert_eq!(o.goal(), Vec2::new(3.0, 3.0));
        assert!(o.robot_center().dist(Vec2::new(2.0, 2.0)) < 1e-12);
    }

    #[test]
    fn lowdim_takes_four_nearest() {
        let boxes: Vec<Vec2> = (0..6).map(|i| Vec2::new(3.0 + i as f64 * 0.5, 1.0)).collect();
        let s = empty_state(10.0, 5.0, Vec2::new(6.0, 1.0), 0.0, &boxes);
        let near = nearest_boxes(&s);
        assert_eq!(near.len(), 4);
        // distances 3.0,2.5,...,0.5: box 5 (x=5.5, d=0.5), box 4 (x=5.0, d=1.0), box 3, box 2
        assert_eq!(near, vec![5, 4, 3, 2]);
    }

    #[test]
    fn norm_roundtrip_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..100).map(|_| (0..5).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
        let mut rows_deg = rows.clone();
        for r in rows_deg.iter_mut() {
            r[2] = 1.5;
        }
        let stats = NormStats::fit(rows_deg.iter().map(|r| r.as_slice())).unwrap();
        let mut worst: f64 = 0.0;
        for r in &rows_deg {
            let n = stats.normalize(r);
            assert!(n.iter().all(|x| (-1.0 - 1e-12..=1.0 + 1e-12).contains(x)));
            assert_eq!(n[2], 0.0);
            let back = stats.denormalize(&n);
            for (a, b) in back.iter().zip(r) {
                worst = worst.max((a - b).abs());
            }
        }
        assert!(worst < 1e-9);
        assert_eq!(stats.normalize_value(0, stats.min[0]), -1.0);
        assert_eq!(stats.normalize_value(0, stats.max[0]), 1.0);
    }
}
