//! Turns a raw sampled trajectory into a collision-free polyline:
//! endpoint overwrite, projection of blocked points, distance pruning, and
//! shortest-path repair of blocked segments.

use crate::error::Result;
use crate::geometry::{polyline_length, Vec2};
use crate::grid::{project_to_free, segment_blocked, shortest_path, OccupancyGrid};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexOrigin {
    Sampled,
    Projected,
    Repair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasiblePath {
    pub points: Vec<Vec2>,
    pub origins: Vec<VertexOrigin>,
}

impl FeasiblePath {
    pub fn length(&self) -> f64 {
        path_length(&self.points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    /// Vertices closer than this to their predecessor are dropped.
    pub min_spacing: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self { min_spacing: 0.25 }
    }
}

pub fn path_length(path: &[Vec2]) -> f64 {
    polyline_length(path)
}

/// `grid` must be inflated by the robot radius and `goal` should be free.
/// A robot resting inside an inflated cell (touching an obstacle) first
/// steps to the nearest free cell; only that first segment may be blocked.
pub fn postprocess(raw: &[Vec2], robot: Vec2, goal: Vec2, grid: &OccupancyGrid, cfg: &PostprocessConfig) -> Result<FeasiblePath> {
    let goal = if grid.point_blocked(goal) { project_to_free(grid, goal)? } else { goal };

    // (1) endpoints
    let mut pts: Vec<(Vec2, VertexOrigin)> = Vec::with_capacity(raw.len().max(2));
    pts.push((robot, VertexOrigin::Sampled));
    if raw.len() > 2 {
        pts.extend(raw[1..raw.len() - 1].iter().map(|&p| (p, VertexOrigin::Sampled)));
    }

    // (2) projection
    for (p, origin) in pts[1..].iter_mut() {
        if grid.point_blocked(*p) {
            *p = project_to_free(grid, *p)?;
            *origin = VertexOrigin::Projected;
        }
    }

    // (3) pruning; the goal always survives, so drop interior points too
    // close to it as well
    let mut kept = vec![pts[0]];
    for &(p, o) in &pts[1..] {
        if p.dist(kept.last().unwrap().0) >= cfg.min_spacing && p.dist(goal) >= cfg.min_spacing {
            kept.push((p, o));
        }
    }
    kept.push((goal, VertexOrigin::Sampled));
    if grid.point_blocked(robot) {
        let free = project_to_free(grid, robot)?;
        kept.insert(1, (free, VertexOrigin::Repair));
    }

    // (4) repair
    let mut out: Vec<(Vec2, VertexOrigin)> = vec![kept[0]];
    for (i, w) in kept.windows(2).enumerate() {
        let (a, b) = (w[0].0, w[1].0);
        let exempt = i == 0 && grid.point_blocked(a);
        if !exempt && segment_blocked(grid, a, b) {
            for p in shortest_path(grid, a, b)? {
                if p != a && p != b && out.last().map_or(true, |q| q.0 != p) {
                    out.push((p, VertexOrigin::Repair));
                }
            }
        }
        out.push(w[1]);
    }
    Ok(FeasiblePath { points: out.iter().map(|v| v.0).collect(), origins: out.iter().map(|v| v.1).collect() })
}

/// Independent re-check of every vertex and segment. A first vertex inside
/// an inflated cell is tolerated together with its outgoing segment.
pub fn is_feasible(path: &[Vec2], grid: &OccupancyGrid) -> bool {
    let start_exempt = path.first().map_or(false, |&p| grid.point_blocked(p));
    path.iter().enumerate().all(|(i, &p)| (i == 0 && start_exempt) || !grid.point_blocked(p))
        && path.windows(2).enumerate().all(|(i, w)| (i == 0 && start_exempt) || !segment_blocked(grid, w[0], w[1]))
}
