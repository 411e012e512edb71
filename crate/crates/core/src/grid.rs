//! Occupancy grids and exact 8-connected shortest paths.
//!
//! Distances are accumulated as integer counts of orthogonal and diagonal
//! moves and converted to meters on read, so equal-length paths always yield
//! bit-identical distances regardless of the order in which they are found.

use crate::error::{HerdError, Result};
use crate::geometry::{Rect, Vec2};
use std::collections::VecDeque;
use std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// Binary occupancy over a rectangular workspace anchored at the origin.
/// Rows run along +y, columns along +x.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    resolution: f64,
    width_cells: usize,
    height_cells: usize,
    blocked: Vec<bool>,
    inflation_radius: f64,
}

/// Offsets (drow, dcol, is_diagonal) of the 8-neighborhood.
const NEIGHBORS: [(isize, isize, bool); 8] = [
    (-1, 0, false),
    (1, 0, false),
    (0, -1, false),
    (0, 1, false),
    (-1, -1, true),
    (-1, 1, true),
    (1, -1, true),
    (1, 1, true),
];

impl OccupancyGrid {
    /// All-free grid.
    pub fn new(width_cells: usize, height_cells: usize, resolution: f64) -> Self {
        Self {
            resolution,
            width_cells,
            height_cells,
            blocked: vec![false; width_cells * height_cells],
            inflation_radius: 0.0,
        }
    }

    /// Rasterizes `obstacles` dilated by `inflation_radius`. A cell is blocked
    /// when its center lies inside an obstacle or closer than the inflation
    /// radius to one; with nonzero inflation the workspace walls dilate too.
    pub fn from_obstacles(
        width: f64,
        height: f64,
        obstacles: &[Rect],
        resolution: f64,
        inflation_radius: f64,
    ) -> Self {
        let width_cells = (width * resolution).round().max(1.0) as usize;
        let height_cells = (height * resolution).round().max(1.0) as usize;
        let mut grid = Self::new(width_cells, height_cells, resolution);
        grid.inflation_radius = inflation_radius;
        for row in 0..height_cells {
            for col in 0..width_cells {
                let c = grid.cell_center(Cell::new(row, col));
                let near_wall = inflation_radius > 0.0
                    && (c.x < inflation_radius
                        || c.y < inflation_radius
                        || width - c.x < inflation_radius
                        || height - c.y < inflation_radius);
                let hit = near_wall
                    || obstacles.iter().any(|o| o.contains(c) || o.distance_to(c) < inflation_radius);
                grid.blocked[row * width_cells + col] = hit;
            }
        }
        grid
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn width_cells(&self) -> usize {
        self.width_cells
    }

    pub fn height_cells(&self) -> usize {
        self.height_cells
    }

    pub fn inflation_radius(&self) -> f64 {
        self.inflation_radius
    }

    pub fn len(&self) -> usize {
        self.blocked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocked.is_empty()
    }

    pub fn index(&self, c: Cell) -> usize {
        c.row * self.width_cells + c.col
    }

    pub fn cell_at(&self, idx: usize) -> Cell {
        Cell::new(idx / self.width_cells, idx % self.width_cells)
    }

    pub fn in_bounds(&self, row: isize, col: isize) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height_cells && (col as usize) < self.width_cells
    }

    pub fn is_blocked(&self, c: Cell) -> bool {
        self.blocked[self.index(c)]
    }

    pub fn set_blocked(&mut self, c: Cell, blocked: bool) {
        let i = self.index(c);
        self.blocked[i] = blocked;
    }

    pub fn free_count(&self) -> usize {
        self.blocked.iter().filter(|b| !**b).count()
    }

    /// Cell containing `p`, clamped to the grid.
    pub fn cell_of(&self, p: Vec2) -> Cell {
        let col = ((p.x * self.resolution).floor() as isize).clamp(0, self.width_cells as isize - 1);
        let row = ((p.y * self.resolution).floor() as isize).clamp(0, self.height_cells as isize - 1);
        Cell::new(row as usize, col as usize)
    }

    pub fn cell_center(&self, c: Cell) -> Vec2 {
        Vec2::new((c.col as f64 + 0.5) / self.resolution, (c.row as f64 + 0.5) / self.resolution)
    }

    /// True when `p` lies outside the grid or in a blocked cell.
    pub fn point_blocked(&self, p: Vec2) -> bool {
        let gx = p.x * self.resolution;
        let gy = p.y * self.resolution;
        if !(gx >= 0.0 && gy >= 0.0 && gx < self.width_cells as f64 && gy < self.height_cells as f64) {
            return true;
        }
        self.is_blocked(self.cell_of(p))
    }

    /// Neighbor indices and whether the move is diagonal. Diagonal moves
    /// require both adjacent orthogonal cells to be free.
    fn for_each_neighbor(&self, idx: usize, mut f: impl FnMut(usize, bool)) {
        let c = self.cell_at(idx);
        let (r, k) = (c.row as isize, c.col as isize);
        for &(dr, dc, diag) in &NEIGHBORS {
            let (nr, nc) = (r + dr, k + dc);
            if !self.in_bounds(nr, nc) {
                continue;
            }
            let n = nr as usize * self.width_cells + nc as usize;
            if self.blocked[n] {
                continue;
            }
            if diag {
                let a = nr as usize * self.width_cells + k as usize;
                let b = r as usize * self.width_cells + nc as usize;
                if self.blocked[a] || self.blocked[b] {
                    continue;
                }
            }
            f(n, diag);
        }
    }
}

const NO_PARENT: u32 = u32::MAX;

/// Single- or multi-source shortest-path distances in meters.
#[derive(Debug, Clone)]
pub struct DistanceField {
    dist: Vec<f64>,
    parent: Vec<u32>,
    width_cells: usize,
    height_cells: usize,
    resolution: f64,
}

impl DistanceField {
    pub fn dist(&self, c: Cell) -> f64 {
        self.dist[c.row * self.width_cells + c.col]
    }

    pub fn parent(&self, c: Cell) -> Option<Cell> {
        let p = self.parent[c.row * self.width_cells + c.col];
        (p != NO_PARENT).then(|| Cell::new(p as usize / self.width_cells, p as usize % self.width_cells))
    }

    pub fn values(&self) -> &[f64] {
        &self.dist
    }

    /// Largest finite distance.
    pub fn max_finite(&self) -> f64 {
        self.dist.iter().copied().filter(|d| d.is_finite()).fold(0.0, f64::max)
    }

    /// Distance at the cell containing `p` (clamped to the grid).
    pub fn at_point(&self, p: Vec2) -> f64 {
        let col = ((p.x * self.resolution).floor() as isize).clamp(0, self.width_cells as isize - 1);
        let row = ((p.y * self.resolution).floor() as isize).clamp(0, self.height_cells as isize - 1);
        self.dist[row as usize * self.width_cells + col as usize]
    }

    /// Bilinear interpolation between cell centers; falls back to the
    /// containing cell when any of the four supports is unreachable.
    pub fn interpolate(&self, p: Vec2) -> f64 {
        let gx = p.x * self.resolution - 0.5;
        let gy = p.y * self.resolution - 0.5;
        let max_c = self.width_cells as isize - 1;
        let max_r = self.height_cells as isize - 1;
        let c0 = (gx.floor() as isize).clamp(0, max_c);
        let r0 = (gy.floor() as isize).clamp(0, max_r);
        let c1 = (c0 + 1).min(max_c);
        let r1 = (r0 + 1).min(max_r);
        let tx = (gx - c0 as f64).clamp(0.0, 1.0);
        let ty = (gy - r0 as f64).clamp(0.0, 1.0);
        let v = |r: isize, c: isize| self.dist[r as usize * self.width_cells + c as usize];
        let (a, b, c, d) = (v(r0, c0), v(r0, c1), v(r1, c0), v(r1, c1));
        if !(a.is_finite() && b.is_finite() && c.is_finite() && d.is_finite()) {
            return self.at_point(p);
        }
        let top = a * (1.0 - tx) + b * tx;
        let bot = c * (1.0 - tx) + d * tx;
        top * (1.0 - ty) + bot * ty
    }
}

/// Exact shortest distances from `source` with the queue-based Bellman-Ford
/// relaxation (SPFA).
pub fn spfa_distance(grid: &OccupancyGrid, source: Cell) -> Result<DistanceField> {
    spfa_multi_source(grid, &[source])
}

/// SPFA from a set of zero-distance sources. Every source must be free.
pub fn spfa_multi_source(grid: &OccupancyGrid, sources: &[Cell]) -> Result<DistanceField> {
    let n = grid.len();
    // (orthogonal moves, diagonal moves); u32::MAX marks unreached
    let mut counts: Vec<(u32, u32)> = vec![(u32::MAX, u32::MAX); n];
    let mut parent = vec![NO_PARENT; n];
    let mut in_queue = vec![false; n];
    let mut queue = VecDeque::new();
    for &s in sources {
        if s.row >= grid.height_cells || s.col >= grid.width_cells || grid.is_blocked(s) {
            return Err(HerdError::InvalidSource { row: s.row, col: s.col });
        }
        let i = grid.index(s);
        if !in_queue[i] {
            counts[i] = (0, 0);
            in_queue[i] = true;
            queue.push_back(i);
        }
    }
    let value = |c: (u32, u32)| c.0 as f64 + c.1 as f64 * SQRT_2;
    while let Some(u) = queue.pop_front() {
        in_queue[u] = false;
        let cu = counts[u];
        grid.for_each_neighbor(u, |v, diag| {
            let cand = if diag { (cu.0, cu.1 + 1) } else { (cu.0 + 1, cu.1) };
            let better = counts[v].0 == u32::MAX || value(cand) < value(counts[v]);
            if better {
                counts[v] = cand;
                parent[v] = u as u32;
                if !in_queue[v] {
                    in_queue[v] = true;
                    queue.push_back(v);
                }
            }
        });
    }
    let res = grid.resolution;
    let dist = counts
        .iter()
        .map(|&c| if c.0 == u32::MAX { f64::INFINITY } else { value(c) / res })
        .collect();
    Ok(DistanceField {
        dist,
        parent,
        width_cells: grid.width_cells,
        height_cells: grid.height_cells,
        resolution: res,
    })
}

/// Cell-center polyline from `src` to `dst`. A blocked `dst` is first moved
/// to the nearest free cell.
pub fn shortest_path(grid: &OccupancyGrid, src: Vec2, dst: Vec2) -> Result<Vec<Vec2>> {
    let field = spfa_distance(grid, grid.cell_of(src))?;
    path_from_field(grid, &field, dst)
}

/// Walks parents of an existing single-source field back from `dst`.
pub fn path_from_field(grid: &OccupancyGrid, field: &DistanceField, dst: Vec2) -> Result<Vec<Vec2>> {
    let dst_cell = if grid.point_blocked(dst) {
        grid.cell_of(project_to_free(grid, dst)?)
    } else {
        grid.cell_of(dst)
    };
    if !field.dist(dst_cell).is_finite() {
        return Err(HerdError::Unreachable);
    }
    let mut cells = vec![dst_cell];
    let mut cur = dst_cell;
    while let Some(p) = field.parent(cur) {
        cells.push(p);
        cur = p;
    }
    cells.reverse();
    Ok(cells.into_iter().map(|c| grid.cell_center(c)).collect())
}

/// Nearest free cell center to `p` by Euclidean distance; ties go to the
/// lowest (row, col).
pub fn project_to_free(grid: &OccupancyGrid, p: Vec2) -> Result<Vec2> {
    if grid.is_empty() {
        return Err(HerdError::NoFreeSpace);
    }
    let start = grid.cell_of(p);
    if !grid.point_blocked(p) {
        return Ok(grid.cell_center(start));
    }
    let res = grid.resolution;
    let max_ring = grid.width_cells.max(grid.height_cells) as isize;
    let mut best: Option<(f64, Cell)> = None;
    let (r0, c0) = (start.row as isize, start.col as isize);
    // distance from p to the grid-space square spanned by ring k
    let px = p.x * res;
    let py = p.y * res;
    for k in 0..=max_ring {
        if let Some((bd, _)) = best {
            // lower bound on the distance of any cell in ring k
            let lo_x = (c0 - k) as f64;
            let hi_x = (c0 + k + 1) as f64;
            let lo_y = (r0 - k) as f64;
            let hi_y = (r0 + k + 1) as f64;
            let gap = (px - lo_x).min(hi_x - px).min(py - lo_y).min(hi_y - py).max(0.0) / res;
            if gap > bd.sqrt() {
                break;
            }
        }
        for r in (r0 - k)..=(r0 + k) {
            for c in (c0 - k)..=(c0 + k) {
                if (r - r0).abs() != k && (c - c0).abs() != k {
                    continue;
                }
                if !grid.in_bounds(r, c) {
                    continue;
                }
                let cell = Cell::new(r as usize, c as usize);
                if grid.is_blocked(cell) {
                    continue;
                }
                let ctr = grid.cell_center(cell);
                let d2 = (ctr.x - p.x).powi(2) + (ctr.y - p.y).powi(2);
                let better = match best {
                    None => true,
                    Some((bd, bc)) => d2 < bd || (d2 == bd && cell < bc),
                };
                if better {
                    best = Some((d2, cell));
                }
            }
        }
    }
    best.map(|(_, c)| grid.cell_center(c)).ok_or(HerdError::NoFreeSpace)
}

/// Visits every cell touched by the segment `p -> q` (supercover). Cells
/// outside the grid are reported as `None`.
pub fn supercover_cells(grid: &OccupancyGrid, p: Vec2, q: Vec2, mut visit: impl FnMut(Option<Cell>) -> bool) {
    let res = grid.resolution;
    let (x0, y0) = (p.x * res, p.y * res);
    let (x1, y1) = (q.x * res, q.y * res);
    let mut cx = x0.floor() as isize;
    let mut cy = y0.floor() as isize;
    let ex = x1.floor() as isize;
    let ey = y1.floor() as isize;
    let dx = x1 - x0;
    let dy = y1 - y0;
    let step_x: isize = if dx > 0.0 { 1 } else { -1 };
    let step_y: isize = if dy > 0.0 { 1 } else { -1 };
    let t_delta_x = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
    let t_delta_y = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };
    let mut t_max_x = if dx > 0.0 {
        (cx as f64 + 1.0 - x0) * t_delta_x
    } else if dx < 0.0 {
        (x0 - cx as f64) * t_delta_x
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy > 0.0 {
        (cy as f64 + 1.0 - y0) * t_delta_y
    } else if dy < 0.0 {
        (y0 - cy as f64) * t_delta_y
    } else {
        f64::INFINITY
    };
    let lookup = |x: isize, y: isize| grid.in_bounds(y, x).then(|| Cell::new(y as usize, x as usize));
    if !visit(lookup(cx, cy)) {
        return;
    }
    const EPS: f64 = 1e-12;
    let budget = (ex - cx).unsigned_abs() + (ey - cy).unsigned_abs() + 2;
    for _ in 0..budget * 2 {
        if cx == ex && cy == ey {
            return;
        }
        let tm = t_max_x.min(t_max_y);
        if tm > 1.0 + EPS {
            return;
        }
        if (t_max_x - t_max_y).abs() <= EPS {
            // passes through a cell corner: both side cells are touched
            if !visit(lookup(cx + step_x, cy)) || !visit(lookup(cx, cy + step_y)) {
                return;
            }
            cx += step_x;
            cy += step_y;
            t_max_x += t_delta_x;
            t_max_y += t_delta_y;
        } else if t_max_x < t_max_y {
            cx += step_x;
            t_max_x += t_delta_x;
        } else {
            cy += step_y;
            t_max_y += t_delta_y;
        }
        if !visit(lookup(cx, cy)) {
            return;
        }
    }
}

/// True iff the supercover of `p -> q` touches a blocked or out-of-grid cell.
pub fn segment_blocked(grid: &OccupancyGrid, p: Vec2, q: Vec2) -> bool {
    let mut hit = false;
    supercover_cells(grid, p, q, |c| {
        match c {
            Some(c) if !grid.is_blocked(c) => {}
            _ => hit = true,
        }
        !hit
    });
    hit
}
