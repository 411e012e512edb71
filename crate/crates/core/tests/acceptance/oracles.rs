//! Reference implementations written independently of the library code.

use herd_core::grid::{Cell, OccupancyGrid};
use herd_core::nn::{Grads, ParameterSet, Tensor};
use herd_core::Vec2;
use rand::Rng;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Dijkstra over the 8-connected grid. Diagonal moves need both orthogonal
/// neighbours free. Path costs are kept as (straight, diagonal) move counts
/// so the final distance is formed the same way for both solvers.
pub fn dijkstra(grid: &OccupancyGrid, source: Cell) -> Vec<f64> {
    #[derive(PartialEq)]
    struct Item(f64, u32, u32, usize);
    impl Eq for Item {}
    impl Ord for Item {
        fn cmp(&self, o: &Self) -> Ordering {
            o.0.partial_cmp(&self.0).unwrap()
        }
    }
    impl PartialOrd for Item {
        fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
            Some(self.cmp(o))
        }
    }
    let (w, h) = (grid.width_cells(), grid.height_cells());
    let cost = |a: u32, b: u32| a as f64 + b as f64 * std::f64::consts::SQRT_2;
    let free = |r: isize, c: isize| r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && !grid.is_blocked(Cell::new(r as usize, c as usize));
    let mut best: Vec<Option<(u32, u32)>> = vec![None; w * h];
    let mut done = vec![false; w * h];
    let mut heap = BinaryHeap::new();
    let s = source.row * w + source.col;
    best[s] = Some((0, 0));
    heap.push(Item(0.0, 0, 0, s));
    while let Some(Item(_, a, b, u)) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        let (r, c) = ((u / w) as isize, (u % w) as isize);
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                if (dr, dc) == (0, 0) || !free(r + dr, c + dc) {
                    continue;
                }
                let diag = dr != 0 && dc != 0;
                if diag && !(free(r + dr, c) && free(r, c + dc)) {
                    continue;
                }
                let v = (r + dr) as usize * w + (c + dc) as usize;
                let cand = if diag { (a, b + 1) } else { (a + 1, b) };
                if best[v].map_or(true, |o| cost(cand.0, cand.1) < cost(o.0, o.1)) {
                    best[v] = Some(cand);
                    heap.push(Item(cost(cand.0, cand.1), cand.0, cand.1, v));
                }
            }
        }
    }
    best.iter().map(|o| o.map_or(f64::INFINITY, |(a, b)| cost(a, b) / grid.resolution())).collect()
}

/// Blocked cells and everything outside the grid count as occupied.
pub fn point_occupied(grid: &OccupancyGrid, p: Vec2) -> bool {
    let res = grid.resolution();
    let (c, r) = ((p.x * res).floor(), (p.y * res).floor());
    if c < 0.0 || r < 0.0 || c >= grid.width_cells() as f64 || r >= grid.height_cells() as f64 {
        return true;
    }
    grid.is_blocked(Cell::new(r as usize, c as usize))
}

/// Slab test of segment `p -> q` against the open square of a cell.
fn segment_enters_square(p: Vec2, q: Vec2, lo: Vec2, hi: Vec2) -> bool {
    let shrink = 1e-9;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (o, d, a, b) in [(p.x, q.x - p.x, lo.x + shrink, hi.x - shrink), (p.y, q.y - p.y, lo.y + shrink, hi.y - shrink)] {
        if d.abs() < 1e-15 {
            if o <= a || o >= b {
                return false;
            }
            continue;
        }
        let (mut ta, mut tb) = ((a - o) / d, (b - o) / d);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 >= t1 {
            return false;
        }
    }
    true
}

/// True when the segment passes through the interior of a blocked cell or
/// leaves the grid.
pub fn segment_occupied(grid: &OccupancyGrid, p: Vec2, q: Vec2) -> bool {
    if point_occupied(grid, p) || point_occupied(grid, q) {
        return true;
    }
    let res = grid.resolution();
    let c0 = (p.x.min(q.x) * res).floor().max(0.0) as usize;
    let c1 = ((p.x.max(q.x) * res).floor() as usize).min(grid.width_cells() - 1);
    let r0 = (p.y.min(q.y) * res).floor().max(0.0) as usize;
    let r1 = ((p.y.max(q.y) * res).floor() as usize).min(grid.height_cells() - 1);
    for r in r0..=r1 {
        for c in c0..=c1 {
            if grid.is_blocked(Cell::new(r, c)) {
                let lo = Vec2::new(c as f64 / res, r as f64 / res);
                let hi = Vec2::new((c + 1) as f64 / res, (r + 1) as f64 / res);
                if segment_enters_square(p, q, lo, hi) {
                    return true;
                }
            }
        }
    }
    false
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0) };
    let (ex, ey) = (a.x + t * dx - p.x, a.y + t * dy - p.y);
    (ex * ex + ey * ey).sqrt()
}

pub fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor { shape: shape.to_vec(), data: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() }
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data.iter().zip(&b.data).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Worst relative error between the analytic and central-difference
/// gradients of `<r, f(x)>` for a random projection `r`, over the input and
/// every parameter.
pub fn gradient_error(
    ps: &mut ParameterSet,
    x: &Tensor,
    fwd: impl Fn(&ParameterSet, &Tensor) -> Tensor,
    bwd: impl Fn(&ParameterSet, &mut Grads, &Tensor, &Tensor) -> Tensor,
    rng: &mut impl Rng,
) -> f64 {
    const H: f32 = 1e-3;
    let r = rand_tensor(&fwd(ps, x).shape, rng);
    let mut grads = Grads::zeros_like(ps);
    let dx = bwd(ps, &mut grads, x, &r);
    let mut xp = x.clone();
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let v = xp.data[i];
        xp.data[i] = v + H;
        let up = dot(&fwd(ps, &xp), &r);
        xp.data[i] = v - H;
        let down = dot(&fwd(ps, &xp), &r);
        xp.data[i] = v;
        numeric.push((up - down) / (2.0 * H as f64));
    }
    let analytic: Vec<f64> = dx.data.iter().map(|&v| v as f64).collect();
    let mut worst = relative_error(&analytic, &numeric);
    let ids: Vec<_> = ps.ids().collect();
    for id in ids {
        let mut numeric = Vec::new();
        for i in 0..ps.get(id).len() {
            let v = ps.get(id).data[i];
            ps.get_mut(id).data[i] = v + H;
            let up = dot(&fwd(ps, x), &r);
            ps.get_mut(id).data[i] = v - H;
            let down = dot(&fwd(ps, x), &r);
            ps.get_mut(id).data[i] = v;
            numeric.push((up - down) / (2.0 * H as f64));
        }
        let analytic: Vec<f64> = grads.get(id).iter().map(|&v| v as f64).collect();
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Process CPU time from `/proc`, in seconds. `None` off Linux.
pub fn cpu_seconds() -> Option<f64> {
    let stat = std::fs::read_to_string("/proc/self/stat").ok()?;
    let rest = &stat[stat.rfind(')')? + 2..];
    let f: Vec<&str> = rest.split_whitespace().collect();
    let ticks: f64 = f.get(11)?.parse::<f64>().ok()? + f.get(12)?.parse::<f64>().ok()?;
    Some(ticks / 100.0)
}
