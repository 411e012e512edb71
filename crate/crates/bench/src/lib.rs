//! Shared fixtures for the benchmarks.

use herd_core::envs::{EnvName, EnvSpec};
use herd_core::grid::OccupancyGrid;
use herd_core::world::{reset, WorldMaps, WorldState};
use herd_core::Rect;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Square grid with roughly `fraction` of the cells covered by unit blocks.
pub fn cluttered_grid(cells: usize, fraction: f64, seed: u64) -> OccupancyGrid {
    let mut r = rng(seed);
    let side = cells as f64 / 10.0;
    let n = ((cells * cells) as f64 * fraction / 4.0) as usize;
    let blocks: Vec<Rect> = (0..n)
        .map(|_| {
            let x = r.gen_range(0.0..side - 0.2);
            let y = r.gen_range(0.0..side - 0.2);
            Rect::new(x, y, x + 0.2, y + 0.2)
        })
        .collect();
    OccupancyGrid::from_obstacles(side, side, &blocks, 10.0, 0.0)
}

/// A reset world of the given layout and its planning maps.
pub fn world(name: EnvName, scale: f64, seed: u64) -> (WorldState, WorldMaps) {
    let spec = EnvSpec::new(name, scale).expect("valid scale");
    let cfg = spec.config(seed);
    let state = reset(&cfg, seed).expect("world resets");
    let maps = WorldMaps::build(&state, cfg.grid_resolution).expect("maps build");
    (state, maps)
}
