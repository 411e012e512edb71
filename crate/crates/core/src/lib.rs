pub mod demo;
pub mod diffusion;
pub mod envs;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod nn;
pub mod observation;
pub mod postprocess;
pub mod rl;
pub mod rollout;
pub mod world;

pub use error::{HerdError, Result};
pub use geometry::{Rect, Vec2};
