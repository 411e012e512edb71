//! Named evaluation environments and the desk scale factor.

use crate::error::{HerdError, Result};
use crate::world::{ObstacleLayout, WorldConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    SmallEmpty,
    SmallColumns,
    LargeEmpty,
    LargeColumns,
    LargeDivider,
    /// LargeColumns or LargeDivider, drawn per episode.
    Mixed,
}

impl EnvName {
    pub const ALL: [EnvName; 6] = [
        EnvName::SmallEmpty,
        EnvName::SmallColumns,
        EnvName::LargeEmpty,
        EnvName::LargeColumns,
        EnvName::LargeDivider,
        EnvName::Mixed,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EnvName::SmallEmpty => "small_empty",
            EnvName::SmallColumns => "small_columns",
            EnvName::LargeEmpty => "large_empty",
            EnvName::LargeColumns => "large_columns",
            EnvName::LargeDivider => "large_divider",
            EnvName::Mixed => "mixed",
        }
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvName {
    type Err = HerdError;
    fn from_str(s: &str) -> Result<Self> {
        EnvName::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| HerdError::InvalidConfig(format!("unknown environment '{s}'")))
    }
}

/// An environment name plus a scale factor applied to world dimensions.
/// Box and column counts scale with area (rounded, at least one box);
/// robot and box sizes stay fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: EnvName,
    pub scale: f64,
}

impl EnvSpec {
    pub fn new(name: EnvName, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(HerdError::InvalidConfig(format!("scale must be positive, got {scale}")));
        }
        Ok(Self { name, scale })
    }

    /// World configuration for the episode with this seed. Only `Mixed`
    /// depends on the seed.
    pub fn config(&self, episode_seed: u64) -> WorldConfig {
        let name = match self.name {
            EnvName::Mixed => {
                let mut rng = ChaCha8Rng::seed_from_u64(episode_seed ^ 0x6d69_7865_64);
                if rng.gen_bool(0.5) {
                    EnvName::LargeColumns
                } else {
                    EnvName::LargeDivider
                }
            }
            n => n,
        };
        let (w, h, boxes, layout) = match name {
            EnvName::SmallEmpty => (10.0, 5.0, 10, ObstacleLayout::Empty),
            EnvName::SmallColumns => (10.0, 5.0, 10, ObstacleLayout::Columns { min: 0, max: 2 }),
            EnvName::LargeEmpty => (10.0, 10.0, 20, ObstacleLayout::Empty),
            EnvName::LargeColumns => (10.0, 10.0, 20, ObstacleLayout::Columns { min: 0, max: 8 }),
            EnvName::LargeDivider | EnvName::Mixed => (10.0, 10.0, 20, ObstacleLayout::Divider),
        };
        let f = self.scale;
        let n = ((boxes as f64) * f * f).round().max(1.0) as usize;
        let layout = match layout {
            ObstacleLayout::Columns { min, max } => {
                let area = |k: usize| ((k as f64) * f * f).round() as usize;
                ObstacleLayout::Columns { min: area(min), max: area(max) }
            }
            l => l,
        };
        let mut cfg = WorldConfig::with_size(w * f, h * f, n, layout);
        cfg.column_side = (cfg.column_side * f).max(0.5);
        cfg.t_max_steps = ((cfg.t_max_steps as f64) * f).round().max(100.0) as usize;
        cfg.rng_seed = episode_seed;
        cfg
    }
}
