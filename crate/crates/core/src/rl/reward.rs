//! Shaped reward for one high-level step.

use crate::world::StepOutcome;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgressMode {
    /// Only the box whose distance changed the most counts.
    MaxBox,
    /// Every box's progress is summed.
    Cumulative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub alpha: f64,
    pub beta: f64,
    pub progress_mode: ProgressMode,
    pub motion_penalty_enabled: bool,
    /// Added when the robot collides or fails to move.
    pub penalty: f64,
    /// Per delivered box.
    pub goal_reward: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 8.0,
            progress_mode: ProgressMode::MaxBox,
            motion_penalty_enabled: true,
            penalty: -0.25,
            goal_reward: 1.0,
        }
    }
}

impl RewardConfig {
    /// Original formulation: summed progress and no motion penalty.
    pub fn cumulative() -> Self {
        Self { progress_mode: ProgressMode::Cumulative, motion_penalty_enabled: false, ..Self::default() }
    }
}

/// Index of the largest `|delta|`; ties go to the lowest index.
pub fn dominant_box(deltas: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, d) in deltas.iter().enumerate() {
        if best.map_or(true, |(_, b)| d.abs() > b) {
            best = Some((i, d.abs()));
        }
    }
    best.map(|(i, _)| i)
}

pub fn progress_term(deltas: &[f64], cfg: &RewardConfig) -> f64 {
    match cfg.progress_mode {
        ProgressMode::MaxBox => dominant_box(deltas).map_or(0.0, |j| cfg.alpha * deltas[j]),
        ProgressMode::Cumulative => cfg.alpha * deltas.iter().sum::<f64>(),
    }
}

pub fn compute_reward(outcome: &StepOutcome, cfg: &RewardConfig) -> f64 {
    let mut r = cfg.goal_reward * outcome.delivered_this_step as f64;
    r += progress_term(&outcome.per_box_progress, cfg);
    if outcome.collision || !outcome.moved {
        r += cfg.penalty;
    }
    if cfg.motion_penalty_enabled {
        r -= cfg.alpha / cfg.beta * outcome.robot_displacement;
    }
    r
}
