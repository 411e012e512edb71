//! Evaluation protocol: fixed seed lists, one row per environment and mode,
//! replay files from which every summary number can be recomputed.

use crate::diffusion::DiffusionPolicy;
use crate::envs::{EnvName, EnvSpec};
use crate::error::{HerdError, Result};
use crate::rl::{ProgressMode, QNetwork, RewardConfig, TrainConfig};
use crate::rollout::{run_episode, EpisodeReport, Policies, ReplayRecord, RolloutConfig, RolloutMode};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Reward used to train a Q-network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QVariant {
    /// Max-box progress plus the motion penalty.
    Full,
    CumulativeReward,
    NoMotionPenalty,
    /// Summed progress without motion penalty.
    Baseline,
}

impl QVariant {
    pub const ALL: [QVariant; 4] = [QVariant::Full, QVariant::CumulativeReward, QVariant::NoMotionPenalty, QVariant::Baseline];

    pub fn reward(&self) -> RewardConfig {
        let full = RewardConfig::default();
        match self {
            QVariant::Full => full,
            QVariant::CumulativeReward => RewardConfig { progress_mode: ProgressMode::Cumulative, ..full },
            QVariant::NoMotionPenalty => RewardConfig { motion_penalty_enabled: false, ..full },
            QVariant::Baseline => RewardConfig::cumulative(),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            QVariant::Full => "full",
            QVariant::CumulativeReward => "cumulative_reward",
            QVariant::NoMotionPenalty => "no_motion_penalty",
            QVariant::Baseline => "baseline",
        }
    }
}

impl fmt::Display for QVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QVariant {
    type Err = HerdError;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('-', "_");
        QVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| HerdError::InvalidConfig(format!("unknown reward variant '{s}'")))
    }
}

/// An evaluation column: which Q-network drives which executor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Herd,
    NoDiffusion,
    OnlyDiffusion,
    CumulativeReward,
    NoMotionPenalty,
    Baseline,
}

impl EvalMode {
    pub const ALL: [EvalMode; 6] = [
        EvalMode::Herd,
        EvalMode::NoDiffusion,
        EvalMode::OnlyDiffusion,
        EvalMode::CumulativeReward,
        EvalMode::NoMotionPenalty,
        EvalMode::Baseline,
    ];

    pub fn executor(&self) -> RolloutMode {
        match self {
            EvalMode::Herd | EvalMode::CumulativeReward | EvalMode::NoMotionPenalty => RolloutMode::Herd,
            EvalMode::NoDiffusion => RolloutMode::NoDiffusion,
            EvalMode::OnlyDiffusion => RolloutMode::OnlyDiffusion,
            EvalMode::Baseline => RolloutMode::Baseline,
        }
    }

    pub fn variant(&self) -> QVariant {
        match self {
            EvalMode::Herd | EvalMode::NoDiffusion | EvalMode::OnlyDiffusion => QVariant::Full,
            EvalMode::CumulativeReward => QVariant::CumulativeReward,
            EvalMode::NoMotionPenalty => QVariant::NoMotionPenalty,
            EvalMode::Baseline => QVariant::Baseline,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EvalMode::Herd => "herd",
            EvalMode::NoDiffusion => "no_diffusion",
            EvalMode::OnlyDiffusion => "only_diffusion",
            EvalMode::CumulativeReward => "cumulative_reward",
            EvalMode::NoMotionPenalty => "no_motion_penalty",
            EvalMode::Baseline => "baseline",
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalMode {
    type Err = HerdError;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('-', "_");
        EvalMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| HerdError::InvalidConfig(format!("unknown eval mode '{s}'")))
    }
}

/// Trained networks available to an evaluation run.
#[derive(Default)]
pub struct PolicyBank {
    pub qnets: BTreeMap<QVariant, QNetwork>,
    pub diffusion: Option<DiffusionPolicy>,
}

impl PolicyBank {
    pub fn policies(&self, mode: EvalMode) -> Result<Policies<'_>> {
        let qnet = self.qnets.get(&mode.variant()).ok_or_else(|| {
            HerdError::InvalidConfig(format!("mode {mode} needs a Q-network trained with the {v} reward (train-rl --variant {v}, then pass --qnet {v}=PATH)", v = mode.variant()))
        })?;
        let diffusion = self.diffusion.as_ref();
        if mode.executor().uses_diffusion() && diffusion.is_none() {
            return Err(HerdError::InvalidConfig(format!("mode {mode} needs a diffusion checkpoint (train-diffusion, then pass --diffusion PATH)")));
        }
        Ok(Policies { qnet, diffusion })
    }
}

/// Mean and spread over a set of episodes. Standard deviations are
/// population values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub env: String,
    pub mode: EvalMode,
    pub episodes: usize,
    pub boxes_mean: f64,
    pub boxes_std: f64,
    pub distance_mean: f64,
    pub distance_std: f64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Summary {
    pub fn from_reports(env: &str, mode: EvalMode, reports: &[EpisodeReport]) -> Self {
        let boxes: Vec<f64> = reports.iter().map(|r| r.boxes_delivered as f64).collect();
        let dist: Vec<f64> = reports.iter().map(|r| r.distance_m).collect();
        let (boxes_mean, boxes_std) = mean_std(&boxes);
        let (distance_mean, distance_std) = mean_std(&dist);
        Self { env: env.to_string(), mode, episodes: reports.len(), boxes_mean, boxes_std, distance_mean, distance_std }
    }
}

/// Human-readable label of an environment spec, e.g. `small_empty@0.5`.
pub fn env_label(env: &EnvSpec) -> String {
    if env.scale == 1.0 {
        env.name.to_string()
    } else {
        format!("{}@{}", env.name, env.scale)
    }
}

pub fn replay_file_name(env: &EnvSpec, mode: EvalMode, seed: u64) -> String {
    format!("{}_{}_seed{}.jsonl", env_label(env).replace('@', "_x"), mode, seed)
}

/// Runs one episode per seed. Replay files go to `replay_dir` when given.
pub fn evaluate(
    env: &EnvSpec,
    mode: EvalMode,
    bank: &PolicyBank,
    seeds: &[u64],
    cfg: &RolloutConfig,
    replay_dir: Option<&Path>,
) -> Result<(Summary, Vec<EpisodeReport>)> {
    let policies = bank.policies(mode)?;
    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let world = env.config(seed);
        let report = match replay_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(replay_file_name(env, mode, seed));
                let mut w = BufWriter::new(std::fs::File::create(&path)?);
                let r = run_episode(&world, policies, mode.executor(), seed, cfg, Some(&mut w))?;
                w.flush()?;
                r
            }
            None => run_episode(&world, policies, mode.executor(), seed, cfg, None)?,
        };
        log::info!("{} {mode} seed {seed}: {} boxes, {:.2} m", env_label(env), report.boxes_delivered, report.distance_m);
        reports.push(report);
    }
    Ok((Summary::from_reports(&env_label(env), mode, &reports), reports))
}

/// Boxes delivered and distance travelled, recomputed from a replay file.
pub fn totals_from_replay(path: &Path) -> Result<(usize, f64)> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let (mut boxes, mut dist) = (0usize, 0.0f64);
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ReplayRecord = serde_json::from_str(&line)?;
        boxes += rec.delivered;
        dist += rec.displacement;
    }
    Ok((boxes, dist))
}

pub fn read_replay(path: &Path) -> Result<Vec<ReplayRecord>> {
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

/// Markdown table with one row per summary.
pub fn format_table(rows: &[Summary]) -> String {
    let mut s = String::from("| env | mode | episodes | boxes | distance (m) |\n|---|---|---|---|---|\n");
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {} | {:.2} ± {:.2} | {:.2} ± {:.2} |\n",
            r.env, r.mode, r.episodes, r.boxes_mean, r.boxes_std, r.distance_mean, r.distance_std
        ));
    }
    s
}

/// The desk-sized world: a 5 m × 2.5 m empty room with three boxes.
pub fn desk_env() -> EnvSpec {
    EnvSpec { name: EnvName::SmallEmpty, scale: 0.5 }
}

/// DDQN settings for the desk world with the given reward.
pub fn desk_train_config(variant: QVariant, seed: u64) -> TrainConfig {
    TrainConfig { reward: variant.reward(), env_mix: vec![desk_env()], seed, ..TrainConfig::default() }
}

/// `dir/name`, creating `dir` first.
pub fn ensure_file(dir: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    Ok(dir.join(name))
}
