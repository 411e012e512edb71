//! Run configuration: an optional TOML file whose keys mirror the command
//! line flags. Flags given on the command line win.

use anyhow::{bail, Context, Result};
use clap::Args;
use herd_core::envs::{EnvName, EnvSpec};
use herd_core::eval::{EvalMode, QVariant};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Environment name, a comma-separated list, or `all` (eval only).
    #[arg(long, global = true)]
    pub env: Option<String>,
    /// Rollout mode, a comma-separated list, or `all` (eval only).
    #[arg(long, global = true)]
    pub mode: Option<String>,
    #[arg(long, global = true)]
    pub episodes: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Training steps (train-rl) or epochs (train-diffusion).
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub port: Option<u16>,
    /// World scale factor; 1.0 is full size.
    #[arg(long, global = true)]
    pub scale: Option<f64>,

    /// Reward variant of the Q-network to train.
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// Q-network checkpoint, either `PATH` (full reward) or `VARIANT=PATH`.
    #[arg(long = "qnet", global = true)]
    #[serde(skip)]
    pub qnet_flags: Vec<String>,
    /// Checkpoints per reward variant (config file only).
    #[arg(skip)]
    pub qnets: Option<BTreeMap<String, PathBuf>>,
    #[arg(long, global = true)]
    pub diffusion: Option<PathBuf>,
    /// Demo episode file (JSON lines).
    #[arg(long, global = true)]
    pub demos: Option<PathBuf>,
    /// Prepared dataset file (JSON lines plus stats sidecar).
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Replay file to render.
    #[arg(long, global = true)]
    pub replay: Option<PathBuf>,
    #[arg(long, global = true)]
    pub warmup: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f32>,
    /// Denoiser channel widths, e.g. `64,128,256`.
    #[arg(long, global = true, value_delimiter = ',')]
    #[serde(default)]
    pub unet_channels: Vec<usize>,
    /// Wall-clock limit in seconds for training.
    #[arg(long, global = true)]
    pub time_budget: Option<u64>,
    /// Synthesize straight-line demos without simulating motion.
    #[arg(long, global = true)]
    #[serde(default)]
    pub straight: bool,
}

impl Overrides {
    /// Reads a TOML file with the same keys as the long flags (dashes
    /// become underscores).
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// `self` wins field by field; `base` fills the gaps.
    pub fn over(self, base: Overrides) -> Overrides {
        let mut qnets = base.qnets.unwrap_or_default();
        qnets.extend(self.qnets.unwrap_or_default());
        Overrides {
            env: self.env.or(base.env),
            mode: self.mode.or(base.mode),
            episodes: self.episodes.or(base.episodes),
            seed: self.seed.or(base.seed),
            steps: self.steps.or(base.steps),
            out: self.out.or(base.out),
            port: self.port.or(base.port),
            scale: self.scale.or(base.scale),
            variant: self.variant.or(base.variant),
            qnet_flags: if self.qnet_flags.is_empty() { base.qnet_flags } else { self.qnet_flags },
            qnets: (!qnets.is_empty()).then_some(qnets),
            diffusion: self.diffusion.or(base.diffusion),
            demos: self.demos.or(base.demos),
            dataset: self.dataset.or(base.dataset),
            replay: self.replay.or(base.replay),
            warmup: self.warmup.or(base.warmup),
            batch_size: self.batch_size.or(base.batch_size),
            lr: self.lr.or(base.lr),
            unet_channels: if self.unet_channels.is_empty() { base.unet_channels } else { self.unet_channels },
            time_budget: self.time_budget.or(base.time_budget),
            straight: self.straight || base.straight,
        }
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub o: Overrides,
}

impl RunConfig {
    pub fn load(config: Option<&Path>, cli: Overrides) -> Result<Self> {
        let o = match config {
            Some(p) => cli.over(Overrides::from_file(p)?),
            None => cli,
        };
        let cfg = Self { o };
        cfg.scale()?;
        Ok(cfg)
    }

    pub fn scale(&self) -> Result<f64> {
        let f = self.o.scale.unwrap_or(1.0);
        if !(f > 0.0 && f.is_finite()) {
            bail!("--scale must be positive, got {f}");
        }
        Ok(f)
    }

    pub fn seed(&self) -> u64 {
        self.o.seed.unwrap_or(0)
    }

    pub fn out(&self, default: &str) -> PathBuf {
        self.o.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    pub fn time_budget(&self) -> Option<Duration> {
        self.o.time_budget.map(Duration::from_secs)
    }

    /// Single environment, defaulting to `default`.
    pub fn env(&self, default: EnvName) -> Result<EnvSpec> {
        let name = match &self.o.env {
            Some(s) => parse_env(s)?,
            None => default,
        };
        Ok(EnvSpec::new(name, self.scale()?)?)
    }

    /// Environment list for evaluation; `all` expands to every fixed layout.
    pub fn envs(&self, default: EnvName) -> Result<Vec<EnvSpec>> {
        let f = self.scale()?;
        let names: Vec<EnvName> = match self.o.env.as_deref() {
            None => vec![default],
            Some("all") => EnvName::ALL.into_iter().filter(|n| *n != EnvName::Mixed).collect(),
            Some(list) => list.split(',').map(|s| parse_env(s.trim())).collect::<Result<_>>()?,
        };
        names.into_iter().map(|n| Ok(EnvSpec::new(n, f)?)).collect()
    }

    pub fn modes(&self, default: EvalMode) -> Result<Vec<EvalMode>> {
        match self.o.mode.as_deref() {
            None => Ok(vec![default]),
            Some("all") => Ok(EvalMode::ALL.to_vec()),
            Some(list) => list.split(',').map(|s| Ok(s.trim().parse::<EvalMode>()?)).collect(),
        }
    }

    pub fn variant(&self) -> Result<QVariant> {
        Ok(self.o.variant.as_deref().unwrap_or("full").parse()?)
    }

    /// Q-network checkpoint paths by reward variant, from the config file
    /// and `--qnet` flags. Every path must exist.
    pub fn qnet_paths(&self) -> Result<BTreeMap<QVariant, PathBuf>> {
        let mut out = BTreeMap::new();
        for (k, p) in self.o.qnets.clone().unwrap_or_default() {
            out.insert(k.parse::<QVariant>()?, p);
        }
        for flag in &self.o.qnet_flags {
            let (v, p) = match flag.split_once('=') {
                Some((v, p)) => (v.parse::<QVariant>()?, PathBuf::from(p)),
                None => (QVariant::Full, PathBuf::from(flag)),
            };
            out.insert(v, p);
        }
        for (v, p) in &out {
            require_file(p, &format!("{v} Q-network checkpoint"))?;
        }
        Ok(out)
    }
}

pub fn parse_env(s: &str) -> Result<EnvName> {
    s.parse::<EnvName>().map_err(|_| {
        let names: Vec<String> = EnvName::ALL.iter().map(|n| n.to_string()).collect();
        anyhow::anyhow!("unknown environment '{s}' (expected one of {})", names.join(", "))
    })
}

pub fn require_file(p: &Path, what: &str) -> Result<()> {
    if !p.is_file() {
        bail!("{what} not found at {} (train one first or fix the path)", p.display());
    }
    Ok(())
}
