//! Trained models shared between runs. Each artifact sits next to a JSON
//! record of the settings that produced it; a mismatch means retraining.

use crate::oracles::cpu_seconds;
use herd_core::demo::{straight_line_demos, synthesize_demos, DemoDataset};
use herd_core::diffusion::{train_denoiser, DiffusionPolicy, DiffusionTrainConfig, NoiseSchedule, UnetConfig, TRAIN_TIMESTEPS};
use herd_core::eval::{desk_env, desk_train_config, QVariant};
use herd_core::rl::{train, QNetwork, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

pub fn dir() -> PathBuf {
    let d = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/herd-acceptance");
    std::fs::create_dir_all(&d).expect("artifact directory");
    d
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Record<C> {
    pub config: C,
    /// CPU seconds spent training.
    pub cpu_seconds: f64,
    pub wall_seconds: f64,
    /// Steps for Q-networks, epochs for denoisers.
    pub iterations: usize,
}

fn read_record<C: for<'de> Deserialize<'de> + PartialEq>(path: &Path, config: &C) -> Option<Record<C>> {
    let r: Record<C> = serde_json::from_str(&std::fs::read_to_string(path).ok()?).ok()?;
    (r.config == *config).then_some(r)
}

fn write_record<C: Serialize>(path: &Path, r: &Record<C>) {
    std::fs::write(path, serde_json::to_string_pretty(r).unwrap()).expect("write record");
}

struct Clock(Instant, Option<f64>);

impl Clock {
    fn start() -> Self {
        Clock(Instant::now(), cpu_seconds())
    }
    fn stop(&self) -> (f64, f64) {
        let wall = self.0.elapsed().as_secs_f64();
        let cpu = match (self.1, cpu_seconds()) {
            (Some(a), Some(b)) => b - a,
            _ => wall,
        };
        (cpu, wall)
    }
}

/// Desk Q-network for a reward variant, trained when missing.
pub fn desk_qnet(variant: QVariant) -> (QNetwork, Record<TrainConfig>) {
    let cfg = desk_train_config(variant, 0);
    let ckpt = dir().join(format!("qnet_{variant}.ckpt"));
    let rec_path = dir().join(format!("qnet_{variant}.json"));
    if let (true, Some(rec)) = (ckpt.is_file(), read_record(&rec_path, &cfg)) {
        return (QNetwork::load(&ckpt).expect("load cached Q-network"), rec);
    }
    println!("  training {variant} Q-network ({} steps); this takes a while", cfg.steps);
    let clock = Clock::start();
    let mut log = std::fs::File::create(dir().join(format!("qnet_{variant}.csv"))).unwrap();
    let out = train(&cfg, Some(&mut log)).expect("DDQN training");
    let (cpu, wall) = clock.stop();
    out.qnet.save(&ckpt).unwrap();
    let rec = Record { config: cfg, cpu_seconds: cpu, wall_seconds: wall, iterations: out.steps_done };
    write_record(&rec_path, &rec);
    (out.qnet, rec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionRecipe {
    /// `straight` or `desk`.
    pub demos: String,
    pub episodes: usize,
    pub demo_seed: u64,
    pub unet: UnetConfig,
    pub train: DiffusionTrainConfig,
}

impl DiffusionRecipe {
    /// 200 straight-line demos in the desk world.
    pub fn straight() -> Self {
        Self {
            demos: "straight".into(),
            episodes: 200,
            demo_seed: 0,
            unet: UnetConfig { channels: vec![32, 64, 128], ..UnetConfig::default() },
            train: DiffusionTrainConfig {
                epochs: 400,
                batch_size: 32,
                lr: 1e-3,
                time_budget: Some(Duration::from_secs(570)),
                ..DiffusionTrainConfig::default()
            },
        }
    }

    /// Scripted obstacle-aware demos in the desk world.
    pub fn desk() -> Self {
        Self {
            demos: "desk".into(),
            episodes: 300,
            demo_seed: 1,
            unet: UnetConfig { channels: vec![32, 64, 128], ..UnetConfig::default() },
            train: DiffusionTrainConfig {
                epochs: 150,
                batch_size: 32,
                lr: 1e-3,
                time_budget: Some(Duration::from_secs(900)),
                ..DiffusionTrainConfig::default()
            },
        }
    }

    pub fn dataset(&self) -> DemoDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(self.demo_seed);
        let env = desk_env();
        let eps = match self.demos.as_str() {
            "straight" => straight_line_demos(self.episodes, &env, &mut rng),
            _ => synthesize_demos(self.episodes, &env, &mut rng),
        }
        .expect("demo generation");
        DemoDataset::build(&eps).expect("dataset")
    }
}

pub fn diffusion(recipe: &DiffusionRecipe) -> (DiffusionPolicy, Record<DiffusionRecipe>) {
    let ckpt = dir().join(format!("diffusion_{}.ckpt", recipe.demos));
    let rec_path = dir().join(format!("diffusion_{}.record.json", recipe.demos));
    if let (true, Some(rec)) = (ckpt.is_file(), read_record(&rec_path, recipe)) {
        return (DiffusionPolicy::load(&ckpt).expect("load cached denoiser"), rec);
    }
    println!("  training {} denoiser", recipe.demos);
    let ds = recipe.dataset();
    let clock = Clock::start();
    let schedule = NoiseSchedule::squared_cosine(TRAIN_TIMESTEPS);
    let (model, log) = train_denoiser(&ds.training_set(), recipe.unet.clone(), &recipe.train, &schedule).expect("denoiser training");
    let (cpu, wall) = clock.stop();
    let policy = DiffusionPolicy::new(model, ds.stats.obs.clone(), ds.stats.traj.clone()).unwrap();
    policy.save(&ckpt).unwrap();
    let rec = Record { config: recipe.clone(), cpu_seconds: cpu, wall_seconds: wall, iterations: log.len() };
    write_record(&rec_path, &rec);
    (policy, rec)
}
