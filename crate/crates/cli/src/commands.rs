use crate::config::{require_file, RunConfig};
use crate::{bridge, render, teleop};
use anyhow::{bail, Context, Result};
use herd_core::demo::{read_episodes, straight_line_demos, synthesize_demos, DemoDataset};
use herd_core::diffusion::{train_denoiser, DiffusionPolicy, DiffusionTrainConfig, NoiseSchedule, UnetConfig, TRAIN_TIMESTEPS};
use herd_core::envs::EnvName;
use herd_core::eval::{evaluate, format_table, PolicyBank, Summary};
use herd_core::eval::EvalMode;
use herd_core::rl::{train, QNetwork, TrainConfig};
use herd_core::rollout::RolloutConfig;
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

pub fn train_rl(cfg: &RunConfig) -> Result<()> {
    let variant = cfg.variant()?;
    let env = cfg.env(EnvName::Mixed)?;
    let out = cfg.out("runs/train-rl");
    create_dir(&out)?;
    let defaults = TrainConfig::default();
    let tc = TrainConfig {
        steps: cfg.o.steps.unwrap_or(defaults.steps),
        warmup_steps: cfg.o.warmup.unwrap_or(defaults.warmup_steps),
        batch_size: cfg.o.batch_size.unwrap_or(defaults.batch_size),
        reward: variant.reward(),
        env_mix: vec![env],
        seed: cfg.seed(),
        time_budget: cfg.time_budget(),
        ..defaults
    };
    std::fs::write(out.join("train_config.json"), serde_json::to_string_pretty(&tc)?)?;
    let mut log = std::fs::File::create(out.join("metrics.csv"))?;
    info!("training {variant} Q-network on {} for {} steps", env.name, tc.steps);
    let result = train(&tc, Some(&mut log))?;
    let ckpt = out.join(format!("qnet_{variant}.ckpt"));
    result.qnet.save(&ckpt)?;
    println!("{} steps, {} episodes; checkpoint {}", result.steps_done, result.episodes, ckpt.display());
    Ok(())
}

pub fn train_diffusion(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out("runs/train-diffusion");
    create_dir(&out)?;
    let dataset = match (&cfg.o.dataset, &cfg.o.demos) {
        (Some(p), _) => {
            require_file(p, "dataset")?;
            DemoDataset::load(p)?
        }
        (None, Some(p)) => {
            require_file(p, "demo file")?;
            let ds = DemoDataset::build(&read_episodes(p)?)?;
            ds.save(&out.join("dataset.jsonl"))?;
            ds
        }
        (None, None) => bail!("train-diffusion needs --demos FILE or --dataset FILE"),
    };
    info!("{} demos ({} human, {} synthetic)", dataset.len(), dataset.stats.human, dataset.stats.synthetic);
    let defaults = DiffusionTrainConfig::default();
    let tc = DiffusionTrainConfig {
        epochs: cfg.o.steps.unwrap_or(defaults.epochs),
        batch_size: cfg.o.batch_size.unwrap_or(defaults.batch_size),
        lr: cfg.o.lr.unwrap_or(defaults.lr),
        seed: cfg.seed(),
        time_budget: cfg.time_budget(),
        ..defaults
    };
    let mut unet = UnetConfig::default();
    if !cfg.o.unet_channels.is_empty() {
        unet.channels = cfg.o.unet_channels.clone();
    }
    let schedule = NoiseSchedule::squared_cosine(TRAIN_TIMESTEPS);
    let (model, log) = train_denoiser(&dataset.training_set(), unet, &tc, &schedule)?;
    let mut w = csv_writer(&out.join("diffusion_log.csv"))?;
    writeln!(w, "epoch,train_loss,val_loss")?;
    for e in &log {
        writeln!(w, "{},{},{}", e.epoch, e.train_loss, e.val_loss.map(|v| v.to_string()).unwrap_or_default())?;
    }
    let policy = DiffusionPolicy::new(model, dataset.stats.obs.clone(), dataset.stats.traj.clone())?;
    let ckpt = out.join("diffusion.ckpt");
    policy.save(&ckpt)?;
    println!("{} epochs; checkpoint {}", log.len(), ckpt.display());
    Ok(())
}

fn csv_writer(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?))
}

pub fn synth_demos(cfg: &RunConfig) -> Result<()> {
    let env = cfg.env(EnvName::LargeEmpty)?;
    let n = cfg.o.episodes.unwrap_or(100);
    let out = cfg.out("runs/demos");
    create_dir(&out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
    let episodes = if cfg.o.straight { straight_line_demos(n, &env, &mut rng)? } else { synthesize_demos(n, &env, &mut rng)? };
    let path = out.join("demos.jsonl");
    let mut w = csv_writer(&path)?;
    for ep in &episodes {
        serde_json::to_writer(&mut w, ep)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let waypoints: usize = episodes.iter().map(|e| e.waypoints.len()).sum();
    println!("{} episodes ({waypoints} sparse waypoints) written to {}", episodes.len(), path.display());
    Ok(())
}

pub fn collect_demos(cfg: &RunConfig) -> Result<()> {
    let env = cfg.env(EnvName::LargeEmpty)?;
    let out = cfg.out("runs/demos");
    create_dir(&out)?;
    let qnet = match cfg.qnet_paths()?.remove(&herd_core::eval::QVariant::Full) {
        Some(p) => Some(QNetwork::load(&p)?),
        None => None,
    };
    let session = teleop::TeleopSession::new(env, cfg.seed(), out.join("demos.jsonl"), qnet)?;
    let port = cfg.o.port.unwrap_or(8765);
    let handle = bridge::spawn(session, &format!("127.0.0.1:{port}"))?;
    println!("teleop bridge on ws://{}; demos go to {}", handle.addr, out.join("demos.jsonl").display());
    handle.join();
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let envs = cfg.envs(EnvName::SmallEmpty)?;
    let modes = cfg.modes(EvalMode::Herd)?;
    let n = cfg.o.episodes.unwrap_or(20);
    let seeds: Vec<u64> = (0..n as u64).map(|k| cfg.seed() + k).collect();
    let mut bank = PolicyBank::default();
    for (v, p) in cfg.qnet_paths()? {
        bank.qnets.insert(v, QNetwork::load(&p)?);
    }
    if let Some(p) = &cfg.o.diffusion {
        require_file(p, "diffusion checkpoint")?;
        bank.diffusion = Some(DiffusionPolicy::load(p)?);
    }
    for m in &modes {
        bank.policies(*m)?;
    }
    let out = cfg.out("runs/eval");
    let replays = out.join("replays");
    let rollout = RolloutConfig::default();
    let mut rows: Vec<Summary> = Vec::new();
    let mut episodes = csv_writer(&out_file(&out, "episodes.jsonl")?)?;
    for env in &envs {
        for &mode in &modes {
            let (summary, reports) = evaluate(env, mode, &bank, &seeds, &rollout, Some(&replays))?;
            for r in &reports {
                serde_json::to_writer(&mut episodes, &serde_json::json!({"env": summary.env, "mode": mode, "report": r}))?;
                episodes.write_all(b"\n")?;
            }
            rows.push(summary);
        }
    }
    episodes.flush()?;
    let table = format_table(&rows);
    std::fs::write(out.join("summary.md"), &table)?;
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&rows)?)?;
    print!("{table}");
    Ok(())
}

fn out_file(dir: &Path, name: &str) -> Result<std::path::PathBuf> {
    create_dir(dir)?;
    Ok(dir.join(name))
}

pub fn replay(cfg: &RunConfig) -> Result<()> {
    let Some(path) = &cfg.o.replay else { bail!("replay needs --replay FILE") };
    require_file(path, "replay file")?;
    let records = herd_core::eval::read_replay(path)?;
    let (w, h) = match &cfg.o.env {
        Some(_) => {
            let wc = cfg.env(EnvName::SmallEmpty)?.config(0);
            (wc.width, wc.height)
        }
        None => render::infer_extent(&records),
    };
    let out = cfg.out("runs/replay");
    let frames = render::render_replay(&records, w, h, &out, &render::Style::default())?;
    println!("{} frames written to {}", frames.len(), out.display());
    Ok(())
}
