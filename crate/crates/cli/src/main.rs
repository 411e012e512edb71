use anyhow::Result;
use clap::{Parser, Subcommand};
use herd_cli::commands;
use herd_cli::config::{Overrides, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "herd", version, about = "Hierarchical box-pushing: train, collect demos, evaluate, replay")]
struct Cli {
    /// TOML file with defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: Overrides,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a Q-network with the selected reward variant.
    TrainRl,
    /// Train the trajectory denoiser from demos.
    TrainDiffusion,
    /// Serve the teleop websocket and record human demos.
    CollectDemos,
    /// Generate scripted demos.
    SynthDemos,
    /// Run evaluation episodes and print a summary table.
    Eval,
    /// Render a replay file to PNG frames.
    Replay,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), cli.flags)?;
    match cli.cmd {
        Cmd::TrainRl => commands::train_rl(&cfg),
        Cmd::TrainDiffusion => commands::train_diffusion(&cfg),
        Cmd::CollectDemos => commands::collect_demos(&cfg),
        Cmd::SynthDemos => commands::synth_demos(&cfg),
        Cmd::Eval => commands::eval(&cfg),
        Cmd::Replay => commands::replay(&cfg),
    }
}
