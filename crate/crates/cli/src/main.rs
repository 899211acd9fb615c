//! `detective run|sweep`: single simulations and experiment sweeps.
//!
//! Exit status is 0 on success, 2 for usage, config or input-file problems
//! and 1 for failures while simulating or writing results.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Failure;

#[derive(Debug, Parser)]
#[command(name = "detective", version, about = "Budgeted fake-news detection from crowd flags")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Play every configured policy once on one seed and write traces.
    Run(Common),
    /// Run the configured experiment over all seeds and grid points.
    Sweep(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config file; defaults apply to anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Edge-list file of the social graph.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
    /// Config override, e.g. `--set epochs=10` or `--set world.budget=3`.
    /// Applied after `DETECTIVE_SET_*` environment overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn resolve(common: &Common) -> Result<config::RunConfig, Failure> {
    let text = match &common.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(anyhow::anyhow!("cannot read config {}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut overrides = config::env_overrides(std::env::vars());
    overrides.extend(common.set.iter().cloned());
    let mut cfg = config::resolve(&text, &overrides).map_err(Failure::Config)?;
    if let Some(g) = &common.graph {
        cfg.graph = Some(g.clone());
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(j) = common.jobs {
        if j == 0 {
            return Err(Failure::Config(anyhow::anyhow!("--jobs must be at least 1")));
        }
        cfg.jobs = j;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(common) => resolve(common).and_then(|cfg| commands::run(&cfg)),
        Command::Sweep(common) => resolve(common).and_then(|cfg| commands::sweep(&cfg)),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
