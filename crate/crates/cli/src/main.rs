//! Batch driver: scenario configuration in, CSV series plus a JSON run
//! manifest out. Identical configuration and seed produce byte-identical
//! outputs; the thread count only affects wall time.

mod config;
mod output;
mod tasks;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{build_scenario, CliError, Config, TaskConfig};
use output::OutputDir;

#[derive(Parser, Debug)]
#[command(name = "bystander", version, about = "Simulations of couplings that leave the environment untouched by the system")]
struct Args {
    /// Scenario configuration (JSON).
    #[arg(long)]
    config: PathBuf,

    /// Output directory for CSV series and the run manifest.
    #[arg(long)]
    out: PathBuf,

    /// Master seed override for stochastic tasks.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads for trajectory ensembles (wall time only; results are
    /// independent of this).
    #[arg(long)]
    threads: Option<usize>,
}

fn run(args: &Args) -> Result<(), CliError> {
    let raw = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("cannot read config: {e}")))?;
    let cfg: Config = serde_json::from_str(&raw)
        .map_err(|e| CliError::Config(format!("cannot parse config: {e}")))?;
    if let Some(n) = args.threads {
        // ignore failures from double initialization in tests
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    if matches!(cfg.task, TaskConfig::Trajectories { .. }) && args.seed.is_none() && cfg.seed.is_none()
    {
        return Err(CliError::Config(
            "stochastic tasks need a seed (config field `seed` or flag `--seed`)".into(),
        ));
    }
    let scenario = build_scenario(&cfg)?;
    let mut out = OutputDir::new(&args.out)?;
    let results = tasks::run_task(&cfg, &scenario, seed, &mut out)?;
    let echo = serde_json::to_value(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    out.write_manifest(&echo, Some(seed), results)?;
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e @ CliError::Numerical(_)) => {
            eprintln!("{e}");
            ExitCode::from(3)
        }
    }
}
