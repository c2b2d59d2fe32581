//! `mtd`: simulate measurements, recover images with approximate EM, and
//! run error sweeps.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "mtd", version = env!("MTD_GIT_DESCRIBE"), about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config file; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set snr=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long = "in", global = true)]
    pub input: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 picks one per core.
    #[arg(long, default_value_t = 0, global = true)]
    pub threads: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a measurement (`.mtd2`) plus a JSON sidecar with the truth.
    Simulate {
        /// Coefficient JSON to plant instead of a random image.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Run approximate EM on a measurement and write the estimate as JSON.
    Recover {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// Run an SNR, size or K sweep and write one CSV row per trial.
    Sweep,
    /// Per-value mean and std of a sweep CSV, with log-log slopes.
    Summarize,
    /// Rotation-invariant relative error between two coefficient files.
    EvalError {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut common = cli.common;
    if let Some(seed) = common.seed {
        common.overrides.push(format!("seed={seed}"));
    }
    if let Command::Recover {
        k,
        eps,
        max_iters,
        restarts,
    } = &cli.command
    {
        let flags = [
            k.map(|v| format!("k={v}")),
            eps.map(|v| format!("epsilon={v:e}")),
            max_iters.map(|v| format!("max_iters={v}")),
            restarts.map(|v| format!("restarts={v}")),
        ];
        common.overrides.extend(flags.into_iter().flatten());
    }
    let cfg = config::parse_config(common.config.as_deref(), &common.overrides)?;
    if common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate { truth } => commands::simulate(&cfg, &common, truth.as_deref()),
        Command::Recover { .. } => commands::recover(&cfg, &common),
        Command::Sweep => commands::sweep(&cfg, &common),
        Command::Summarize => commands::summarize(&cfg, &common),
        Command::EvalError { truth, estimate } => {
            commands::eval_error(&cfg, &common, &truth, &estimate)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mtd: {e}");
            e.exit_code()
        }
    }
}
