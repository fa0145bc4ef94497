//! `vecchia`: simulation, fitting, efficiency reports, scoring, diagnostics
//! and timing from a single config file.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "vecchia", version, about = "Vecchia and composite likelihood inference for spatial extremes")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML config, or a JSON output whose embedded config should be replayed.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory (default: `out` from the config, else the current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate replicated data from `[model]` at `[sites]`.
    Simulate,
    /// Fit `[model]` to data with the likelihood in `[fit]`.
    Fit,
    /// Asymptotic efficiency of Gaussian estimators, with an optional sweep.
    Are,
    /// Cross-validated log score of fitted models.
    Score,
    /// Binned empirical extremal coefficients against a fitted model.
    Diag,
    /// Time single Vecchia objective evaluations over grid sizes.
    Bench,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli.config.ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let mut cfg = RunConfig::load(&path)?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if let Some(out) = cli.out {
        cfg.out = Some(out);
    }

    let level = if cli.verbose { "debug" } else { cfg.log_level.as_deref().unwrap_or("warn") };
    let _ = env_logger::Builder::new().parse_filters(level).try_init();

    if let Some(t) = cfg.threads {
        if t == 0 {
            return Err(CliError::Config("threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let ctx = Context { cfg, out };
    match cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::Fit => commands::fit_cmd(&ctx),
        Command::Are => commands::are_cmd(&ctx),
        Command::Score => commands::score_cmd(&ctx),
        Command::Diag => commands::diag_cmd(&ctx),
        Command::Bench => commands::bench_cmd(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
