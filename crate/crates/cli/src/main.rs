//! `scns`: simulate, verify and summarise stochastically forced compressible
//! flow on the unit interval.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::config::Overrides;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "scns",
    version,
    about = "Stochastic compressible Navier-Stokes simulator and verification harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set A=2`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Override the seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, env = "SCNS_OUT_DIR", value_name = "DIR")]
    out: Option<PathBuf>,

    /// Resume a trajectory from a checkpoint (simulate only).
    #[arg(long, global = true, value_name = "PATH")]
    resume: Option<PathBuf>,

    /// Worker threads for independent trajectories.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Run trajectories and write CSV samples and checkpoints.
    Simulate,
    /// Run an ensemble and check the expectation inequalities.
    Ensemble,
    /// Check the pathwise inequalities on single and paired runs.
    Verify,
    /// Estimate the masses of the compact sets and the dissipation budget.
    Tightness,
    /// Estimate the exponential tail of the shifted sup of Psi.
    Martingale,
    /// Scan the pressure coefficient with scaled noise.
    Lowmach,
}

fn run(cli: &Cli) -> Result<usize, CliError> {
    let overrides = Overrides {
        set: cli.set.clone(),
        seed: cli.seed,
        out: cli.out.clone(),
        workers: cli.workers,
    };
    let cfg = config::load(cli.config.as_deref(), &overrides)?;
    if cli.resume.is_some() && !matches!(cli.command, Command::Simulate) {
        return Err(CliError::Config("--resume only applies to simulate".into()));
    }
    let verdicts = match cli.command {
        Command::Simulate => commands::simulate(&cfg, cli.resume.as_deref())?,
        Command::Ensemble => commands::ensemble(&cfg)?,
        Command::Verify => commands::verify(&cfg)?,
        Command::Tightness => commands::tightness(&cfg)?,
        Command::Martingale => commands::martingale(&cfg)?,
        Command::Lowmach => commands::lowmach(&cfg)?,
    };
    print!("{}", output::verdict_table(&cfg.hash(), &verdicts));
    Ok(verdicts.iter().filter(|v| !v.pass).count())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let result = run(&cli).and_then(|failed| {
        if failed == 0 {
            Ok(())
        } else {
            Err(CliError::Verdict(failed))
        }
    });
    eprintln!("elapsed {:.2}s", start.elapsed().as_secs_f64());
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
