use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use qdesk_cli::config::{self, describe, EXPERIMENTS};
use qdesk_cli::runner;

/// Exit codes: 0 = all assertions passed, 1 = assertion or run failure,
/// 2 = configuration error.
#[derive(Parser)]
#[command(name = "qdesk", version, about = "Desk-scale quantum experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a JSON config.
    Run {
        config: PathBuf,
        /// Output directory (default: `qdesk-out/<experiment>`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Validate a config without running it.
    Validate { config: PathBuf },
    /// List the available experiments.
    ListExperiments,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, seed } => {
            let mut cfg = match config::validate_file(&config) {
                Ok(c) => c,
                Err(errors) => {
                    eprintln!("config error:\n{errors}");
                    return ExitCode::from(2);
                }
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let out_dir = out.unwrap_or_else(|| {
                PathBuf::from("qdesk-out").join(cfg.params.experiment_id())
            });
            match runner::run(&cfg, &out_dir) {
                Ok(outcome) => {
                    for check in &outcome.manifest.checks {
                        let status = if check.passed { "pass" } else { "FAIL" };
                        println!("[{status}] {}: {}", check.name, check.detail);
                    }
                    if let Some(error) = &outcome.manifest.error {
                        eprintln!("run aborted: {error}");
                    }
                    println!(
                        "{}: {} passed, {} failed ({}s) -> {}",
                        outcome.manifest.experiment,
                        outcome.manifest.checks_passed,
                        outcome.manifest.checks_failed,
                        outcome.manifest.wall_time_seconds,
                        out_dir.display(),
                    );
                    if outcome.all_passed {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    eprintln!("run failed: {e:#}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Validate { config } => match config::validate_file(&config) {
            Ok(cfg) => {
                println!(
                    "valid: experiment `{}`, seed {}",
                    cfg.params.experiment_id(),
                    cfg.seed
                );
                ExitCode::SUCCESS
            }
            Err(errors) => {
                eprintln!("config error:\n{errors}");
                ExitCode::from(2)
            }
        },
        Command::ListExperiments => {
            for id in EXPERIMENTS {
                println!("{id}: {}", describe(id));
            }
            ExitCode::SUCCESS
        }
    }
}
