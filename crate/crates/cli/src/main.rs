use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spota_cli::commands::{run_catapult, run_report, run_sweep, run_train, TrainMethod};
use spota_cli::{Config, Result};

#[derive(Parser)]
#[command(name = "spota", version, about = "Domain-randomized policy search experiments")]
struct Cli {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo study of the two-planet catapult problem.
    Catapult,
    /// Train a policy with SPOTA or one of the baselines.
    Train {
        #[arg(long, value_enum, default_value = "spota")]
        method: TrainMethod,
    },
    /// Evaluate policies while sweeping one domain parameter.
    Sweep {
        #[arg(long = "policy", required = true, num_args = 1..)]
        policies: Vec<PathBuf>,
    },
    /// Aggregate SPOTA traces of several runs.
    Report {
        #[arg(long = "trace", required = true, num_args = 1..)]
        traces: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::from_toml_str("")?,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    match cli.command {
        Command::Catapult => {
            let study = run_catapult(&cfg)?;
            eprintln!("wrote {} rows to {}", study.rows.len(), cfg.out_dir.join("catapult.csv").display());
        }
        Command::Train { method } => {
            let out = run_train(&cfg, method, &mut |r| {
                eprintln!(
                    "iteration {}: n_c={} n_r={} mean_gap={:.4} ucbog={:.4} negative_fraction={:.3}{}",
                    r.iteration,
                    r.n_c,
                    r.n_r,
                    r.mean_gap,
                    r.ucbog,
                    r.negative_fraction,
                    if r.stop { " stop" } else { "" }
                );
            })?;
            if let Some(res) = &out.spota {
                if !res.reached_threshold {
                    eprintln!("stopped at max_iterations without reaching beta = {}", cfg.spota.beta);
                }
            }
            eprintln!("wrote {}", cfg.out_dir.join("policy.txt").display());
        }
        Command::Sweep { policies } => {
            for path in run_sweep(&cfg, &policies)? {
                eprintln!("wrote {}", path.display());
            }
        }
        Command::Report { traces } => {
            let report = run_report(&cfg, &traces)?;
            eprintln!(
                "aggregated {} runs; mean UCBOG nonincreasing: {}",
                report.runs, report.mean_ucbog_nonincreasing
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
