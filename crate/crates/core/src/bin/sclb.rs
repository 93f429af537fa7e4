use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sclb::experiment::{load_config, run_barrier, run_designs, run_experiment, run_rage, ExperimentError, RunOptions};

#[derive(Parser)]
#[command(name = "sclb", version, about = "Active context sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Regret curves: results.csv, designs.csv, summary.txt.
    Run { config: PathBuf },
    /// Design objectives: designs.csv.
    Designs { config: PathBuf },
    /// Passive barrier estimates: barrier.csv.
    Barrier { config: PathBuf },
    /// Policy elimination runs and rho values: rage.csv, rage_summary.txt.
    Rage { config: PathBuf },
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    let opts = RunOptions {
        seed: cli.seed,
        jobs: cli.jobs,
        out_dir: cli.out,
    };
    match cli.command {
        Command::Run { config } => {
            let c = load_config(&config)?;
            let out = run_experiment(&c, &opts)?;
            for p in &out.curve {
                println!(
                    "{:<16} T={:<7} regret {:.6} +/- {:.6}",
                    p.method.name(),
                    p.horizon,
                    p.regret.mean,
                    2.0 * p.regret.stderr
                );
            }
        }
        Command::Designs { config } => {
            for r in run_designs(&load_config(&config)?, &opts)? {
                println!("{:<10} objective {:.6} gap {:.2e}", r.method, r.objective, r.gap);
            }
        }
        Command::Barrier { config } => {
            for r in run_barrier(&load_config(&config)?, &opts)? {
                println!(
                    "{:<15} T={:<7} T*Gamma {:.4} +/- {:.4} (d = {})",
                    r.scheme,
                    r.horizon,
                    r.scaled.mean,
                    2.0 * r.scaled.stderr,
                    r.dim
                );
            }
        }
        Command::Rage { config } => {
            let r = run_rage(&load_config(&config)?, &opts)?;
            println!(
                "optimum kept in {}/{} runs; rho_act {:.6}, rho_pas {:.6}",
                r.kept_optimum, r.runs, r.rho_active, r.rho_passive
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sclb: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
