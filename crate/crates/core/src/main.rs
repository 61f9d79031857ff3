use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mppi_merge::config::{parse_grid, AppConfig};
use mppi_merge::harness;

#[derive(Parser)]
#[command(name = "mppi-merge", about = "Interaction-aware MPPI merge planner and simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded Monte-Carlo experiment grid from a config file.
    Run {
        /// Experiment config (TOML).
        config: PathBuf,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override runs per cell.
        #[arg(long)]
        runs: Option<usize>,
        /// Override the base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Grid override: 'behaviors:predictors:priors', e.g.
        /// 'probabilistic,cooperative:cv,interactive_idm:on,off'.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Print a per-step trace of one episode log.
    Replay {
        /// Episode record (JSONL).
        episode: PathBuf,
    },
    /// Recompute the summary from the episode records in a run directory.
    Metrics {
        /// Directory containing config_echo.toml and episode files.
        dir: PathBuf,
    },
}

fn run() -> mppi_merge::Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            out,
            runs,
            seed,
            grid,
        } => {
            let mut cfg = AppConfig::load(&config)?;
            if let Some(out) = out {
                cfg.experiment.out_dir = out;
            }
            if let Some(runs) = runs {
                cfg.experiment.runs = runs;
            }
            if let Some(seed) = seed {
                cfg.experiment.base_seed = seed;
            }
            if let Some(grid) = grid {
                cfg.experiment.cells = parse_grid(&grid)?;
            }
            let summary = harness::run_experiment(&cfg)?;
            for cell in &summary.cells {
                let m = &cell.metrics;
                println!(
                    "{:<40} success {:5.1}%  collision {:5.1}%  cost {:7.3} +- {:.3}  merge {:6.2} +- {:5.2} s ({} merges)",
                    cell.cell,
                    m.success_rate,
                    m.collision_rate,
                    m.planning_cost.mean,
                    m.planning_cost.std,
                    m.merge_time.mean,
                    m.merge_time.std,
                    m.merge_count,
                );
            }
            println!("artifacts in {}", cfg.experiment.out_dir.display());
            Ok(())
        }
        Command::Replay { episode } => harness::replay(&episode),
        Command::Metrics { dir } => {
            let summary = harness::recompute_summary(&dir)?;
            let text = serde_json::to_string_pretty(&summary)
                .map_err(|e| mppi_merge::Error::Serialization(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
