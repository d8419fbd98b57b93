//! Command-line entry points. All heavy lifting lives in the library; this
//! file parses arguments, wires overrides into the config, and maps errors
//! to exit codes (2 for usage/config problems, 1 for runtime failures).

use clap::{Args, Parser, Subcommand};
use reled::config::{OracleKind, Overrides, RunConfig};
use reled::run::{cmd_demo_quality, cmd_eval, cmd_train, RunError};
use reled::trainer::TrainMode;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "reled",
    version,
    about = "Multi-agent road-network training laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed; writes metrics, checkpoints, trajectory
    /// logs, and the planner transcript under the output directory.
    Train(Common),
    /// Evaluate a checkpoint greedily over fresh episodes.
    Eval(EvalArgs),
    /// Grade planner demonstrations across refinement rounds.
    DemoQuality(DemoQualityArgs),
}

#[derive(Args)]
struct Common {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Training mode: reled or ippo.
    #[arg(long)]
    mode: Option<String>,
    /// Instruction planner: scripted or http.
    #[arg(long)]
    oracle: Option<String>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint file to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Evaluation episode count; defaults to run.eval_episodes.
    #[arg(long)]
    episodes: Option<u32>,
}

#[derive(Args)]
struct DemoQualityArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated refinement counts to grade.
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    refinements: Vec<u32>,
}

fn usage_error(message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(2)
}

fn load(common: &Common) -> Result<RunConfig, ExitCode> {
    let mode = match &common.mode {
        None => None,
        Some(text) => Some(text.parse::<TrainMode>().map_err(usage_error)?),
    };
    let oracle = match &common.oracle {
        None => None,
        Some(text) => Some(text.parse::<OracleKind>().map_err(usage_error)?),
    };
    let overrides = Overrides {
        seeds: common.seed.clone(),
        mode,
        oracle,
        out: common.out.clone(),
    };
    RunConfig::load(&common.config, &overrides).map_err(usage_error)
}

fn run_error(err: RunError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(err.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(common) => {
            let config = match load(&common) {
                Ok(config) => config,
                Err(code) => return code,
            };
            match cmd_train(&config) {
                Ok(dirs) => {
                    for dir in dirs {
                        println!("run complete: {}", dir.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(err) => run_error(err),
            }
        }
        Command::Eval(args) => {
            let config = match load(&args.common) {
                Ok(config) => config,
                Err(code) => return code,
            };
            let episodes = args.episodes.unwrap_or(config.run.eval_episodes);
            match cmd_eval(&config, &args.checkpoint, episodes) {
                Ok(reports) => {
                    for (path, report) in reports {
                        println!(
                            "seed {}: fleet mean reward {:.3}, mean travel time {:.3}, \
                             arrival rate {:.3} over {} episodes",
                            report.seed,
                            report.fleet_mean_reward,
                            report.fleet_mean_travel_time,
                            report.fleet_arrival_rate,
                            report.episodes
                        );
                        for stat in &report.per_agent {
                            println!(
                                "  agent {}: reward {:.3} +/- {:.3}, travel time {:.3} +/- {:.3}, \
                                 arrivals {:.0}%",
                                stat.agent,
                                stat.mean_reward,
                                stat.sd_reward,
                                stat.mean_travel_time,
                                stat.sd_travel_time,
                                100.0 * stat.arrival_rate
                            );
                        }
                        println!("report written: {}", path.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(err) => run_error(err),
            }
        }
        Command::DemoQuality(args) => {
            let config = match load(&args.common) {
                Ok(config) => config,
                Err(code) => return code,
            };
            if args.refinements.is_empty() {
                return usage_error("at least one refinement count is required");
            }
            match cmd_demo_quality(&config, &args.refinements) {
                Ok((path, report)) => {
                    for row in &report.rows {
                        let cell = |c: &Option<reled::run::MeanSd>| match c {
                            Some(m) => format!("{:.3} +/- {:.3}", m.mean, m.sd),
                            None => "unavailable".to_string(),
                        };
                        println!(
                            "refinements {}: exec rate {}, reward {}, inference {}, dtw {}",
                            row.refinements,
                            cell(&row.execution_rate),
                            cell(&row.mean_reward),
                            cell(&row.inference_s),
                            cell(&row.dtw_from_initial)
                        );
                    }
                    println!("report written: {}", path.display());
                    ExitCode::SUCCESS
                }
                Err(err) => run_error(err),
            }
        }
    }
}
