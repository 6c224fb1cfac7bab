use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod design_cmd;
mod duel_cmd;
mod estimate_cmd;
mod experiment_cmd;

#[derive(Parser)]
#[command(name = "lowrank-glm", version, about = "Low-rank GLM estimation, design and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an experimental design over a set of arms.
    Design(design_cmd::DesignArgs),
    /// Run the two-stage estimator on a simulated environment.
    Estimate(estimate_cmd::EstimateArgs),
    /// Simulate explore-then-commit on a dueling-bandit instance.
    SimulateDuel(duel_cmd::DuelArgs),
    /// Run a completion or recovery experiment.
    Experiment(ExperimentArgs),
    /// Run the Stage II ablation study.
    Ablation(ExperimentArgs),
}

#[derive(Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; overrides `output_path` in the config.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Design(args) => design_cmd::run(&args).map(|_| ExitCode::SUCCESS),
        Command::Estimate(args) => estimate_cmd::run(&args).map(|_| ExitCode::SUCCESS),
        Command::SimulateDuel(args) => duel_cmd::run(&args).map(|_| ExitCode::SUCCESS),
        Command::Experiment(args) => experiment_cmd::run(&args, false),
        Command::Ablation(args) => experiment_cmd::run(&args, true),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
