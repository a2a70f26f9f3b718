use std::path::PathBuf;
use std::process::ExitCode;

use bddm_cli::{run, Command, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bddm", version, about = "Bilateral denoising diffusion pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory holding inputs and outputs.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate train/validation/test splits.
    GenData(Common),
    /// Train the noise predictor.
    TrainScore(Common),
    /// Train the noise-scale predictor against the frozen noise predictor.
    TrainSchedule(Common),
    /// Grid-search the initial noise pair and write the best schedule.
    Search(Common),
    /// Draw samples under a schedule file.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Schedule file; defaults to `<out>/schedule.txt`.
        #[arg(long)]
        schedule: Option<PathBuf>,
    },
    /// Estimate the three lower bounds across steps.
    EvalBounds(Common),
    /// Compare schedule families at matched step budgets.
    Bench(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common, schedule) = match cli.command {
        Cmd::GenData(c) => (Command::GenData, c, None),
        Cmd::TrainScore(c) => (Command::TrainScore, c, None),
        Cmd::TrainSchedule(c) => (Command::TrainSchedule, c, None),
        Cmd::Search(c) => (Command::Search, c, None),
        Cmd::Sample { common, schedule } => (Command::Sample, common, schedule),
        Cmd::EvalBounds(c) => (Command::EvalBounds, c, None),
        Cmd::Bench(c) => (Command::Bench, c, None),
    };
    let result = RunConfig::load(&common.config, common.seed)
        .and_then(|cfg| run(command, &cfg, &common.out, schedule.as_deref()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
