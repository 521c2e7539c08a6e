use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vcsoup_cli::config::{resolve, ConflictLevel, Overrides};
use vcsoup_cli::stages::{cmd_pipeline, run_stage};
use vcsoup_cli::CliError;

#[derive(Parser)]
#[command(
    name = "vcsoup",
    version,
    about = "Value-consistency filtering and model-soup pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Shared {
    /// Pipeline config JSON.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the universe, labelers and per-value preference pairs.
    GenData {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        conflict: Option<ConflictLevel>,
    },
    /// Fit one Bradley-Terry reward model per value.
    TrainReward {
        #[command(flatten)]
        shared: Shared,
    },
    /// Compute normalized gaps and consistency scores.
    Score {
        #[command(flatten)]
        shared: Shared,
    },
    /// Keep pairs whose consistency score reaches the threshold.
    Filter {
        #[command(flatten)]
        shared: Shared,
        #[arg(long, value_name = "FLOAT", allow_hyphen_values = true)]
        tau: Option<f64>,
    },
    /// Train one value vector per filtered dataset.
    TrainDpo {
        #[command(flatten)]
        shared: Shared,
        #[arg(long, value_name = "FLOAT")]
        beta: Option<f64>,
    },
    /// Build and score merged candidates over the weight simplex.
    Merge {
        #[command(flatten)]
        shared: Shared,
        #[arg(long, value_name = "FLOAT")]
        grid_step: Option<f64>,
    },
    /// Select the Pareto frontier on validation scores.
    Pareto {
        #[command(flatten)]
        shared: Shared,
        /// Keep one member per group of identical scores.
        #[arg(long)]
        dedupe: bool,
    },
    /// Gradient conflict, vector geometry and merging-gap reports.
    Verify {
        #[command(flatten)]
        shared: Shared,
    },
    /// All stages in order, then a MANIFEST.
    Pipeline {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        conflict: Option<ConflictLevel>,
        #[arg(long, value_name = "FLOAT", allow_hyphen_values = true)]
        tau: Option<f64>,
        #[arg(long, value_name = "FLOAT")]
        beta: Option<f64>,
        #[arg(long, value_name = "FLOAT")]
        grid_step: Option<f64>,
        #[arg(long)]
        dedupe: bool,
    },
}

fn overrides(s: &Shared) -> Overrides {
    Overrides {
        seed: s.seed,
        out: s.out.clone(),
        ..Overrides::default()
    }
}

fn run(command: Command) -> Result<(), CliError> {
    let (stage, shared, o) = match command {
        Command::GenData { shared, conflict } => {
            let o = Overrides {
                conflict,
                ..overrides(&shared)
            };
            ("gen-data", shared, o)
        }
        Command::TrainReward { shared } => ("train-reward", shared.clone(), overrides(&shared)),
        Command::Score { shared } => ("score", shared.clone(), overrides(&shared)),
        Command::Filter { shared, tau } => {
            let o = Overrides {
                tau,
                ..overrides(&shared)
            };
            ("filter", shared, o)
        }
        Command::TrainDpo { shared, beta } => {
            let o = Overrides {
                beta,
                ..overrides(&shared)
            };
            ("train-dpo", shared, o)
        }
        Command::Merge { shared, grid_step } => {
            let o = Overrides {
                grid_step,
                ..overrides(&shared)
            };
            ("merge", shared, o)
        }
        Command::Pareto { shared, dedupe } => {
            let o = Overrides {
                dedupe,
                ..overrides(&shared)
            };
            ("pareto", shared, o)
        }
        Command::Verify { shared } => ("verify", shared.clone(), overrides(&shared)),
        Command::Pipeline {
            shared,
            conflict,
            tau,
            beta,
            grid_step,
            dedupe,
        } => {
            let o = Overrides {
                conflict,
                tau,
                beta,
                grid_step,
                dedupe,
                ..overrides(&shared)
            };
            ("pipeline", shared, o)
        }
    };
    let cfg = resolve(shared.config.as_deref(), &o)?;
    if stage == "pipeline" {
        let m = cmd_pipeline(&cfg)?;
        let files: usize = m.stages.iter().map(|s| s.outputs.len()).sum();
        println!("pipeline: {files} files written to {}", cfg.out_dir.display());
    } else {
        for f in run_stage(stage, &cfg)? {
            println!("{}", cfg.out_dir.join(f).display());
        }
    }
    Ok(())
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
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
