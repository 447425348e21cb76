use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use evpower_cli::commands::{
    cmd_evaluate, cmd_generate, cmd_predict, cmd_train, EvaluateArgs, GenerateArgs, PredictArgs,
    TrainArgs,
};
use evpower_cli::config::Method;

/// Anchored LSTM ensembles with Student-t heads for EV power estimation:
/// synthetic drive generation, training, prediction, and calibration reports.
#[derive(Parser)]
#[command(name = "evpower", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic drive-cycle CSV.
    Generate {
        /// TOML generator spec; defaults cover an 800 s highway cycle.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Noise seed (the ground-truth power curve is seed-independent).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the spec's duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Train an ensemble on the first 70% of a telemetry CSV.
    Train {
        /// Run configuration TOML; omitted means defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Input telemetry CSV.
        #[arg(long)]
        data: PathBuf,
        /// Output model archive path.
        #[arg(long)]
        model: PathBuf,
        /// Method preset overriding head and mode.
        #[arg(long, value_enum)]
        method: Option<Method>,
        /// Override the configured base seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Emit per-window predictions with intervals as CSV.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report accuracy and calibration metrics on a labeled CSV.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Interval miscoverage level (default: the archived run's alpha).
        #[arg(long)]
        alpha: Option<f64>,
        /// Emit the report as JSON instead of key = value text.
        #[arg(long)]
        json: bool,
    },
}

fn run(cli: Cli) -> evpower_cli::Result<()> {
    match cli.command {
        Command::Generate {
            spec,
            out,
            seed,
            duration,
        } => {
            cmd_generate(&GenerateArgs {
                spec,
                out,
                seed,
                duration,
            })?;
        }
        Command::Train {
            config,
            data,
            model,
            method,
            seed,
        } => {
            cmd_train(&TrainArgs {
                config,
                data,
                model,
                method,
                seed,
            })?;
        }
        Command::Predict { model, data, out } => {
            cmd_predict(&PredictArgs { model, data, out })?;
        }
        Command::Evaluate {
            model,
            data,
            alpha,
            json,
        } => {
            cmd_evaluate(&EvaluateArgs {
                model,
                data,
                alpha,
                json,
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
