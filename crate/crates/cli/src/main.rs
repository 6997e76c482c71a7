mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use daf::train::DecayMode;
use daf::ErrorCategory;

use crate::config::SharedArgs;

#[derive(Parser, Debug)]
#[command(name = "daf", version, about = "Differential attention fusion forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on the leading rows of a CSV series and score the test rows.
    Train(TrainArgs),
    /// Write one-step-ahead forecasts from a checkpoint.
    Predict(PredictArgs),
    /// Forecast and score against the truth and the persistence baseline.
    Eval(PredictArgs),
    /// Compare analytic and finite-difference gradients of a small model.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic multivariate series as CSV.
    Synth(SynthArgs),
}

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub shared: SharedArgs,
    #[arg(long)]
    pub train_rows: Option<usize>,
    #[arg(long)]
    pub test_rows: Option<usize>,
    /// Learning-rate decay between epochs.
    #[arg(long, value_enum)]
    pub decay: Option<DecayArg>,
    /// Continue from a checkpoint until the configured epoch count.
    #[arg(long, value_name = "PATH")]
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DecayArg {
    Compounding,
    Exponential,
}

impl From<DecayArg> for DecayMode {
    fn from(d: DecayArg) -> Self {
        match d {
            DecayArg::Compounding => DecayMode::Compounding,
            DecayArg::Exponential => DecayMode::Exponential,
        }
    }
}

#[derive(clap::Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub shared: SharedArgs,
    /// Checkpoint to load; `<out>/checkpoint.json` when unset.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
    All,
}

#[derive(clap::Args, Debug)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub shared: SharedArgs,
    /// Relative error above which a parameter fails.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, hide = true, value_name = "OP")]
    pub corrupt_backward: Option<String>,
}

#[derive(clap::Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub shared: SharedArgs,
    /// trend, sine, trend+sine or mutation.
    #[arg(long, default_value = "trend+sine")]
    pub kind: String,
    #[arg(long, default_value_t = 400)]
    pub rows: usize,
    /// Standard deviation of the Gaussian noise added to every column.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a, false),
        Command::Eval(a) => commands::predict(a, true),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!("error[{}]: {e}", category.as_str());
            ExitCode::from(match category {
                ErrorCategory::Input => 3,
                ErrorCategory::Config => 4,
                ErrorCategory::Numeric => 5,
            })
        }
    }
}
