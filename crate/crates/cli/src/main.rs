//! `sumo`: synthetic data, preprocessing, split selection, training,
//! prediction, evaluation and gradient checks from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sumo::Error;

mod check;
mod data;
mod eval;
mod train;

#[derive(Parser, Debug)]
#[command(name = "sumo", version, about = "Sleep spindle detection with a 1D U-Net")]
struct Cli {
    /// Worker threads for preprocessing, convolutions and validation.
    /// Results do not depend on this value.
    #[arg(long, global = true, env = "SUMO_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with a "truth" annotation set.
    Synth(data::SynthArgs),
    /// Band-pass, resample to 100 Hz and z-score every segment into a new dataset.
    Preprocess(data::PreprocessArgs),
    /// Draw candidate test sets and keep the one with the median scorer F1.
    Split(eval::SplitArgs),
    /// Train one model per cross-validation fold.
    Train(train::TrainArgs),
    /// Write a model's detections as an annotation set.
    Predict(eval::PredictArgs),
    /// Score detected annotation sets against a reference.
    Eval(eval::EvalArgs),
    /// Check analytic gradients of every layer against finite differences.
    Gradcheck(check::GradcheckArgs),
}

/// Restricts a command to the train or test subjects of a split file.
#[derive(Args, Debug, Clone)]
pub struct SubsetArgs {
    #[arg(long)]
    split: Option<PathBuf>,
    /// Which side of the split to use.
    #[arg(long, value_enum, default_value_t = Part::Test, requires = "split")]
    part: Part,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Train,
    Test,
}

fn run(cli: Cli) -> sumo::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Synth(a) => data::synth(a),
        Command::Preprocess(a) => data::preprocess(a),
        Command::Split(a) => eval::split(a),
        Command::Train(a) => train::train(a),
        Command::Predict(a) => eval::predict(a),
        Command::Eval(a) => eval::eval(a),
        Command::Gradcheck(a) => check::gradcheck(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 3 })
        }
    }
}
