//! `iimt` — train and evaluate domain-adaptation models on synthetic
//! domain-shift benchmarks.
//!
//! Exit codes are a stable contract for scripting: 0 success, 2 usage or
//! config errors, 3 runtime or numeric failures.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iimt_core::Error;

#[derive(Parser)]
#[command(name = "iimt", version, about = "Inter- and intra-domain mixup training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file and write run artifacts
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset directory
    Eval(EvalArgs),
    /// Run the five-row cumulative component ablation
    Ablate(AblateArgs),
    /// Check tape gradients of every loss against central finite differences
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic dataset directory
    GenData(GenDataArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Path to the run config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overridden by IIMT_OUT)
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the maximum target-mixup weight (the single searched weight)
    #[arg(long = "wt-max")]
    wt_max: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file to load
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory (samples.t / labels.t / manifest.toml)
    #[arg(long)]
    data: PathBuf,
    /// Optional directory for eval.txt / eval.csv
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overridden by IIMT_OUT)
    #[arg(long)]
    out: PathBuf,
    /// Base seed for the repetition set (default: the config seed)
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeds to average over
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long = "wt-max")]
    wt_max: Option<f64>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Check only one loss: loss_q, loss_z, loss_d, loss_s, loss_t, total
    #[arg(long)]
    scope: Option<String>,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Negative control: route one check through a corrupted backward rule
    #[arg(long, hide = true)]
    inject_bug: bool,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(subcommand)]
    generator: Generator,
}

#[derive(Subcommand)]
enum Generator {
    /// Two interleaved half-circles, optionally rotated
    TwoMoons {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        /// Rotation of the generated points, degrees
        #[arg(long = "rot", default_value_t = 0.0)]
        rotation_deg: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Domain tag recorded in the manifest
        #[arg(long, default_value = "source")]
        domain: String,
    },
    /// Gaussian blob pair; target displaced by a shift (writes source/ and target/)
    Blobs {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        /// Class means, e.g. "0,0;3,3"
        #[arg(long, default_value = "0,0;3,3")]
        means: String,
        /// Isotropic variance of each blob
        #[arg(long, default_value_t = 1.0)]
        variance: f64,
        /// Target-domain displacement, e.g. "1.5,0"
        #[arg(long, default_value = "1.5,0")]
        shift: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Rendered digit glyph pair; target rotated (writes source/ and target/)
    MiniDigits {
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "n-per-class", default_value_t = 40)]
        n_per_class: usize,
        /// 8 or 16
        #[arg(long, default_value_t = 8)]
        resolution: usize,
        #[arg(long = "rot", default_value_t = 40.0)]
        rotation_deg: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Validation(_) | Error::Format(_) | Error::Io(_) => 2,
        Error::Numeric(_)
        | Error::Diverged { .. }
        | Error::Contract(_)
        | Error::Oracle(_)
        | Error::DimensionMismatch { .. } => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Ablate(args) => commands::ablate(args),
        Command::Gradcheck(args) => commands::gradcheck(args),
        Command::GenData(args) => commands::gen_data(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
