//! `ppg-rr` command-line front end. Every subcommand writes a JSON summary
//! into the output directory and prints a short table to stdout.

mod commands;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ppg-rr", version, about = "Respiration rate from PPG features and regression models")]
struct Cli {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for outputs; overrides the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic recordings with known respiration rates.
    Synth(SynthArgs),
    /// Load, segment, filter and quality-screen recordings.
    Ingest(InputArgs),
    /// Compute the feature matrix (cached by input contents and settings).
    Extract(ExtractArgs),
    /// Rank the columns of a feature matrix.
    Select(SelectArgs),
    /// Fit one model on a whole feature matrix.
    Train(TrainArgs),
    /// Bayesian optimization of GPR hyperparameters.
    Tune(TuneArgs),
    /// Cross-validate, or score a trained model on a feature matrix.
    Evaluate(EvaluateArgs),
    /// Every stage end to end, with a manifest.
    Run(InputArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    subjects: usize,
    /// 32-s segments per subject.
    #[arg(long, default_value_t = 20)]
    segments: usize,
    #[arg(long, default_value_t = 20.0)]
    snr_db: f64,
    #[arg(long, default_value_t = 8.0)]
    rr_min: f64,
    #[arg(long, default_value_t = 30.0)]
    rr_max: f64,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// CSV files or directories; replaces the configured inputs.
    inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Also write per-beat landmarks to fiducials.csv.
    #[arg(long)]
    dump_fiducials: bool,
}

#[derive(Debug, Args)]
struct FeatureSource {
    /// Feature matrix CSV as written by `extract`. When omitted the matrix
    /// is extracted from the configured inputs.
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    source: FeatureSource,
    /// Ranking method; the configured one when omitted.
    #[arg(long)]
    method: Option<ppg_rr::RankingMethod>,
    /// Columns to keep; the method's default when omitted.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Family {
    Gpr,
    Svr,
    Trees,
    Grnn,
    Mlp,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    source: FeatureSource,
    /// Model family with default hyperparameters; the configured model
    /// when omitted.
    #[arg(long, value_enum)]
    family: Option<Family>,
    #[arg(long)]
    method: Option<ppg_rr::RankingMethod>,
    #[arg(long)]
    k: Option<usize>,
    /// Use every column.
    #[arg(long, conflicts_with_all = ["method", "k"])]
    no_select: bool,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[command(flatten)]
    source: FeatureSource,
    /// Objective evaluations; the configured count when omitted.
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    source: FeatureSource,
    /// Output directory of `train`; scores that model instead of running
    /// cross-validation.
    #[arg(long)]
    trained: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
