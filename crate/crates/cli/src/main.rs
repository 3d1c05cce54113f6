use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::{SplitFlags, SynthFlags, TrainFlags};

/// Exit codes.
const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

/// Bad flags, config values or config files.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "recist", version, about = "Lesion segmentation from RECIST diameters with dual pseudo-labels")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Rasterize Q, C and ambiguous masks from an annotation CSV.
    GenLabels(GenLabelsArgs),
    /// Compare pseudo-labels against reference masks.
    ValidateMasks(DataArgs),
    /// Train one model pair.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Loss ablation over several seeds.
    Ablate(MultiSeedArgs),
    /// Ensemble Dice as a function of lambda.
    SweepLambda(SweepArgs),
    /// Draw reference and predicted contours over slices.
    ExportOverlays(OverlayArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// TOML file with [synth], [split] and [train] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of slices.
    #[arg(long, default_value_t = 250)]
    pub n: usize,
    #[command(flatten)]
    pub synth: SynthFlags,
    #[command(flatten)]
    pub split: SplitFlags,
}

#[derive(Args, Debug)]
pub struct GenLabelsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub height: usize,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory with manifest.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub split: SplitFlags,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Args, Debug)]
pub struct MultiSeedArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Number of training seeds, starting at --seed.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub multi: MultiSeedArgs,
    /// Comma-separated lambda values.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub lambdas: Vec<f64>,
}

#[derive(Args, Debug)]
pub struct OverlayArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Pixel upscaling of the written images.
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    /// Stop after this many slices.
    #[arg(long)]
    pub limit: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::GenLabels(a) => commands::gen_labels(a),
        Command::ValidateMasks(a) => commands::validate_masks(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::SweepLambda(a) => commands::sweep_lambda(a),
        Command::ExportOverlays(a) => commands::export_overlays(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match e.downcast_ref::<recist_core::Error>() {
        Some(recist_core::Error::NonFiniteLoss(_)) => EXIT_NUMERIC,
        Some(recist_core::Error::InvalidConfig(_)) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}
