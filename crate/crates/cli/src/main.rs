//! `textboot`: synthesize data, split it, run the bootstrapping pipeline,
//! evaluate detections and annotate pools from the command line.
//!
//! Exit status is 0 on success, 1 when the pipeline reports an error and 2
//! for malformed invocations.

mod commands;
mod convert;
mod run_manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "textboot", version, about = "Bootstrap curved-text detectors from weak annotations")]
struct Cli {
    /// Worker threads for per-image stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic curved-text dataset.
    Synth(SynthArgs),
    /// Split a STRONG manifest into a strong subset and a downgraded rest.
    Split(SplitArgs),
    /// Run recursive training and write a run directory.
    Run(RunArgs),
    /// Score a detection manifest against ground truth.
    Eval(EvalArgs),
    /// Pseudo-annotate a pool with a saved model.
    Annotate(AnnotateArgs),
    /// Convert polygon-per-line text labels into a manifest.
    Convert(ConvertArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON scene spec; individual flags below override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub n_images: Option<u32>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    pub instances: Option<Vec<u32>>,
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    pub curvature: Option<Vec<f64>>,
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    pub stroke_width: Option<Vec<u32>>,
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    pub length: Option<Vec<f64>>,
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    pub contrast: Option<Vec<f64>>,
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    pub distractors: Option<Vec<u32>>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub points_per_side: Option<u32>,
    #[arg(long)]
    pub prefix: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum DowngradeArg {
    Weak,
    None,
}

fn open_fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not strictly between 0 and 1"))
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

#[derive(Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_parser = open_fraction)]
    pub strong_fraction: f64,
    #[arg(long, value_enum, default_value = "weak")]
    pub downgrade: DowngradeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving strong.jsonl and rest.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Naive,
    Filter,
    Local,
    Fully,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum OriginArg {
    Baseline,
    Previous,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum AnnotatorArg {
    Latest,
    Best,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum MatchArg {
    Mask,
    Box,
}

#[derive(Args)]
pub struct ThresholdArgs {
    /// Naive score threshold S.
    #[arg(long, default_value_t = 0.5, value_parser = unit_interval)]
    pub score_s: f64,
    /// Filter score threshold S'.
    #[arg(long, default_value_t = 0.4, value_parser = unit_interval)]
    pub score_sprime: f64,
    /// Filter box-IoU threshold T.
    #[arg(long, default_value_t = 0.3, value_parser = unit_interval)]
    pub iou_t: f64,
    /// Drop local annotations whose mask came back empty.
    #[arg(long)]
    pub drop_empty_local_masks: bool,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<u32>,
    #[arg(long)]
    pub proposal_threshold: Option<f64>,
    #[arg(long)]
    pub min_component_pixels: Option<u32>,
    #[arg(long)]
    pub patch_radius: Option<u32>,
    #[arg(long)]
    pub positive_weight: Option<f64>,
    #[arg(long)]
    pub pseudo_positive_weight: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
}

#[derive(Args)]
pub struct RunArgs {
    #[arg(long, value_enum)]
    pub strategy: StrategyArg,
    #[arg(long, default_value_t = 3)]
    pub rounds: u32,
    /// STRONG manifest of the small fully annotated subset.
    #[arg(long)]
    pub strong: Option<PathBuf>,
    /// Pool manifest: WEAK or NONE for the pseudo-label strategies, STRONG for fully.
    #[arg(long)]
    pub pool: PathBuf,
    /// STRONG test manifest.
    #[arg(long)]
    pub test: PathBuf,
    /// Start from this model instead of training a baseline.
    #[arg(long)]
    pub initial_model: Option<PathBuf>,
    /// Pseudo manifest used in round 1 instead of annotating the pool.
    #[arg(long)]
    pub seed_pseudo: Option<PathBuf>,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_enum, default_value = "baseline")]
    pub retrain_origin: OriginArg,
    #[arg(long, value_enum, default_value = "latest")]
    pub annotate_with: AnnotatorArg,
    #[arg(long, default_value_t = 0.5, value_parser = open_fraction)]
    pub iou: f64,
    #[arg(long, value_enum, default_value = "mask")]
    pub match_on: MatchArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run directory; relative paths resolve against $TEXTBOOT_RUN_ROOT when set.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// STRONG manifest of detections; instance scores are optional.
    #[arg(long)]
    pub det: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = 0.5, value_parser = open_fraction)]
    pub iou: f64,
    #[arg(long, value_enum, default_value = "mask")]
    pub match_on: MatchArg,
    /// Also write the full report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum AnnotateStrategyArg {
    Naive,
    Filter,
    Local,
}

#[derive(Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long, value_enum, default_value = "local")]
    pub strategy: AnnotateStrategyArg,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[arg(long, default_value_t = 0)]
    pub round: u32,
    /// Output pseudo manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ConvertArgs {
    /// Directory of `<id>.txt` label files, one polygon per line.
    #[arg(long)]
    pub labels: PathBuf,
    /// Directory holding `<id>.pgm` images.
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Split(a) => commands::split(a),
        Command::Run(a) => commands::run(a),
        Command::Eval(a) => commands::eval(a),
        Command::Annotate(a) => commands::annotate(a),
        Command::Convert(a) => convert::convert(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
