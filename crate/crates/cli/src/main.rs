//! `pap`: panoramic affordance prediction from the command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pap_core::eval::Subset;
use pap_core::grounding::PipelineError;
use pap_core::Error;

#[derive(Parser)]
#[command(name = "pap", version, about = "Panoramic affordance prediction")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ground a task in one panorama and write the ERP mask.
    Predict(PredictArgs),
    /// Run the pipeline over a dataset and write report.json and per_sample.csv.
    Evaluate(EvaluateArgs),
    /// Render a perspective view of a panorama.
    Viewport(ViewportArgs),
    /// Draw the numbered routing grid over an image.
    Grid(GridArgs),
    /// Label every record of a dataset hard or normal.
    Split(SplitArgs),
    /// Serve the ground-truth oracle over the wire protocol.
    MockServe(MockServeArgs),
    /// Write a synthetic dataset of painted panoramas.
    Synth(SynthArgs),
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub task: String,
    /// JSON config; defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output mask PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for overlay, viewport, perspective mask, spec and routing dumps.
    #[arg(long)]
    pub debug_dir: Option<PathBuf>,
    /// Sample id sent to backends; defaults to the image file stem.
    #[arg(long)]
    pub sample_id: Option<String>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub subset: Option<Subset>,
    /// Answer all three roles with the dataset's ground truth.
    #[arg(long, conflicts_with = "config")]
    pub oracle: bool,
    #[arg(long)]
    pub concurrency: Option<usize>,
}

#[derive(Args)]
pub struct ViewportArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub yaw: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub pitch: f64,
    /// Horizontal field of view, degrees.
    #[arg(long)]
    pub fov: f64,
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub height: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GridArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub cols: usize,
    #[arg(long, default_value_t = 3)]
    pub rows: usize,
    #[arg(long, default_value_t = 5)]
    pub line_width: u32,
    #[arg(long, default_value_t = 50)]
    pub font_size: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory for the labelled annotations and split.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct MockServeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Probability of moving each reported grid cell to a neighbour.
    #[arg(long, default_value_t = 0.0)]
    pub noise_p: f64,
    /// Box jitter in pixels.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub count: usize,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
}

/// Bad invocation or input that is not a dataset problem.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_GROUNDING: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;
pub const EXIT_DATASET: u8 = 4;

fn core_exit_code(e: &Error) -> u8 {
    match e {
        Error::UnparseableResponse(_)
        | Error::EmptyGridBoxes
        | Error::BadIndex { .. }
        | Error::GroundingFailed(_)
        | Error::NoDetection
        | Error::DegenerateRegion(_) => EXIT_GROUNDING,
        Error::Backend { .. } | Error::Timeout(_) | Error::UnknownImage(_) | Error::MaskDimMismatch { .. } => {
            EXIT_BACKEND
        }
        Error::DatasetFormat { .. } => EXIT_DATASET,
        _ => EXIT_USAGE,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            return core_exit_code(&p.source);
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return core_exit_code(e);
        }
    }
    EXIT_USAGE
}

/// The cause chain, skipping causes already spelled out by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Viewport(a) => commands::viewport(a),
        Command::Grid(a) => commands::grid(a),
        Command::Split(a) => commands::split(a),
        Command::MockServe(a) => commands::mock_serve(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
