use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use weatherflow::backbone::Task;
use weatherflow::Error;

mod commands;

const AFTER_HELP: &str = "\
Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 checkpoint mismatch.
Environment: WEATHERFLOW_THREADS caps the worker pool used for scene rendering and I/O.";

/// Weather-conditioned forward and inverse rendering with rectified flows.
#[derive(Debug, Parser)]
#[command(name = "weatherflow", version, after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a procedural dataset of images and intrinsic maps.
    GenData(GenDataArgs),
    /// Train an inverse (ir) or forward (fr) rendering model.
    Train(TrainArgs),
    /// Decompose an image (ir) or render maps into an image (fr).
    Infer(InferArgs),
    /// Score predicted maps against ground truth and write a CSV report.
    Eval(EvalArgs),
    /// Export the map-aware attention heatmap of an image.
    Heatmap(HeatmapArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Ir,
    Fr,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Ir => Task::Ir,
            TaskArg::Fr => Task::Fr,
        }
    }
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Run configuration JSON (image_size is used); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of scenes to render.
    #[arg(long)]
    count: usize,
    /// Base seed; overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write 8-bit PNG previews next to every tensor.
    #[arg(long)]
    previews: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Which model to train.
    #[arg(long, value_enum)]
    task: TaskArg,
    /// Run configuration JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory; falls back to the config's `dataset`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for checkpoints and loss.csv; falls back to the config's `checkpoint`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Total optimizer steps; overrides the config.
    #[arg(long)]
    steps: Option<u64>,
    /// Seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Resume from this checkpoint (optimizer state included).
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Print the loss every this many steps (0 disables).
    #[arg(long, default_value_t = 100)]
    log_every: u64,
}

#[derive(Debug, Args)]
struct InferArgs {
    /// Model kind the checkpoint must contain.
    #[arg(long, value_enum)]
    task: TaskArg,
    /// Trained checkpoint (.wck).
    #[arg(long)]
    ckpt: PathBuf,
    /// ir: an image .wdt file or a scene directory holding image.wdt.
    /// fr: a directory holding <map>.wdt files.
    #[arg(long)]
    input: PathBuf,
    /// Weather class name or id 0-8: sunny, overcast, rainy/thunderstorm, snow, foggy,
    /// sandstorm, night-clear, night-rain, dawn/dusk.
    #[arg(long)]
    weather: String,
    /// ir: comma-separated maps to decompose (default: all five).
    #[arg(long)]
    targets: Option<String>,
    /// fr: comma-separated maps to read from --input (default: every map present).
    #[arg(long)]
    maps: Option<String>,
    /// Euler sampler steps.
    #[arg(long, default_value_t = weatherflow::pipelines::DEFAULT_STEPS)]
    steps: usize,
    /// Sampler noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for .wdt results and PNG previews.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory of predicted <map>.wdt files, or of scene_* subdirectories.
    #[arg(long)]
    pred_dir: PathBuf,
    /// Ground-truth directory with the same layout (semantics.wdt masks sky from normal error).
    #[arg(long)]
    gt_dir: PathBuf,
    /// Report CSV path (`map,metric,value,n`).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct HeatmapArgs {
    /// Inverse rendering checkpoint with map-aware attention.
    #[arg(long)]
    ckpt: PathBuf,
    /// Image .wdt file or a scene directory holding image.wdt.
    #[arg(long)]
    input: PathBuf,
    /// Intrinsic map whose queries drive the attention.
    #[arg(long)]
    map: String,
    /// Output directory for heatmap_<map>.wdt and heatmap_<map>.png.
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Range(_) | Error::Shape(_) | Error::DegenerateCamera => 2,
        Error::Io { .. } | Error::Format { .. } | Error::Json(_) | Error::MissingCheckpoint(_) => 3,
        Error::CheckpointMismatch(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Heatmap(a) => commands::heatmap(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
