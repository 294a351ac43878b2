//! Command-line front end: evaluation reports, cascade inference over
//! recorded predictions, and dataset tooling (splits, summaries, training
//! configs, synthetic scenes).

mod commands;
mod overlay;
mod run_manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use liftaxle::cascade::TravelDirection;

#[derive(Parser)]
#[command(name = "liftaxle", version, about = "Lifted-axle detection pipeline and evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score predictions against ground truth and write a report plus a
    /// confusion matrix.
    Evaluate(EvaluateArgs),
    /// Run the truck → axle → lifted-axle cascade over recorded predictions.
    Cascade(CascadeArgs),
    /// Dataset tooling: train/val splits, summaries, training configs,
    /// synthetic scenes.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Markdown,
    Csv,
}

impl OutputFormat {
    fn extension(self) -> &'static str {
        match self {
            Self::Json => "json",
            Self::Markdown => "md",
            Self::Csv => "csv",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum IouKindArg {
    Box,
    Mask,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LabelFormat {
    /// One box per line: class cx cy w h.
    Detection,
    /// One polygon per line: class x1 y1 x2 y2 ...
    Segmentation,
}

fn parse_direction(s: &str) -> Result<TravelDirection, String> {
    s.parse()
}

#[derive(Args)]
struct EvaluateArgs {
    /// Dataset manifest JSON; label paths resolve relative to it.
    #[arg(long)]
    ground_truth: PathBuf,
    /// Class names, one per line; line number is the class id.
    #[arg(long)]
    classes: PathBuf,
    /// Recorded predictions JSON.
    #[arg(long)]
    predictions: PathBuf,
    /// Directory the report and confusion matrix are written into.
    #[arg(long)]
    out: PathBuf,
    /// IoU threshold for counting a prediction as a true positive.
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Confidence cut for counts and the confusion matrix (AP ranking keeps
    /// everything above 0.001 regardless).
    #[arg(long, default_value_t = 0.25)]
    conf: f64,
    /// Overlap measure: plain boxes or rasterized masks.
    #[arg(long, value_enum, default_value_t = IouKindArg::Box)]
    iou_kind: IouKindArg,
    /// How the label files are encoded.
    #[arg(long, value_enum, default_value_t = LabelFormat::Detection)]
    label_format: LabelFormat,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    format: OutputFormat,
    /// Skip the run manifest so outputs are byte-identical across runs.
    #[arg(long)]
    no_manifest: bool,
}

#[derive(Args)]
struct CascadeArgs {
    /// Recorded predictions JSON.
    #[arg(long)]
    predictions: PathBuf,
    /// Cascade configuration JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Travel direction; overrides the config file.
    #[arg(long, value_parser = parse_direction)]
    direction: Option<TravelDirection>,
    /// Directory receiving one records file per image.
    #[arg(long)]
    out_dir: PathBuf,
    /// Class names, one per line (defaults to truck/axle/lifted_axle).
    #[arg(long)]
    classes: Option<PathBuf>,
    /// Class id of the truck detector stage.
    #[arg(long, default_value_t = 0)]
    truck_class: u32,
    /// Class id of the axle detector stage.
    #[arg(long, default_value_t = 1)]
    axle_class: u32,
    /// Class id of the lifted-axle mask stage.
    #[arg(long, default_value_t = 2)]
    lifted_class: u32,
    /// Also write annotated copies of the source images.
    #[arg(long, requires = "images")]
    overlay: bool,
    /// Directory of source images named <image_id>.png.
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    no_manifest: bool,
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Assign train/val tags deterministically from a seed.
    Split(SplitArgs),
    /// Tabulate truck observations by source and axle count.
    Summarize(SummarizeArgs),
    /// Emit the training configuration for a model kind.
    GenConfig(GenConfigArgs),
    /// Materialize synthetic scenes (labels + predictions) from a spec file.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    classes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    classes: PathBuf,
    /// Truck observations JSON: [{"source": ..., "axle_count": ...}, ...].
    #[arg(long)]
    trucks: PathBuf,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenConfigArgs {
    #[arg(long, value_enum)]
    kind: ModelKindArg,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    batch: Option<u32>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    fliplr: Option<f64>,
    #[arg(long)]
    shear: Option<f64>,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelKindArg {
    Detection,
    Segmentation,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene spec JSON: {"scenes": [{"trucks": [{"axle_count": 5, "lifted": [3]}],
    /// "seed": 1, "image_id": "scene-1", ...}]}.
    #[arg(long)]
    spec: PathBuf,
    /// Directory receiving labels/, predictions.json, manifest.json, classes.txt.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    no_manifest: bool,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = commands::run(cli.command) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
