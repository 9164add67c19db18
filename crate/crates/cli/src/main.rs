//! `segfuse`: fuse model predictions into label maps, hand the uncertain
//! pixels to annotators, and evaluate the result.
//!
//! Exit status is 0 on success, 1 on any processing error and 2 on bad
//! usage.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod cmd;
mod util;

#[derive(Parser)]
#[command(name = "segfuse", version, about = "Semi-automatic segmentation annotation pipeline")]
struct Cli {
    /// Worker threads for batch commands (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Class catalog JSON (`{"classes": [...]}`); defaults to the 19 street-scene classes.
    #[arg(long, global = true, value_name = "FILE")]
    catalog: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse K prediction directories into labels, confidence and reliability rasters.
    Fuse(FuseArgs),
    /// Write the uncertainty map (unreliable pixels set to 255) of fused results.
    Uncertainty(UncertaintyArgs),
    /// Apply manual edits to the uncertainty maps and write final label maps.
    Merge(MergeArgs),
    /// Split label maps into 8-connected instances.
    Instances(InstancesArgs),
    /// Mean intersection-over-union of predictions against ground truth.
    EvalMiou(EvalMiouArgs),
    /// Instance average precision over IoU thresholds.
    EvalAp(EvalApArgs),
    /// Fraction of pixels on which two sets of label maps disagree.
    EvalDisagree(EvalDisagreeArgs),
    /// Class-weighted, per-class-normalized L1 distance between two images.
    MaskedL1(MaskedL1Args),
    /// Dataset statistics: manifest counts and per-class pixels, segments, instances.
    Stats(StatsArgs),
    /// Assign TRAIN/VAL/TEST splits with a seeded shuffle.
    Split(SplitArgs),
    /// Box-filter blur of face and plate regions.
    Blur(BlurArgs),
    /// Rank fusion weight vectors on a simplex grid by reliable-pixel fraction.
    WeightsSearch(WeightsSearchArgs),
    /// Run the annotation task HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
pub struct FuseArgs {
    /// Prediction directory of one method (`<id>.png`); repeat once per method, in weight order.
    #[arg(long = "pred", required = true, value_name = "DIR")]
    pub preds: Vec<PathBuf>,
    /// Comma-separated method weights summing to 1.
    #[arg(long, value_delimiter = ',', conflicts_with = "config", required_unless_present = "config")]
    pub weights: Vec<f64>,
    /// Reliability threshold; a pixel is reliable when its score is strictly above it.
    #[arg(long, default_value_t = segfuse_core::fusion::DEFAULT_ALPHA, conflicts_with = "config")]
    pub alpha: f64,
    /// Fusion config JSON (`methods`, `weights`, `alpha`, `tie_policy`).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory; one `<id>/` directory per image.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct UncertaintyArgs {
    /// Directory written by `fuse`.
    #[arg(long)]
    pub fused: PathBuf,
    /// Output directory for `<id>.png` uncertainty maps.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct MergeArgs {
    /// Directory written by `fuse`.
    #[arg(long)]
    pub fused: PathBuf,
    /// Directory of `<id>.json` edit lists (`[{"row", "col_start", "col_end", "label"}]`).
    #[arg(long)]
    pub edits: PathBuf,
    /// Output directory for `<id>.png` final label maps.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct InstancesArgs {
    /// Directory of `<id>.png` label maps.
    #[arg(long)]
    pub labels: PathBuf,
    /// Instance classes by name or id; defaults to people and vehicles.
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<String>,
    /// Directory of `<id>.json` merge/split edit lists.
    #[arg(long)]
    pub edits: Option<PathBuf>,
    /// Output directory for `<id>.png` (16-bit ids) and `<id>.json` tables.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalMiouArgs {
    /// Prediction directory, or with --grid a directory of `<train>/<test>/` subdirectories.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground truth directory, or with --grid a directory of `<test>/` subdirectories.
    #[arg(long)]
    pub gt: PathBuf,
    /// Evaluate every train/test pair and print a matrix of mIoU values.
    #[arg(long)]
    pub grid: bool,
    /// Label excluded from both maps.
    #[arg(long, default_value_t = segfuse_core::SENTINEL)]
    pub ignore: u8,
    /// Write the machine-readable report here.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalApArgs {
    /// Directory of predicted instance maps (`<id>.png` + `<id>.json`).
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth instance maps.
    #[arg(long)]
    pub gt: PathBuf,
    /// Comma-separated IoU thresholds; defaults to 0.50:0.05:0.95.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Vec<f64>,
    /// Classes to evaluate; defaults to people and vehicles.
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<String>,
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalDisagreeArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Labels ignored on either side.
    #[arg(long, value_delimiter = ',', default_value = "255")]
    pub exclude: Vec<u8>,
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct MaskedL1Args {
    /// First RGB image.
    #[arg(long)]
    pub x: PathBuf,
    /// Second RGB image.
    #[arg(long)]
    pub y: PathBuf,
    /// Label map shared by both images.
    #[arg(long)]
    pub labels: PathBuf,
    /// Taxonomy and projection JSON; defaults to the seven-label taxonomy.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct StatsArgs {
    /// Directory of `<id>.png` label maps.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Directory of instance maps matching the label maps.
    #[arg(long)]
    pub instances: Option<PathBuf>,
    /// Manifest to summarize.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Extra allowed weather tags.
    #[arg(long, value_delimiter = ',')]
    pub weather: Vec<String>,
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// TRAIN:VAL:TEST ratios.
    #[arg(long, default_value = "7:1:2", value_parser = util::parse_ratios)]
    pub ratios: [u32; 3],
    #[arg(long)]
    pub seed: u64,
    /// Output manifest; defaults to rewriting the input.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Extra allowed weather tags.
    #[arg(long, value_delimiter = ',')]
    pub weather: Vec<String>,
}

#[derive(Args)]
pub struct BlurArgs {
    /// Directory of `<id>.png` RGB images.
    #[arg(long)]
    pub images: PathBuf,
    /// Line-delimited box records (`image_id`, `row`, `col`, `height`, `width`, `kind`).
    #[arg(long)]
    pub boxes: PathBuf,
    /// Odd kernel size, or `auto` to scale with each box.
    #[arg(long, default_value = "auto")]
    pub kernel: segfuse_core::privacy::Kernel,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct WeightsSearchArgs {
    /// Prediction directory of one method; repeat once per method.
    #[arg(long = "pred", required = true, value_name = "DIR")]
    pub preds: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,
    #[arg(long, default_value_t = segfuse_core::fusion::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Rows to print.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct ServeArgs {
    /// Task store directory.
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory written by `fuse`.
    #[arg(long)]
    pub fused: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: std::net::SocketAddr,
    /// Instance classes by name or id; defaults to people and vehicles.
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<String>,
    /// Extra allowed weather tags.
    #[arg(long, value_delimiter = ',')]
    pub weather: Vec<String>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            anyhow::bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let catalog = util::load_catalog(cli.catalog.as_deref())?;
    match cli.command {
        Command::Fuse(a) => cmd::fusion::fuse(a, &catalog),
        Command::Uncertainty(a) => cmd::fusion::uncertainty(a, &catalog),
        Command::Merge(a) => cmd::fusion::merge(a, &catalog),
        Command::WeightsSearch(a) => cmd::fusion::weights_search(a, &catalog),
        Command::Instances(a) => cmd::data::instances(a, &catalog),
        Command::Split(a) => cmd::data::split(a),
        Command::Blur(a) => cmd::data::blur(a),
        Command::EvalMiou(a) => cmd::eval::miou(a, &catalog),
        Command::EvalAp(a) => cmd::eval::ap(a, &catalog),
        Command::EvalDisagree(a) => cmd::eval::disagree(a, &catalog),
        Command::MaskedL1(a) => cmd::eval::masked_l1(a, &catalog),
        Command::Stats(a) => cmd::eval::stats(a, &catalog),
        Command::Serve(a) => cmd::serve::serve(a, catalog),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
