//! `anomaly-forge`: simulate anomalies, generate pre-training masks, run the
//! kernel self-checks, and score detectors.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

mod check;
mod eval;
mod mask;
mod noise;
mod simulate;

const THREADS_ENV: &str = "ANOMALY_FORGE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "anomaly-forge", version, about = "Anomaly simulation, masking, kernel checks and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Composite simulated anomalies onto a directory of normal images.
    Simulate(SimulateArgs),
    /// Grid and large-rectangle masks for generative pre-training.
    Mask(MaskArgs),
    /// Shape, invariant and finite-difference checks of the SG block and losses.
    SgCheck(SgCheckArgs),
    /// Image ROC-AUC, pixel ROC-AUC and sPRO-AUC of score maps.
    Eval(EvalArgs),
    /// Dump Perlin fields and their binarized masks.
    Noise(NoiseArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BranchArg {
    Structural,
    Logical,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ShapeArg {
    Perlin,
    Rect,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Directory of normal PNG images; `<stem>_fg.png` files are foreground masks.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Total samples; images are cycled in name order. Defaults to one per image.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, value_enum, default_value_t = BranchArg::Mixed)]
    branch: BranchArg,
    #[arg(long, default_value_t = 0.3)]
    delta_min: f64,
    #[arg(long, default_value_t = 1.0)]
    delta_max: f64,
    /// Textures for the structural branch, used for half the structural samples.
    #[arg(long)]
    texture_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ShapeArg::Perlin)]
    mask_shape: ShapeArg,
}

#[derive(Debug, Args)]
struct MaskArgs {
    /// A PNG file or a directory of them.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    patch: usize,
    #[arg(long, default_value_t = 0.8)]
    ratio: f64,
    #[arg(long, default_value_t = 1)]
    large_count: usize,
    #[arg(long, default_value_t = 40)]
    large_min: usize,
    #[arg(long, default_value_t = 150)]
    large_max: usize,
    /// Value written into masked pixels, in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    fill: f64,
}

#[derive(Debug, Args)]
struct SgCheckArgs {
    /// Random instances per check.
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fixed neighbor count for the block checks.
    #[arg(long)]
    topk: Option<usize>,
    /// Select neighbors by semantic similarity alone.
    #[arg(long)]
    no_eliminate_ps: bool,
    /// Write the neighbor graph of a 16x16 demo input as JSON.
    #[arg(long)]
    dump_graph: Option<PathBuf>,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Score maps: `<stem>.png` (8/16-bit gray) or `<stem>.bin` float32 with a `<stem>.json` sidecar.
    #[arg(long)]
    input: PathBuf,
    /// Ground-truth label PNGs; 0 is normal, each other value is one region.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON object mapping region label to saturation area in pixels.
    #[arg(long)]
    regions: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    fpr_limit: f64,
    #[arg(long, default_value_t = 100)]
    top_n: usize,
    #[arg(long, default_value_t = 200)]
    thresholds: usize,
}

#[derive(Debug, Args)]
struct NoiseArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 8.0)]
    freq: f64,
    /// Binarization threshold as a fraction of the field maximum.
    #[arg(long, default_value_t = 0.3)]
    threshold: f64,
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    anyhow::ensure!(n > 0, "{THREADS_ENV} must be a positive integer, got {raw:?}");
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    init_threads()?;
    match cli.command {
        Command::Simulate(a) => simulate::run(&a).map(|()| ExitCode::SUCCESS),
        Command::Mask(a) => mask::run(&a).map(|()| ExitCode::SUCCESS),
        Command::SgCheck(a) => check::run(&a),
        Command::Eval(a) => eval::run(&a).map(|()| ExitCode::SUCCESS),
        Command::Noise(a) => noise::run(&a).map(|()| ExitCode::SUCCESS),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
