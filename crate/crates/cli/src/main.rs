#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use frvs::model::Variant;

const TRAIN_DEFAULTS: &str = "\
Defaults:
  flag            value    meaning
  --lr            1e-4     Adam learning rate
  --beta1         0.9      Adam first-moment decay
  --beta2         0.999    Adam second-moment decay
  --adam-eps      1e-8     Adam epsilon
  --batch-size    4        views per iteration
  --iterations    12000    optimiser steps
  --alpha         0.001    weight of the flow smoothness term
  --max-disp      10·W/320 flow bound in pixels, W the training width
  --variant       full     full | no_depth | encdec
  --seed          0        initialisation and batch sampling";

#[derive(Parser, Debug)]
#[command(
    name = "frvs",
    version,
    about = "Depth-assisted novel view synthesis from a single image"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic layered light fields with ground truth.
    GenData(GenDataArgs),
    /// Train a model on a directory of light fields.
    #[command(after_help = TRAIN_DEFAULTS)]
    Train(TrainArgs),
    /// Synthesize one novel view.
    Synth(SynthArgs),
    /// Synthesize the 7×7 view grid and score it when ground truth exists.
    Grid(GridArgs),
    /// Shift-and-add refocusing over a list of slopes.
    Refocus(RefocusArgs),
    /// Run the finite-difference gradient suites.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Number of light fields.
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Image width and height in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Layers per scene, background included.
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4.0 / 3.0)]
    z_near: f64,
    #[arg(long, default_value_t = 4.0)]
    z_far: f64,
    /// Camera baseline per grid step.
    #[arg(long, default_value_t = 1.0)]
    baseline: f64,
    /// Focal depth: layers at this depth have zero disparity.
    #[arg(long, default_value_t = 2.0)]
    focal: f64,
    /// Views per side of the grid.
    #[arg(long, default_value_t = frvs::lightfield::DEFAULT_GRID)]
    grid: usize,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// A light-field directory, or a directory of them.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "full")]
    variant: Variant,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    adam_eps: f64,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 12000)]
    iterations: usize,
    #[arg(long, default_value_t = 0.001)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random crop as HxW, e.g. 48x48.
    #[arg(long, value_parser = parse_size)]
    crop: Option<(usize, usize)>,
    #[arg(long)]
    max_disp: Option<f64>,
    /// Output directory for model.frvs, model.state and the log.
    #[arg(long, short)]
    out: PathBuf,
    /// Write a checkpoint every N iterations (0: only at the end).
    #[arg(long, default_value_t = 1000)]
    checkpoint_every: usize,
    /// Continue from model.frvs and model.state in the output directory.
    #[arg(long)]
    resume: bool,
    /// Training log CSV (default: <out>/train_log.csv).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Print a progress line every N iterations (0: never).
    #[arg(long, default_value_t = 100)]
    print_every: usize,
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Light-field directory supplying the center view and depth.
    #[arg(long, conflicts_with_all = ["image", "depth"])]
    lightfield: Option<PathBuf>,
    /// Input image (PNG).
    #[arg(long, requires = "depth")]
    image: Option<PathBuf>,
    /// Relative depth in [0,1], 0 nearest: .pfm or 8-bit grayscale PNG.
    /// It must come from an external depth estimator.
    #[arg(long, requires = "image")]
    depth: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// Horizontal offset in grid steps, within [-3, 3].
    #[arg(long, short, allow_hyphen_values = true)]
    u: f64,
    /// Vertical offset in grid steps, within [-3, 3].
    #[arg(long, short, allow_hyphen_values = true)]
    v: f64,
    /// Output PNG; the flow is written next to it with a .flo extension.
    #[arg(long, short)]
    out: PathBuf,
    /// Also write a colour-wheel rendering of the flow.
    #[arg(long)]
    flow_png: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long, required_unless_present = "baseline")]
    checkpoint: Option<PathBuf>,
    /// Score a reference predictor instead of a model.
    #[arg(long, value_enum, conflicts_with = "checkpoint")]
    baseline: Option<Baseline>,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum Baseline {
    /// Every view is the center view.
    CopyCenter,
    /// Warp the center by the ground-truth flow.
    GtFlow,
}

#[derive(Args, Debug)]
struct RefocusArgs {
    /// Synthesize the light field with this model instead of reading one.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
    /// Comma-separated slopes in pixels per grid step.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required_unless_present = "sweep"
    )]
    slopes: Vec<f64>,
    /// Evenly spaced slopes as START:END:STEP.
    #[arg(long, conflicts_with = "slopes", allow_hyphen_values = true)]
    sweep: Option<String>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Only suites whose name starts with one of these (comma-separated).
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
    /// List the suites and exit.
    #[arg(long)]
    list: bool,
    #[arg(long, default_value_t = 8)]
    probes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Negative control: break one backward rule.
    #[arg(long, hide = true)]
    inject_bug: bool,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height {h:?}"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width {w:?}"))?;
    if h == 0 || w == 0 {
        return Err("crop must be non-empty".into());
    }
    Ok((h, w))
}

pub(crate) fn parse_sweep(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("expected START:END:STEP, got {s:?}"))?;
    let [start, end, step] = parts[..] else {
        return Err(format!("expected START:END:STEP, got {s:?}"));
    };
    if !(step > 0.0) || !(end >= start) || !start.is_finite() || !end.is_finite() {
        return Err("sweep needs STEP > 0 and END >= START".into());
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

/// Exit statuses.
const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_VERIFY: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = if e.is::<commands::UsageError>() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            };
            ExitCode::from(code)
        }
    }
}
