//! Command-line front end: synthesize, fit, render, adapt and evaluate.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use styletrf::style::Strategy;

use crate::config::{RenderFlags, SpiralFlags, Stylizer, SynthFlags};
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "styletrf", version, about = "Factored radiance fields with view-consistent style adaptation")]
struct Cli {
    /// Worker threads (defaults to every core)
    #[arg(long, global = true, env = "STYLETRF_THREADS")]
    threads: Option<usize>,

    /// Suppress progress output
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic primitive scene as a posed-image dataset
    #[command(after_long_help = SYNTH_KEYS)]
    Synth(SynthArgs),
    /// Fit a factored grid to a dataset
    #[command(after_long_help = FIT_KEYS)]
    Fit(FitArgs),
    /// Render a checkpoint from dataset views, a spiral or a prior manifest
    #[command(after_long_help = RENDER_KEYS)]
    Render(RenderArgs),
    /// Fine-tune a checkpoint on stylized priors
    #[command(after_long_help = ADAPT_KEYS)]
    Adapt(AdaptArgs),
    /// Score the temporal consistency of a styled checkpoint along a path
    #[command(after_long_help = EVAL_KEYS)]
    Eval(EvalArgs),
}

const SYNTH_KEYS: &str = "Config keys (TOML or JSON; flags override the file, the file overrides defaults):
  scene.seed scene.primitives scene.background scene.aabb.min scene.aabb.max
  views.n_train views.n_test views.width views.height views.camera_distance
  views.fov_x views.near views.far
scene.primitives and scene.aabb are set through the config file only.";

const FIT_KEYS: &str = "Config keys (TOML or JSON; flags override the file, the file overrides defaults):
  total_iters rays_per_iter lr_init beta1 beta2 adam_eps
  grid.resolution grid.density_rank grid.appearance_rank grid.sh_degree
  upsample_schedule final_resolution tv_weight l1_weight seed
  render.samples_per_ray render.near render.far render.background
  render.stratified_jitter render.seed
A run manifest (`*.run.json`) is also accepted as a config file.";

const RENDER_KEYS: &str = "Config keys (TOML or JSON; flags override the file, the file overrides defaults):
  split reference_view spiral stylizer stylizer_seed
  trajectory.n_views trajectory.radius trajectory.n_turns trajectory.focus_distance
  trajectory.advance
  render.samples_per_ray render.near render.far render.background
  render.stratified_jitter render.seed";

const ADAPT_KEYS: &str = "Config keys (TOML or JSON; flags override the file, the file overrides defaults):
  strategy adapt.iters adapt.lr adapt.rays_per_iter adapt.beta1 adapt.beta2
  adapt.adam_eps adapt.tv_weight adapt.l1_weight adapt.seed
  adapt.render.samples_per_ray adapt.render.near adapt.render.far
  adapt.render.background adapt.render.stratified_jitter adapt.render.seed";

const EVAL_KEYS: &str = "Config keys (TOML or JSON; flags override the file, the file overrides defaults):
  split reference_view deltas
  trajectory.n_views trajectory.radius trajectory.n_turns trajectory.focus_distance
  trajectory.advance
  render.samples_per_ray render.near render.far render.background
  render.stratified_jitter render.seed";

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// Config file (.toml or .json)
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: SynthFlags,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// 2000 iterations, 1024 rays, 32^3 growing to 64^3
    Desk,
    /// 15000 iterations, 4096 rays, 128^3 growing to --final-resolution (default 300)
    Paper,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint
    #[arg(long)]
    out: PathBuf,
    /// Config file (.toml or .json)
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in defaults to start from
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Optimization iterations [total_iters]
    #[arg(long)]
    iters: Option<usize>,
    /// Rays per iteration [rays_per_iter]
    #[arg(long)]
    rays: Option<usize>,
    /// Adam learning rate [lr_init]
    #[arg(long)]
    lr: Option<f64>,
    /// Adam first-moment decay [beta1]
    #[arg(long)]
    beta1: Option<f64>,
    /// Adam second-moment decay [beta2]
    #[arg(long)]
    beta2: Option<f64>,
    /// Adam epsilon [adam_eps]
    #[arg(long)]
    adam_eps: Option<f64>,
    /// Starting resolution, N or X,Y,Z [grid.resolution]
    #[arg(long, value_delimiter = ',', num_args = 1)]
    resolution: Option<Vec<usize>>,
    /// Density components per mode [grid.density_rank]
    #[arg(long)]
    density_rank: Option<usize>,
    /// Appearance components per mode [grid.appearance_rank]
    #[arg(long)]
    appearance_rank: Option<usize>,
    /// Spherical-harmonics degree, 0 to 3 [grid.sh_degree]
    #[arg(long)]
    sh_degree: Option<usize>,
    /// Upsampling steps as ITER:N or ITER:XxYxZ, comma separated [upsample_schedule]
    #[arg(long, value_delimiter = ',', num_args = 1)]
    upsample_schedule: Option<Vec<String>>,
    /// Final resolution, N or X,Y,Z [final_resolution]
    #[arg(long, value_delimiter = ',', num_args = 1)]
    final_resolution: Option<Vec<usize>>,
    /// Total-variation weight [tv_weight]
    #[arg(long)]
    tv_weight: Option<f64>,
    /// L1 sparsity weight [l1_weight]
    #[arg(long)]
    l1_weight: Option<f64>,
    /// Seed for initialization, ray order and jitter [seed]
    #[arg(long)]
    seed: Option<u64>,
    /// Print the resolved config as JSON and exit without fitting
    #[arg(long)]
    dry_run: bool,
    #[command(flatten)]
    render: RenderFlags,
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Checkpoint to render
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory for frames, depth buffers and the pose manifest
    #[arg(long)]
    out: PathBuf,
    /// Dataset supplying cameras
    #[arg(long, required_unless_present = "cameras", conflicts_with = "cameras")]
    data: Option<PathBuf>,
    /// Pose manifest supplying cameras
    #[arg(long)]
    cameras: Option<PathBuf>,
    /// Config file (.toml or .json)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset split to take cameras from [split]
    #[arg(long)]
    split: Option<String>,
    /// Reference view of the split for spirals [reference_view]
    #[arg(long)]
    view: Option<usize>,
    /// Render a spiral around the reference view instead of every split view [spiral]
    #[arg(long)]
    spiral: Option<bool>,
    #[command(flatten)]
    trajectory: SpiralFlags,
    /// Stand-in stylizer applied to a copy of the frames [stylizer]
    #[arg(long, value_enum)]
    stylizer: Option<Stylizer>,
    /// Seed of the stand-in stylizer [stylizer_seed]
    #[arg(long)]
    stylizer_seed: Option<u64>,
    /// Directory for stylized copies (default: sibling `<out>_styled`)
    #[arg(long)]
    styled_out: Option<PathBuf>,
    #[command(flatten)]
    render: RenderFlags,
}

#[derive(Args, Debug)]
struct AdaptArgs {
    /// Pre-fitted checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Prior directory holding manifest.json
    #[arg(long)]
    priors: PathBuf,
    /// Stylized images with the prior file names (default: sibling `<priors>_styled`)
    #[arg(long)]
    styled: Option<PathBuf>,
    /// Output checkpoint
    #[arg(long)]
    out: PathBuf,
    /// Config file (.toml or .json)
    #[arg(long)]
    config: Option<PathBuf>,
    /// S1 fresh grid, S2 all parameters, S3 density frozen [strategy]
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Optimization iterations [adapt.iters]
    #[arg(long)]
    iters: Option<usize>,
    /// Adam learning rate [adapt.lr]
    #[arg(long)]
    lr: Option<f64>,
    /// Rays per iteration [adapt.rays_per_iter]
    #[arg(long)]
    rays: Option<usize>,
    /// Adam first-moment decay [adapt.beta1]
    #[arg(long)]
    beta1: Option<f64>,
    /// Adam second-moment decay [adapt.beta2]
    #[arg(long)]
    beta2: Option<f64>,
    /// Adam epsilon [adapt.adam_eps]
    #[arg(long)]
    adam_eps: Option<f64>,
    /// Total-variation weight [adapt.tv_weight]
    #[arg(long)]
    tv_weight: Option<f64>,
    /// L1 sparsity weight [adapt.l1_weight]
    #[arg(long)]
    l1_weight: Option<f64>,
    /// Seed for ray order, jitter and S1 initialization [adapt.seed]
    #[arg(long)]
    seed: Option<u64>,
    /// Synthetic dataset whose ground-truth depth scores the result
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    render: RenderFlags,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint of the unstyled scene (source of flow)
    #[arg(long)]
    real: PathBuf,
    /// Checkpoint of the styled scene
    #[arg(long)]
    styled: PathBuf,
    /// Dataset supplying the reference camera
    #[arg(long, required_unless_present = "cameras", conflicts_with = "cameras")]
    data: Option<PathBuf>,
    /// Pose manifest giving the trajectory
    #[arg(long)]
    cameras: Option<PathBuf>,
    /// Output report (JSON)
    #[arg(long)]
    out: PathBuf,
    /// Config file (.toml or .json)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset split of the reference camera [split]
    #[arg(long)]
    split: Option<String>,
    /// Reference view index [reference_view]
    #[arg(long)]
    view: Option<usize>,
    /// Frame offsets to score, comma separated [deltas]
    #[arg(long, value_delimiter = ',', num_args = 1)]
    deltas: Option<Vec<usize>>,
    /// Directory of .flo files replacing reprojection flow
    #[arg(long)]
    flow_dir: Option<PathBuf>,
    /// Directory receiving the scored frames and flows
    #[arg(long)]
    dump: Option<PathBuf>,
    #[command(flatten)]
    trajectory: SpiralFlags,
    #[command(flatten)]
    render: RenderFlags,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot set up {n} threads: {e}")))?;
    }
    let quiet = cli.quiet;
    match cli.command {
        Command::Synth(a) => commands::synth(a, quiet),
        Command::Fit(a) => commands::fit(a, quiet),
        Command::Render(a) => commands::render(a, quiet),
        Command::Adapt(a) => commands::adapt(a, quiet),
        Command::Eval(a) => commands::eval(a, quiet),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
