use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "tfield", version, about = "Simulate, fit and render transient fields of propagating light")]
pub struct Cli {
    /// Overrides the seed of the command's config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// TOML file with [grid], [render], [train] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a multi-view transient dataset from an analytic scene.
    Simulate(SimulateArgs),
    /// Fit a transient field grid to a dataset.
    Train(TrainArgs),
    /// Render frames, slices or peak-time images from a checkpoint.
    Render(RenderArgs),
    /// Render a time-warped video from a checkpoint.
    Warp(WarpArgs),
    /// Split a transient video into direct and global parts.
    Separate(SeparateArgs),
    /// Score a checkpoint on held-out views.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub cameras: PathBuf,
    /// File with the [spad] block; defaults to the scene file.
    #[arg(long)]
    pub spad: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Store expected counts instead of Poisson draws.
    #[arg(long)]
    pub noiseless: bool,
    /// Skip the indirect bounce.
    #[arg(long)]
    pub direct_only: bool,
    /// Strata per axis of the indirect gather.
    #[arg(long, default_value_t = 16)]
    pub indirect_strata: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Render without the camera propagation delay.
    #[arg(long)]
    pub no_propagation_delay: bool,
    /// Continue from the checkpoint in --out.
    #[arg(long)]
    pub resume: bool,
    /// Stop (and checkpoint) after this many total iterations.
    #[arg(long)]
    pub stop_after: Option<usize>,
    /// Overrides the configured iteration count.
    #[arg(long)]
    pub iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSON camera, or a list of cameras for --dynamic.
    #[arg(long)]
    pub camera: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Treat the camera file as a trajectory with one pose per time bin.
    #[arg(long)]
    pub dynamic: bool,
    /// Write only bin N as one grayscale image.
    #[arg(long)]
    pub slice: Option<usize>,
    /// Write a peak-time image.
    #[arg(long)]
    pub peak_time: bool,
    #[arg(long, default_value_t = 16)]
    pub isochrone_period: usize,
    /// Blend each frame over the tonemapped integrated image.
    #[arg(long)]
    pub composite: bool,
    /// Also write the linear transient video as video.trv.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct WarpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Reference sphere `cx,cy,cz,r`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, conflicts_with = "plane")]
    pub sphere: Option<Vec<f64>>,
    /// Reference plane `nx,ny,nz,offset`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub plane: Option<Vec<f64>>,
    /// Add the delay instead of removing it.
    #[arg(long)]
    pub add_delay: bool,
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    /// Input TRV1 video.
    #[arg(long)]
    pub video: PathBuf,
    /// Laser pulse FWHM in bins.
    #[arg(long)]
    pub fwhm_bins: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Compare linear values (undo the gamma compression) instead of compressed ones.
    #[arg(long)]
    pub undo_gamma: bool,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
}
