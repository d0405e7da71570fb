//! `endorecon`: synthetic data, training, rendering, meshing and simulation.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "endorecon", version, about = "Deformable tissue reconstruction pipeline")]
struct Cli {
    /// Run every loop on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic textured, deforming scene with a moving tool occluder.
    Synth(SynthArgs),
    /// Fit the dynamic field to a dataset directory.
    Train(TrainArgs),
    /// Render color and depth of a checkpoint at one time stamp.
    Render(RenderArgs),
    /// Render depth at one time stamp and triangulate it into an open surface.
    ExtractMesh(ExtractArgs),
    /// Close an open surface with a base plane and report watertightness.
    CloseMesh(CloseArgs),
    /// Fill a closed mesh with particles and run the elastic simulation.
    Simulate(SimulateArgs),
    /// Score a checkpoint against a dataset (PSNR, SSIM, depth error).
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Scene configuration (TOML); defaults otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Training configuration (TOML); defaults otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory: model.ckpt, model.json (intrinsics, sampling, history),
    /// metrics.csv and periodic checkpoint_<step>.ckpt files.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct RenderArgs {
    /// Checkpoint file or training directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Normalized time in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    pub time: f64,
    /// Output directory for rgb.png, depth.png and render.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset whose intrinsics to use instead of the checkpoint sidecar.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub time: f64,
    /// Output PLY.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Pixels rendered with lower opacity are dropped.
    #[arg(long, default_value_t = 0.5)]
    pub min_opacity: f64,
}

#[derive(Args)]
pub struct CloseArgs {
    /// Open surface (PLY).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Depth of the base plane.
    #[arg(long, conflicts_with = "offset")]
    pub thickness: Option<f64>,
    /// Base plane this far beyond the deepest boundary vertex of each component.
    #[arg(long)]
    pub offset: Option<f64>,
    #[arg(long, default_value_t = 1e-9)]
    pub weld_epsilon: f64,
    /// Closed mesh (PLY).
    #[arg(long)]
    pub out: PathBuf,
    /// Watertightness report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Closed mesh (PLY), camera frame.
    #[arg(long)]
    pub mesh: PathBuf,
    /// Material (TOML): youngs_modulus, poisson_ratio, density.
    #[arg(long)]
    pub material: Option<PathBuf>,
    /// Solver options (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Press a sphere into the top of the tissue and withdraw it.
    #[arg(long)]
    pub probe: bool,
    /// Also write one PLY point cloud per snapshot.
    #[arg(long)]
    pub ply: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated frame indices; all frames when omitted.
    #[arg(long, value_delimiter = ',')]
    pub frames: Vec<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Report (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential {
        endorecon_core::par::Exec::Sequential
    } else {
        endorecon_core::par::Exec::Parallel
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a, exec),
        Command::Render(a) => commands::render(&a, exec),
        Command::ExtractMesh(a) => commands::extract_mesh(&a, exec),
        Command::CloseMesh(a) => commands::close_mesh(&a),
        Command::Simulate(a) => commands::simulate(&a, exec),
        Command::Evaluate(a) => commands::evaluate(&a, exec),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .chain()
                .filter_map(|c| c.downcast_ref::<endorecon_core::Error>())
                .any(|c| c.is_numerical());
            ExitCode::from(if numerical { 3 } else { 2 })
        }
    }
}
