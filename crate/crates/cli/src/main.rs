mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use curvesplat::degrade::Profile;
use curvesplat::trainer::{Method, Scenario};

use config::ViewSet;

/// Bad flags, config keys or values: exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A numerical check failed: exit code 3.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

/// Curve-based photometric and chromatic correction for Gaussian-splat
/// novel view synthesis.
///
/// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
#[derive(Parser, Debug)]
#[command(name = "curvesplat", version)]
struct Cli {
    /// TOML or JSON run configuration with sections scene, degrade, train
    /// and eval. Flags override file keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a procedural desk-scale scene (backdrop wall, random objects,
    /// cameras on an arc).
    DemoScene(DemoSceneArgs),
    /// Render clean views of a scene and degrade them per a profile.
    Synth(SynthArgs),
    /// Train on the degraded views of a synthesized dataset.
    Train(TrainArgs),
    /// Render novel views from a checkpoint.
    Render(RenderArgs),
    /// PSNR/SSIM of rendered images against ground truth.
    Eval(EvalArgs),
    /// Finite-difference check of every differentiable op.
    Gradcheck(GradcheckArgs),
    /// Write the learned tone curves of each training view as CSV.
    ExportCurves(ExportCurvesArgs),
}

#[derive(Args, Debug)]
struct DemoSceneArgs {
    /// Output directory (receives scene.json).
    #[arg(long)]
    out: PathBuf,
    /// Image width and height in pixels.
    #[arg(long)]
    size: Option<usize>,
    /// Backdrop Gaussians per side.
    #[arg(long)]
    wall_grid: Option<usize>,
    /// Number of random foreground Gaussians.
    #[arg(long)]
    objects: Option<usize>,
    /// Training cameras.
    #[arg(long)]
    train_views: Option<usize>,
    /// Held-out cameras.
    #[arg(long)]
    held_out_views: Option<usize>,
    /// Half-angle of the camera arc in degrees.
    #[arg(long)]
    arc_degrees: Option<f64>,
    /// Scene seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Scene file (JSON).
    #[arg(long)]
    scene: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Degradation profile: none, low-light, overexposure, varying, cool,
    /// warm, mixed-temp, mixed-all.
    #[arg(long, value_parser = parse_profile)]
    profile: Option<Profile>,
    /// Degradation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory of clean `view_XXX.png` images to degrade instead of
    /// rendering the scene.
    #[arg(long)]
    clean: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    data: PathBuf,
    /// Output directory (checkpoint.json, loss.csv, config.json).
    #[arg(long)]
    out: PathBuf,
    /// Total iteration count.
    #[arg(long)]
    iterations: Option<usize>,
    /// Training seed (network initialization).
    #[arg(long)]
    seed: Option<u64>,
    /// full (dual colors + pseudo-enhancement) or baseline (plain
    /// reconstruction of the degraded views).
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// lightness, color or mixed; defaults to the dataset's profile.
    #[arg(long, value_parser = parse_scenario)]
    scenario: Option<Scenario>,
    /// Color-constancy loss weight (overrides the scenario default).
    #[arg(long)]
    eta: Option<f64>,
    /// SSIM weight in the reconstruction losses.
    #[arg(long)]
    lambda: Option<f64>,
    /// Also optimize means, scales and rotations.
    #[arg(long)]
    optimize_geometry: bool,
    /// Write checkpoint.json every N iterations as well as at the end.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Continue from this checkpoint (its configuration is kept; only
    /// --iterations applies).
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory (cameras, and degraded views for --dump-residual).
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Which cameras to render.
    #[arg(long, value_enum)]
    views: Option<ViewSet>,
    /// Also write each training view's residual map as `residual_XXX.png`
    /// (0.5 + residual).
    #[arg(long)]
    dump_residual: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory of rendered `*.png`.
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth `*.png` with matching names.
    #[arg(long)]
    gt: PathBuf,
    /// Output directory (metrics.csv, metrics.json).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Output directory (gradcheck.csv).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExportCurvesArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset the checkpoint was trained on.
    #[arg(long)]
    data: PathBuf,
    /// Output directory (curves_XXX.csv per training view).
    #[arg(long)]
    out: PathBuf,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: curvesplat::Error| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: curvesplat::Error| e.to_string())
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse().map_err(|e: curvesplat::Error| e.to_string())
}

/// Maps an error chain to the documented exit codes.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.is::<NumericalFailure>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<curvesplat::Error>() {
            return match e {
                _ if e.is_numerical() => 3,
                curvesplat::Error::InvalidConfig(_) | curvesplat::Error::UnknownProfile(_) => 1,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already fold their source into the message.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
