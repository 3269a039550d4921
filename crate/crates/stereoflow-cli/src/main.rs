//! `stereoflow`: render synthetic stereo scenes, align poses, segment
//! motion, score losses, and evaluate predictions from the command line.
//!
//! Every command reads and writes the formats in `stereoflow::formats`,
//! writes output files atomically, and is bit-deterministic: the same
//! inputs produce byte-identical outputs, whatever the thread count.
//! Failures print a one-line diagnostic naming the offending input and
//! exit with a code that identifies the error class (see `exit_code`).

mod viz;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use stereoflow::error::{Error, Result};
use stereoflow::eval::{
    depth_metrics_with, flow_metrics, odometry_metrics, seg_metrics, AteMode, FlowMaskSet,
    EVAL_FORMAT_VERSION,
};
use stereoflow::formats::{
    read_depth_pfm, read_disparity_pfm, read_flow_png, read_image_png, read_intrinsics,
    read_mask_png, read_pose_file, write_flow_png, write_image_png, write_json,
    write_mask_png, write_pose_file,
};
use stereoflow::geometry::PoseSE3;
use stereoflow::losses::{total_loss, LossInputs, LossWeights};
use stereoflow::raster::Mask;
use stereoflow::rigid::{refine_pose_with, rigid_flow, AlignOptions};
use stereoflow::segmentation::{motion_mask, SegmentationParams};
use stereoflow::synth::{export, render_with_threads, SceneConfig};

#[derive(Parser)]
#[command(name = "stereoflow", version, about = "Stereo-video rigid-motion pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene with ground truth into a directory.
    Synth(SynthArgs),
    /// Flow induced by a camera pose over a depth map.
    RigidFlow(RigidFlowArgs),
    /// Refine a camera pose against observed flow and two depth maps.
    Align(AlignArgs),
    /// Mask pixels whose flow departs from the rigid prediction.
    Segment(SegmentArgs),
    /// Score the full training objective on prepared inputs.
    Loss(LossArgs),
    /// Benchmark predictions against ground truth.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Render a flow field as a color image.
    FlowViz(FlowVizArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scene description (TOML).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Output directory for the rendered rasters.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Worker threads for rendering; the output bytes do not depend on it.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct RigidFlowArgs {
    /// Depth map (PFM).
    #[arg(long, value_name = "FILE")]
    depth: PathBuf,
    /// Pose file; the first pose maps frame-1 points into frame 2.
    #[arg(long, value_name = "FILE")]
    pose: PathBuf,
    /// Intrinsics file `fx fy cx cy width height [baseline]`.
    #[arg(long, value_name = "FILE")]
    intrinsics: PathBuf,
    /// Output flow (16-bit PNG).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct AlignArgs {
    /// First-frame depth (PFM).
    #[arg(long, value_name = "FILE")]
    depth1: PathBuf,
    /// Second-frame depth (PFM).
    #[arg(long, value_name = "FILE")]
    depth2: PathBuf,
    /// Observed frame-1 to frame-2 flow (16-bit PNG).
    #[arg(long, value_name = "FILE")]
    flow: PathBuf,
    /// Intrinsics file.
    #[arg(long, value_name = "FILE")]
    intrinsics: PathBuf,
    /// Initial pose estimate.
    #[arg(long, value_name = "FILE")]
    pose_init: PathBuf,
    /// Mask of pixels visible in frame 2 (PNG); all pixels when absent.
    #[arg(long, value_name = "FILE")]
    occlusion: Option<PathBuf>,
    /// Fraction of best-residual pixels the fit keeps.
    #[arg(long, default_value_t = 0.25)]
    region_fraction: f64,
    /// Select-and-align passes.
    #[arg(long, default_value_t = 1)]
    iterations: usize,
    /// Refined pose output.
    #[arg(long, value_name = "FILE")]
    out_pose: PathBuf,
    /// Optional JSON report (residuals and region size).
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

/// JSON sidecar of an `align` run.
#[derive(Serialize)]
struct AlignReport {
    format_version: u32,
    rms_before: f64,
    rms_after: f64,
    region_pixels: usize,
    total_pixels: usize,
    region_coverage: f64,
}

#[derive(Args)]
struct SegmentArgs {
    /// Observed flow (16-bit PNG).
    #[arg(long, value_name = "FILE")]
    flow: PathBuf,
    /// Rigid flow to compare against (16-bit PNG).
    #[arg(long, value_name = "FILE")]
    rigid_flow: PathBuf,
    /// Mask of pixels visible in frame 2 (PNG).
    #[arg(long, value_name = "FILE")]
    occlusion: PathBuf,
    /// Flow-difference threshold in pixels (strictly exceeded = moving).
    #[arg(long, default_value_t = 3.0)]
    delta: f64,
    /// Output motion mask (PNG).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct LossArgs {
    #[arg(long, value_name = "FILE")]
    left1: PathBuf,
    #[arg(long, value_name = "FILE")]
    left2: PathBuf,
    #[arg(long, value_name = "FILE")]
    right1: PathBuf,
    /// Left-view disparity (PFM; zeros are invalid).
    #[arg(long, value_name = "FILE")]
    disp_left: PathBuf,
    /// Right-view disparity (PFM).
    #[arg(long, value_name = "FILE")]
    disp_right: PathBuf,
    /// Optical flow, frame 1 to 2 (16-bit PNG).
    #[arg(long, value_name = "FILE")]
    flow: PathBuf,
    /// Rigid flow from the initial pose.
    #[arg(long, value_name = "FILE")]
    rigid_flow: PathBuf,
    /// Rigid flow from the refined pose.
    #[arg(long, value_name = "FILE")]
    rigid_flow_refined: PathBuf,
    /// Mask of pixels visible in frame 2.
    #[arg(long, value_name = "FILE")]
    occlusion: PathBuf,
    /// Optional motion mask; masked pixels leave the consistency term.
    #[arg(long, value_name = "FILE")]
    moving: Option<PathBuf>,
    /// SSIM-vs-L1 mix of the photometric terms.
    #[arg(long, default_value_t = 0.85)]
    alpha: f64,
    /// Edge damping strength of the smoothness terms.
    #[arg(long, default_value_t = 10.0)]
    beta: f64,
    #[arg(long, default_value_t = 10.0)]
    lambda_smooth: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_stereo: f64,
    #[arg(long, default_value_t = 10.0)]
    lambda_rigid: f64,
    #[arg(long, default_value_t = 0.01)]
    lambda_consistency: f64,
    /// Output report (JSON).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// End-point error and outlier rate of a predicted flow.
    Flow(EvalFlowArgs),
    /// Scale-aware depth errors and threshold accuracies.
    Depth(EvalDepthArgs),
    /// Snippet ATE and long-range drift of a trajectory.
    Odometry(EvalOdomArgs),
    /// Two-class segmentation accuracy and IoU.
    Segmentation(EvalSegArgs),
}

#[derive(Args)]
struct EvalFlowArgs {
    /// Predicted flow (16-bit PNG).
    #[arg(long, value_name = "FILE")]
    pred: PathBuf,
    /// Ground-truth flow (16-bit PNG).
    #[arg(long, value_name = "FILE")]
    gt: PathBuf,
    /// Pixels to score; defaults to where both files are valid.
    #[arg(long, value_name = "FILE")]
    valid: Option<PathBuf>,
    /// Non-occluded pixels; defaults to all.
    #[arg(long, value_name = "FILE")]
    noc: Option<PathBuf>,
    /// Occluded pixels; defaults to the complement of the non-occluded set.
    #[arg(long, value_name = "FILE")]
    occ: Option<PathBuf>,
    /// Independently moving pixels; defaults to none.
    #[arg(long, value_name = "FILE")]
    moving: Option<PathBuf>,
    /// Static pixels; defaults to the complement of the moving set.
    #[arg(long = "static", value_name = "FILE")]
    stationary: Option<PathBuf>,
    /// Output report (JSON).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalDepthArgs {
    /// Predicted depth (PFM).
    #[arg(long, value_name = "FILE")]
    pred: PathBuf,
    /// Ground-truth depth (PFM).
    #[arg(long, value_name = "FILE")]
    gt: PathBuf,
    /// Depth cap in meters; both maps clamp to [1e-3, cap].
    #[arg(long, default_value_t = 80.0)]
    cap: f64,
    /// Intrinsics with baseline; enables the disparity outlier rate.
    #[arg(long, value_name = "FILE")]
    intrinsics: Option<PathBuf>,
    /// Output report (JSON).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AteModeArg {
    /// Root-mean-square of the snippet residuals.
    Rmse,
    /// Mean residual norm.
    MeanOfNorms,
}

#[derive(Args)]
struct EvalOdomArgs {
    /// Predicted camera-to-world trajectory (pose file).
    #[arg(long, value_name = "FILE")]
    pred: PathBuf,
    /// Ground-truth camera-to-world trajectory (pose file).
    #[arg(long, value_name = "FILE")]
    gt: PathBuf,
    /// Snippet error reduction.
    #[arg(long, value_enum, default_value_t = AteModeArg::Rmse)]
    ate_mode: AteModeArg,
    /// Output report (JSON).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalSegArgs {
    /// Predicted mask (PNG).
    #[arg(long, value_name = "FILE")]
    pred: PathBuf,
    /// Ground-truth mask (PNG).
    #[arg(long, value_name = "FILE")]
    gt: PathBuf,
    /// Output report (JSON).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct FlowVizArgs {
    /// Flow to render (16-bit PNG).
    #[arg(long, value_name = "FILE")]
    flow: PathBuf,
    /// Output image (PNG).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Magnitude mapped to full saturation; the field's own maximum when
    /// absent.
    #[arg(long)]
    max_flow: Option<f64>,
}

/// Maps each error class to a distinct exit code. Usage errors exit 2 (via
/// clap); success exits 0.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) | Error::UnsupportedGradient { .. } => 10,
        Error::Format { .. } => 11,
        Error::Io(_) => 12,
        Error::DimensionMismatch { .. } => 13,
        Error::EmptyRegion
        | Error::DegenerateRegion { .. }
        | Error::SingularConfiguration
        | Error::EmptySupport(_) => 14,
        Error::NoCoverage { .. } => 15,
    }
}

fn first_pose(path: &PathBuf) -> Result<PoseSE3> {
    let poses = read_pose_file(path)?;
    poses.into_iter().next().ok_or_else(|| Error::Format {
        format: "pose",
        path: path.display().to_string(),
        message: "file contains no poses".into(),
    })
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    let config = SceneConfig::load(&args.config)?;
    let sample = render_with_threads(&config, args.threads)?;
    export(&sample, &args.out)
}

fn run_rigid_flow(args: &RigidFlowArgs) -> Result<()> {
    let depth = read_depth_pfm(&args.depth)?;
    let pose = first_pose(&args.pose)?;
    let (k, _) = read_intrinsics(&args.intrinsics)?;
    let (flow, validity) = rigid_flow(&depth, &pose, &k)?;
    write_flow_png(&args.out, &flow, &validity)
}

fn run_align(args: &AlignArgs) -> Result<()> {
    let depth1 = read_depth_pfm(&args.depth1)?;
    let depth2 = read_depth_pfm(&args.depth2)?;
    let (flow, _) = read_flow_png(&args.flow)?;
    let (k, _) = read_intrinsics(&args.intrinsics)?;
    let pose_init = first_pose(&args.pose_init)?;
    let non_occluded = match &args.occlusion {
        Some(path) => read_mask_png(path)?,
        None => {
            let (w, h) = depth1.dims();
            Mask::all_true(w, h)
        }
    };
    let options = AlignOptions {
        region_fraction: args.region_fraction,
        iterations: args.iterations,
    };
    let result = refine_pose_with(
        &depth1,
        &depth2,
        &flow,
        &pose_init,
        &k,
        &non_occluded,
        &options,
    )?;
    write_pose_file(&args.out_pose, std::slice::from_ref(&result.refined))?;
    if let Some(report) = &args.report {
        let (w, h) = depth1.dims();
        let total = w * h;
        write_json(
            report,
            &AlignReport {
                format_version: EVAL_FORMAT_VERSION,
                rms_before: result.rms_before,
                rms_after: result.rms_after,
                region_pixels: result.region.count(),
                total_pixels: total,
                region_coverage: result.region.count() as f64 / total as f64,
            },
        )?;
    }
    Ok(())
}

fn run_segment(args: &SegmentArgs) -> Result<()> {
    let (flow, _) = read_flow_png(&args.flow)?;
    let (rigid, _) = read_flow_png(&args.rigid_flow)?;
    let non_occluded = read_mask_png(&args.occlusion)?;
    let params = SegmentationParams::new(args.delta)?;
    let mask = motion_mask(&flow, &rigid, &non_occluded, &params)?;
    write_mask_png(&args.out, &mask)
}

fn run_loss(args: &LossArgs) -> Result<()> {
    let left1 = read_image_png(&args.left1)?;
    let left2 = read_image_png(&args.left2)?;
    let right1 = read_image_png(&args.right1)?;
    let disp_left = read_disparity_pfm(&args.disp_left)?;
    let disp_right = read_disparity_pfm(&args.disp_right)?;
    let (flow_opt, _) = read_flow_png(&args.flow)?;
    let (flow_rigid, _) = read_flow_png(&args.rigid_flow)?;
    let (flow_rigid_refined, _) = read_flow_png(&args.rigid_flow_refined)?;
    let non_occluded = read_mask_png(&args.occlusion)?;
    let moving = args.moving.as_ref().map(read_mask_png).transpose()?;
    let weights = LossWeights {
        lambda_smooth: args.lambda_smooth,
        lambda_stereo: args.lambda_stereo,
        lambda_rigid: args.lambda_rigid,
        lambda_consistency: args.lambda_consistency,
        alpha: args.alpha,
        beta: args.beta,
    };
    let inputs = LossInputs {
        left1: &left1,
        left2: &left2,
        right1: &right1,
        disp_left: &disp_left,
        disp_right: &disp_right,
        flow_opt: &flow_opt,
        flow_rigid: &flow_rigid,
        flow_rigid_refined: &flow_rigid_refined,
        non_occluded: &non_occluded,
        moving: moving.as_ref(),
    };
    let report = total_loss(&inputs, &weights)?;
    write_json(&args.out, &report)
}

fn run_eval_flow(args: &EvalFlowArgs) -> Result<()> {
    let (pred, pred_valid) = read_flow_png(&args.pred)?;
    let (gt, gt_valid) = read_flow_png(&args.gt)?;
    let (w, h) = gt.dims();
    let valid = match &args.valid {
        Some(path) => read_mask_png(path)?,
        None => pred_valid.and(&gt_valid),
    };
    let non_occluded = match &args.noc {
        Some(path) => read_mask_png(path)?,
        None => Mask::all_true(w, h),
    };
    let occluded = match &args.occ {
        Some(path) => read_mask_png(path)?,
        None => non_occluded.not(),
    };
    let moving = match &args.moving {
        Some(path) => read_mask_png(path)?,
        None => Mask::all_false(w, h),
    };
    let stationary = match &args.stationary {
        Some(path) => read_mask_png(path)?,
        None => moving.not(),
    };
    let masks = FlowMaskSet {
        valid,
        non_occluded,
        occluded,
        moving,
        stationary,
    };
    let report = flow_metrics(&pred, &gt, &masks)?;
    write_json(&args.out, &report)
}

fn run_eval_depth(args: &EvalDepthArgs) -> Result<()> {
    let pred = read_depth_pfm(&args.pred)?;
    let gt = read_depth_pfm(&args.gt)?;
    let rig = match &args.intrinsics {
        Some(path) => {
            let (k, baseline) = read_intrinsics(path)?;
            let baseline = baseline.ok_or_else(|| Error::Format {
                format: "intrinsics",
                path: path.display().to_string(),
                message: "disparity outliers need a baseline (7th value)".into(),
            })?;
            Some(stereoflow::geometry::StereoRig::new(k, baseline)?)
        }
        None => None,
    };
    let report = depth_metrics_with(&pred, &gt, args.cap, rig.as_ref())?;
    write_json(&args.out, &report)
}

fn run_eval_odometry(args: &EvalOdomArgs) -> Result<()> {
    let pred = read_pose_file(&args.pred)?;
    let gt = read_pose_file(&args.gt)?;
    let mode = match args.ate_mode {
        AteModeArg::Rmse => AteMode::Rmse,
        AteModeArg::MeanOfNorms => AteMode::MeanOfNorms,
    };
    let report = odometry_metrics(&pred, &gt, mode)?;
    write_json(&args.out, &report)
}

fn run_eval_seg(args: &EvalSegArgs) -> Result<()> {
    let pred = read_mask_png(&args.pred)?;
    let gt = read_mask_png(&args.gt)?;
    let report = seg_metrics(&pred, &gt)?;
    write_json(&args.out, &report)
}

fn run_flow_viz(args: &FlowVizArgs) -> Result<()> {
    let (flow, validity) = read_flow_png(&args.flow)?;
    let image = viz::flow_to_color(&flow, &validity, args.max_flow)?;
    write_image_png(&args.out, &image)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(args) => run_synth(args),
        Command::RigidFlow(args) => run_rigid_flow(args),
        Command::Align(args) => run_align(args),
        Command::Segment(args) => run_segment(args),
        Command::Loss(args) => run_loss(args),
        Command::Eval(EvalCommand::Flow(args)) => run_eval_flow(args),
        Command::Eval(EvalCommand::Depth(args)) => run_eval_depth(args),
        Command::Eval(EvalCommand::Odometry(args)) => run_eval_odometry(args),
        Command::Eval(EvalCommand::Segmentation(args)) => run_eval_seg(args),
        Command::FlowViz(args) => run_flow_viz(args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("stereoflow: {e}");
        std::process::exit(exit_code(&e));
    }
}
