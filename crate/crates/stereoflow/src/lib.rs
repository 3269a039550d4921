//! Geometry, losses, and evaluation for stereo-video depth and
//! optical-flow estimation.
//!
//! The crate covers the numeric core of a rigid-motion pipeline: pinhole
//! back-projection and re-projection, differentiable bilinear warping,
//! SVD-based pose alignment with robust region selection, motion
//! segmentation, the full training objective with closed-form gradients,
//! plus synthetic scene rendering, metric evaluation, and the file
//! formats that tie a pipeline together.
//!
//! Conventions used throughout: pixel `(x, y)` means column `x`, row `y`,
//! zero-based, with integer coordinates at pixel centers; the camera
//! looks along `+z` with `x` right and `y` down; a pose maps points from
//! the first frame's camera to the second's. All reductions run in raster
//! order, and the only concurrency is the renderer's optional row
//! banding, which keeps outputs bit-identical for every thread count.

pub mod error;
pub mod eval;
pub mod formats;
pub mod geometry;
pub mod losses;
pub mod raster;
pub mod rigid;
pub mod segmentation;
pub mod synth;
pub mod warp;

pub use error::{Error, Result};
pub use eval::{
    ate_5frame, ate_5frame_with, depth_metrics, depth_metrics_with, flow_metrics,
    odometry_drift, odometry_metrics, relative_poses, seg_metrics, AteMode, AteResult,
    DepthEval, FlowEval, FlowMaskSet, OdomDriftResult, OdomEval, SegEval,
};
pub use formats::{
    read_depth_pfm, read_disparity_pfm, read_flow_png, read_image_png, read_intrinsics,
    read_json, read_mask_png, read_pfm, read_pose_file, write_flow_png, write_image_png,
    write_intrinsics, write_json, write_mask_png, write_pfm, write_pose_file,
};
pub use geometry::{
    backproject, depth_to_disparity, disparity_to_depth, project, transform, DepthMap,
    DisparityMap, Intrinsics, PointCloud, PoseSE3, ProjectedPixels, StereoRig,
};
pub use raster::{Grid, Mask};
pub use rigid::{
    align_svd, masked_epe, refine_pose, refine_pose_with, rigid_flow, select_region,
    select_region_with, AlignOptions, AlignmentResult,
};
pub use segmentation::{motion_mask, SegmentationParams};
pub use synth::{
    export, perturb_pose, random_moving_config, random_static_config, render,
    render_with_threads, stereo_disparity_truth, stereo_disparity_truth_right, PlaneConfig,
    ProceduralTexture, RectConfig, SceneConfig, SceneSample,
};
pub use warp::{
    bilinear_warp, bilinear_warp_grid, coverage_map, estimate_occlusion, estimate_occlusion_with,
    flow_magnitude_diff, warp_cloud, FlowField, Image, DEFAULT_OCCLUSION_THRESHOLD,
};
