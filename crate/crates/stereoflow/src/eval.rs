//! Benchmark metrics: optical flow, depth, odometry, and two-class
//! segmentation.
//!
//! Every report carries a `format_version` and serializes to JSON. Metrics
//! that average over a pixel or snippet subset return `None` instead of a
//! number when the subset is empty, so callers can tell "perfect" from
//! "undefined". All reductions are plain raster-order sums, and the
//! results do not depend on how pixels are laid out beyond floating-point
//! reassociation.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_dims, Error, Result};
use crate::geometry::{DepthMap, PoseSE3, StereoRig};
use crate::raster::Mask;
use crate::synth::SceneSample;
use crate::warp::FlowField;

/// Version stamp embedded in every serialized evaluation report.
pub const EVAL_FORMAT_VERSION: u32 = 1;

/// Depths are clamped to at least this before any depth metric.
pub const MIN_EVAL_DEPTH: f64 = 1e-3;

/// An end-point error counts as erroneous when it reaches both an absolute
/// floor in pixels and a fraction of the ground-truth magnitude.
const OUTLIER_ABS_PX: f64 = 3.0;
const OUTLIER_REL: f64 = 0.05;

// --- Optical flow -----------------------------------------------------------

/// Pixel subsets a flow field is scored over. `valid` gates every metric;
/// the other four split it into occlusion and motion classes.
#[derive(Clone, Debug)]
pub struct FlowMaskSet {
    pub valid: Mask,
    pub non_occluded: Mask,
    pub occluded: Mask,
    pub moving: Mask,
    pub stationary: Mask,
}

impl FlowMaskSet {
    /// Everything valid, visible, and static.
    pub fn uniform(width: usize, height: usize) -> Self {
        Self {
            valid: Mask::all_true(width, height),
            non_occluded: Mask::all_true(width, height),
            occluded: Mask::all_false(width, height),
            moving: Mask::all_false(width, height),
            stationary: Mask::all_true(width, height),
        }
    }

    /// The rendered scene's ground-truth visibility and motion split.
    pub fn from_scene(sample: &SceneSample) -> Self {
        let (w, h) = sample.depth1.dims();
        Self {
            valid: Mask::all_true(w, h),
            non_occluded: sample.non_occluded1.clone(),
            occluded: sample.non_occluded1.not(),
            moving: sample.moving1.clone(),
            stationary: sample.moving1.not(),
        }
    }

    fn dims(&self) -> (usize, usize) {
        self.valid.dims()
    }
}

/// Flow benchmark numbers. End-point errors are mean Euclidean distances in
/// pixels over the named subset; `fl_all` is the percentage of valid pixels
/// whose error reaches both 3 px and 5% of the ground-truth magnitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowEval {
    pub format_version: u32,
    pub epe_all: Option<f64>,
    pub epe_noc: Option<f64>,
    pub epe_occ: Option<f64>,
    pub epe_move: Option<f64>,
    pub epe_static: Option<f64>,
    pub fl_all: Option<f64>,
}

fn masked_mean(sum: f64, count: u64) -> Option<f64> {
    (count > 0).then(|| sum / count as f64)
}

/// Scores a predicted flow against ground truth over the given subsets.
pub fn flow_metrics(pred: &FlowField, gt: &FlowField, masks: &FlowMaskSet) -> Result<FlowEval> {
    let dims = gt.dims();
    ensure_same_dims("flow_metrics prediction vs ground truth", dims, pred.dims())?;
    ensure_same_dims("flow_metrics masks vs ground truth", dims, masks.dims())?;
    for (name, mask) in [
        ("non_occluded", &masks.non_occluded),
        ("occluded", &masks.occluded),
        ("moving", &masks.moving),
        ("stationary", &masks.stationary),
    ] {
        ensure_same_dims(&format!("flow_metrics {name} mask"), dims, mask.dims())?;
    }

    let (w, h) = dims;
    let mut sums = [0.0f64; 5];
    let mut counts = [0u64; 5];
    let mut outliers = 0u64;
    for y in 0..h {
        for x in 0..w {
            if !masks.valid.get(x, y) {
                continue;
            }
            let (pu, pv) = pred.get(x, y);
            let (gu, gv) = gt.get(x, y);
            let epe = ((pu - gu).powi(2) + (pv - gv).powi(2)).sqrt();
            let classes = [
                true,
                masks.non_occluded.get(x, y),
                masks.occluded.get(x, y),
                masks.moving.get(x, y),
                masks.stationary.get(x, y),
            ];
            for (i, &in_class) in classes.iter().enumerate() {
                if in_class {
                    sums[i] += epe;
                    counts[i] += 1;
                }
            }
            let gt_mag = (gu * gu + gv * gv).sqrt();
            if epe >= OUTLIER_ABS_PX && epe >= OUTLIER_REL * gt_mag {
                outliers += 1;
            }
        }
    }
    Ok(FlowEval {
        format_version: EVAL_FORMAT_VERSION,
        epe_all: masked_mean(sums[0], counts[0]),
        epe_noc: masked_mean(sums[1], counts[1]),
        epe_occ: masked_mean(sums[2], counts[2]),
        epe_move: masked_mean(sums[3], counts[3]),
        epe_static: masked_mean(sums[4], counts[4]),
        fl_all: masked_mean(100.0 * outliers as f64, counts[0]),
    })
}

// --- Depth ------------------------------------------------------------------

/// Depth benchmark numbers over the pixels valid in both maps, after
/// clamping both to `[1e-3, cap]`. `delta<i>` is the fraction of pixels
/// whose depth ratio stays under `1.25^i`, so `delta1 <= delta2 <= delta3`.
/// `d1_all` (percent of disparity outliers by the 3 px / 5% rule) is present
/// only when the rig needed to form disparities was supplied.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthEval {
    pub format_version: u32,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub d1_all: Option<f64>,
    pub pixels: u64,
}

/// [`depth_metrics_with`] without disparity outliers.
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap, cap: f64) -> Result<DepthEval> {
    depth_metrics_with(pred, gt, cap, None)
}

pub fn depth_metrics_with(
    pred: &DepthMap,
    gt: &DepthMap,
    cap: f64,
    rig: Option<&StereoRig>,
) -> Result<DepthEval> {
    if !(cap.is_finite() && cap > MIN_EVAL_DEPTH) {
        return Err(Error::InvalidInput(format!(
            "depth cap must be finite and above {MIN_EVAL_DEPTH}, got {cap}"
        )));
    }
    let dims = gt.dims();
    ensure_same_dims("depth_metrics prediction vs ground truth", dims, pred.dims())?;
    let bf = rig.map(|r| r.baseline * r.intrinsics.fx);

    let (w, h) = dims;
    let mut n = 0u64;
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log) = (0.0, 0.0, 0.0, 0.0);
    let mut deltas = [0u64; 3];
    let mut d1_outliers = 0u64;
    for y in 0..h {
        for x in 0..w {
            let (Some(p), Some(g)) = (pred.get(x, y), gt.get(x, y)) else {
                continue;
            };
            let p = p.clamp(MIN_EVAL_DEPTH, cap);
            let g = g.clamp(MIN_EVAL_DEPTH, cap);
            n += 1;
            abs_rel += (p - g).abs() / g;
            sq_rel += (p - g).powi(2) / g;
            sq += (p - g).powi(2);
            sq_log += (p.ln() - g.ln()).powi(2);
            let ratio = (p / g).max(g / p);
            let mut bound = 1.25;
            for slot in deltas.iter_mut() {
                if ratio < bound {
                    *slot += 1;
                }
                bound *= 1.25;
            }
            if let Some(bf) = bf {
                let err = (bf / p - bf / g).abs();
                if err >= OUTLIER_ABS_PX && err >= OUTLIER_REL * (bf / g) {
                    d1_outliers += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptySupport(
            "depth_metrics: no pixel is valid in both maps".into(),
        ));
    }
    let nf = n as f64;
    Ok(DepthEval {
        format_version: EVAL_FORMAT_VERSION,
        abs_rel: abs_rel / nf,
        sq_rel: sq_rel / nf,
        rmse: (sq / nf).sqrt(),
        rmse_log: (sq_log / nf).sqrt(),
        delta1: deltas[0] as f64 / nf,
        delta2: deltas[1] as f64 / nf,
        delta3: deltas[2] as f64 / nf,
        d1_all: bf.map(|_| 100.0 * d1_outliers as f64 / nf),
        pixels: n,
    })
}

// --- Odometry ---------------------------------------------------------------

/// How a snippet's translation residuals are reduced to one number.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AteMode {
    /// Root-mean-square over the snippet positions.
    #[default]
    Rmse,
    /// Plain mean of the residual norms.
    MeanOfNorms,
}

/// Absolute trajectory error over 5-frame snippets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AteResult {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Snippets actually scored.
    pub snippets: usize,
    /// Snippets skipped because their ground truth never moves.
    pub skipped: usize,
}

const SNIPPET_RELATIVES: usize = 4;

/// Camera positions of a 5-frame snippet in the frame of its first camera.
fn snippet_positions(rel: &[PoseSE3]) -> [Vector3<f64>; 5] {
    let mut out = [Vector3::zeros(); 5];
    let mut accum = PoseSE3::identity();
    for (j, r) in rel.iter().enumerate() {
        accum = r.compose(&accum);
        out[j + 1] = *accum.inverse().translation();
    }
    out
}

fn snippet_error(pred: &[Vector3<f64>; 5], gt: &[Vector3<f64>; 5], mode: AteMode) -> Option<f64> {
    let gt_energy: f64 = gt.iter().map(|t| t.norm_squared()).sum();
    if gt_energy == 0.0 {
        return None;
    }
    let num: f64 = pred.iter().zip(gt).map(|(p, g)| p.dot(g)).sum();
    let den: f64 = pred.iter().map(|t| t.norm_squared()).sum();
    // A prediction that never moves cannot be scaled onto the ground truth;
    // score it as-is.
    let s = if den > 0.0 { num / den } else { 1.0 };
    let e = match mode {
        AteMode::Rmse => {
            let sq: f64 = pred
                .iter()
                .zip(gt)
                .map(|(p, g)| (p * s - g).norm_squared())
                .sum();
            (sq / 5.0).sqrt()
        }
        AteMode::MeanOfNorms => {
            let total: f64 = pred.iter().zip(gt).map(|(p, g)| (p * s - g).norm()).sum();
            total / 5.0
        }
    };
    Some(e)
}

/// [`ate_5frame_with`] in RMSE mode.
pub fn ate_5frame(pred_rel: &[PoseSE3], gt_rel: &[PoseSE3]) -> Result<AteResult> {
    ate_5frame_with(pred_rel, gt_rel, AteMode::Rmse)
}

/// Scores consecutive-frame relative poses over all 5-frame snippets
/// (stride 1). Each snippet is integrated from identity, a single scale
/// factor is fitted to the predicted positions by least squares, and the
/// residual translations are reduced per `mode`; the result averages the
/// per-snippet errors. Snippets whose ground truth never moves are skipped
/// and counted.
pub fn ate_5frame_with(
    pred_rel: &[PoseSE3],
    gt_rel: &[PoseSE3],
    mode: AteMode,
) -> Result<AteResult> {
    if pred_rel.len() != gt_rel.len() {
        return Err(Error::InvalidInput(format!(
            "relative pose counts differ: {} vs {}",
            pred_rel.len(),
            gt_rel.len()
        )));
    }
    if gt_rel.len() < SNIPPET_RELATIVES {
        return Err(Error::EmptySupport(format!(
            "5-frame snippets need at least {SNIPPET_RELATIVES} relative poses, got {}",
            gt_rel.len()
        )));
    }
    let mut errors = Vec::new();
    let mut skipped = 0usize;
    for start in 0..=gt_rel.len() - SNIPPET_RELATIVES {
        let pred = snippet_positions(&pred_rel[start..start + SNIPPET_RELATIVES]);
        let gt = snippet_positions(&gt_rel[start..start + SNIPPET_RELATIVES]);
        match snippet_error(&pred, &gt, mode) {
            Some(e) => errors.push(e),
            None => skipped += 1,
        }
    }
    if errors.is_empty() {
        return Ok(AteResult {
            mean: None,
            std: None,
            snippets: 0,
            skipped,
        });
    }
    let nf = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / nf;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / nf;
    Ok(AteResult {
        mean: Some(mean),
        std: Some(var.sqrt()),
        snippets: errors.len(),
        skipped,
    })
}

/// Consecutive-frame relatives (each maps points from frame `k` to frame
/// `k + 1`) of a camera-to-world trajectory.
pub fn relative_poses(traj: &[PoseSE3]) -> Vec<PoseSE3> {
    traj.windows(2).map(|w| w[1].inverse().compose(&w[0])).collect()
}

/// Drift of a trajectory against ground truth, averaged over fixed-length
/// subsequences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdomDriftResult {
    /// Mean endpoint translation error as a percentage of segment length.
    pub t_err_percent: Option<f64>,
    /// Mean endpoint rotation error in degrees per 100 m.
    pub r_err_deg_per_100m: Option<f64>,
    /// Segments that contributed; zero when the path never reaches 100 m.
    pub segments: usize,
}

const DRIFT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

/// Averages endpoint pose error over all subsequences of nominal length
/// 100 m through 800 m, from every start frame. For a segment from frame
/// `f` to the first frame `l` whose ground-truth path distance exceeds the
/// nominal length, the error pose is
/// `(pred_f^-1 pred_l)^-1 (gt_f^-1 gt_l)`; its translation norm and
/// rotation angle are divided by the nominal length and averaged. Both
/// trajectories are camera-to-world.
pub fn odometry_drift(pred: &[PoseSE3], gt: &[PoseSE3]) -> Result<OdomDriftResult> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidInput(format!(
            "trajectory lengths differ: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    if gt.len() < 2 {
        return Err(Error::EmptySupport(
            "odometry drift needs at least 2 poses".into(),
        ));
    }
    let mut dist = Vec::with_capacity(gt.len());
    dist.push(0.0f64);
    for w in gt.windows(2) {
        let step = (w[1].translation() - w[0].translation()).norm();
        dist.push(dist.last().unwrap() + step);
    }

    let mut t_sum = 0.0;
    let mut r_sum = 0.0;
    let mut segments = 0usize;
    for first in 0..gt.len() {
        for &len in &DRIFT_LENGTHS {
            let target = dist[first] + len;
            let last = dist.partition_point(|&d| d <= target);
            if last >= gt.len() {
                break;
            }
            let delta_gt = gt[first].inverse().compose(&gt[last]);
            let delta_pred = pred[first].inverse().compose(&pred[last]);
            let err = delta_pred.inverse().compose(&delta_gt);
            t_sum += err.translation_norm() / len;
            r_sum += err.rotation_angle() / len;
            segments += 1;
        }
    }
    if segments == 0 {
        return Ok(OdomDriftResult {
            t_err_percent: None,
            r_err_deg_per_100m: None,
            segments: 0,
        });
    }
    let nf = segments as f64;
    Ok(OdomDriftResult {
        t_err_percent: Some(100.0 * t_sum / nf),
        r_err_deg_per_100m: Some((r_sum / nf).to_degrees() * 100.0),
        segments,
    })
}

/// Combined odometry report: snippet ATE plus long-range drift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdomEval {
    pub format_version: u32,
    pub ate_mean: Option<f64>,
    pub ate_std: Option<f64>,
    pub ate_snippets: usize,
    pub ate_skipped: usize,
    pub t_err_percent: Option<f64>,
    pub r_err_deg_per_100m: Option<f64>,
    pub drift_segments: usize,
}

/// Scores camera-to-world trajectories. ATE fields are absent when the
/// trajectory is shorter than 5 frames, drift fields when the path never
/// reaches 100 m.
pub fn odometry_metrics(
    pred_traj: &[PoseSE3],
    gt_traj: &[PoseSE3],
    mode: AteMode,
) -> Result<OdomEval> {
    if pred_traj.len() != gt_traj.len() {
        return Err(Error::InvalidInput(format!(
            "trajectory lengths differ: {} vs {}",
            pred_traj.len(),
            gt_traj.len()
        )));
    }
    let ate = if gt_traj.len() > SNIPPET_RELATIVES {
        ate_5frame_with(&relative_poses(pred_traj), &relative_poses(gt_traj), mode)?
    } else {
        AteResult {
            mean: None,
            std: None,
            snippets: 0,
            skipped: 0,
        }
    };
    let drift = odometry_drift(pred_traj, gt_traj)?;
    Ok(OdomEval {
        format_version: EVAL_FORMAT_VERSION,
        ate_mean: ate.mean,
        ate_std: ate.std,
        ate_snippets: ate.snippets,
        ate_skipped: ate.skipped,
        t_err_percent: drift.t_err_percent,
        r_err_deg_per_100m: drift.r_err_deg_per_100m,
        drift_segments: drift.segments,
    })
}

// --- Segmentation -----------------------------------------------------------

/// Two-class segmentation scores. Per-class accuracies and intersections
/// over union average only classes present in the ground truth;
/// `fw_iou` weights each present class by its ground-truth frequency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegEval {
    pub format_version: u32,
    pub pixel_acc: f64,
    pub mean_acc: f64,
    pub mean_iou: f64,
    pub fw_iou: f64,
}

/// Scores a predicted binary mask against ground truth.
pub fn seg_metrics(pred: &Mask, gt: &Mask) -> Result<SegEval> {
    ensure_same_dims("seg_metrics prediction vs ground truth", gt.dims(), pred.dims())?;
    let (w, h) = gt.dims();
    let mut confusion = [[0u64; 2]; 2];
    for y in 0..h {
        for x in 0..w {
            confusion[gt.get(x, y) as usize][pred.get(x, y) as usize] += 1;
        }
    }
    let total = (w * h) as f64;
    let gt_count = [confusion[0][0] + confusion[0][1], confusion[1][0] + confusion[1][1]];
    let pred_count = [confusion[0][0] + confusion[1][0], confusion[0][1] + confusion[1][1]];

    let mut acc_sum = 0.0;
    let mut iou_sum = 0.0;
    let mut fw_sum = 0.0;
    let mut present = 0u32;
    for c in 0..2 {
        if gt_count[c] == 0 {
            continue;
        }
        present += 1;
        let tp = confusion[c][c] as f64;
        let union = (gt_count[c] + pred_count[c] - confusion[c][c]) as f64;
        acc_sum += tp / gt_count[c] as f64;
        iou_sum += tp / union;
        fw_sum += (gt_count[c] as f64 / total) * (tp / union);
    }
    let present = present as f64;
    Ok(SegEval {
        format_version: EVAL_FORMAT_VERSION,
        pixel_acc: (confusion[0][0] + confusion[1][1]) as f64 / total,
        mean_acc: acc_sum / present,
        mean_iou: iou_sum / present,
        fw_iou: fw_sum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Intrinsics;
    use crate::raster::Grid;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_flow(seed: u64, w: usize, h: usize, scale: f64) -> FlowField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FlowField::from_fn(w, h, |_, _| {
            (
                rng.random_range(-scale..scale),
                rng.random_range(-scale..scale),
            )
        })
    }

    #[test]
    fn flow_against_itself_is_perfect() {
        let gt = random_flow(1, 16, 12, 20.0);
        let eval = flow_metrics(&gt, &gt, &FlowMaskSet::uniform(16, 12)).unwrap();
        assert_eq!(eval.epe_all, Some(0.0));
        assert_eq!(eval.epe_noc, Some(0.0));
        assert_eq!(eval.epe_static, Some(0.0));
        assert_eq!(eval.fl_all, Some(0.0));
        // Uniform masks leave the complement classes empty, not zero.
        assert_eq!(eval.epe_occ, None);
        assert_eq!(eval.epe_move, None);
    }

    #[test]
    fn flow_epe_matches_naive_loop() {
        let gt = random_flow(2, 9, 7, 15.0);
        let pred = random_flow(3, 9, 7, 15.0);
        let eval = flow_metrics(&pred, &gt, &FlowMaskSet::uniform(9, 7)).unwrap();
        let mut expected = 0.0;
        for y in 0..7 {
            for x in 0..9 {
                let (pu, pv) = pred.get(x, y);
                let (gu, gv) = gt.get(x, y);
                expected += ((pu - gu).hypot(pv - gv)) / 63.0;
            }
        }
        assert_relative_eq!(eval.epe_all.unwrap(), expected, max_relative = 1e-12);
    }

    #[test]
    fn fl_outliers_respect_both_thresholds() {
        // Four pixels: error 2.9 (below the absolute floor), error 4 against
        // magnitude 100 (below 5%), error 4 against magnitude 10 (outlier),
        // and error 3 against magnitude 60 (both thresholds met exactly).
        let gt = FlowField::from_fn(4, 1, |x, _| match x {
            0 => (10.0, 0.0),
            1 => (100.0, 0.0),
            2 => (10.0, 0.0),
            _ => (60.0, 0.0),
        });
        let pred = FlowField::from_fn(4, 1, |x, _| match x {
            0 => (12.9, 0.0),
            1 => (104.0, 0.0),
            2 => (14.0, 0.0),
            _ => (63.0, 0.0),
        });
        let eval = flow_metrics(&pred, &gt, &FlowMaskSet::uniform(4, 1)).unwrap();
        assert_relative_eq!(eval.fl_all.unwrap(), 50.0, max_relative = 1e-12);
    }

    #[test]
    fn flow_metrics_ignore_pixel_layout() {
        let (w, h) = (8, 6);
        let gt = random_flow(4, w, h, 10.0);
        let pred = random_flow(5, w, h, 10.0);
        let mut masks = FlowMaskSet::uniform(w, h);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        masks.moving = Mask::from_fn(w, h, |_, _| rng.random_range(0..2) == 1);
        masks.stationary = masks.moving.not();
        let base = flow_metrics(&pred, &gt, &masks).unwrap();

        // Reverse the raster; every per-pixel quantity moves with it.
        let flip = |f: &FlowField| {
            FlowField::from_fn(w, h, |x, y| f.get(w - 1 - x, h - 1 - y))
        };
        let flip_mask = |m: &Mask| Mask::from_fn(w, h, |x, y| m.get(w - 1 - x, h - 1 - y));
        let flipped = FlowMaskSet {
            valid: flip_mask(&masks.valid),
            non_occluded: flip_mask(&masks.non_occluded),
            occluded: flip_mask(&masks.occluded),
            moving: flip_mask(&masks.moving),
            stationary: flip_mask(&masks.stationary),
        };
        let moved = flow_metrics(&flip(&pred), &flip(&gt), &flipped).unwrap();
        assert_relative_eq!(
            base.epe_all.unwrap(),
            moved.epe_all.unwrap(),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            base.epe_move.unwrap(),
            moved.epe_move.unwrap(),
            epsilon = 1e-12
        );
        assert_eq!(base.fl_all, moved.fl_all);
    }

    fn dense_depth(w: usize, h: usize, f: impl FnMut(usize, usize) -> f64) -> DepthMap {
        DepthMap::dense(Grid::from_fn(w, h, f)).unwrap()
    }

    #[test]
    fn depth_scaling_hand_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gt = dense_depth(10, 8, |_, _| rng.random_range(1.0..50.0));

        let perfect = depth_metrics(&gt, &gt, 80.0).unwrap();
        assert_eq!(perfect.abs_rel, 0.0);
        assert_eq!(perfect.rmse, 0.0);
        assert_eq!(perfect.delta1, 1.0);
        assert_eq!(perfect.pixels, 80);
        assert_eq!(perfect.d1_all, None);

        let doubled = dense_depth(10, 8, |x, y| gt.get(x, y).unwrap() * 2.0);
        let eval = depth_metrics(&doubled, &gt, 200.0).unwrap();
        assert_eq!(eval.abs_rel, 1.0);
        // Ratio 2 exceeds even 1.25^3.
        assert_eq!(eval.delta1, 0.0);
        assert_eq!(eval.delta3, 0.0);

        let ratio_17 = dense_depth(10, 8, |x, y| gt.get(x, y).unwrap() * 1.7);
        let eval = depth_metrics(&ratio_17, &gt, 300.0).unwrap();
        assert_eq!(eval.delta1, 0.0);
        assert_eq!(eval.delta2, 0.0);
        assert_eq!(eval.delta3, 1.0);
        assert!(eval.delta1 <= eval.delta2 && eval.delta2 <= eval.delta3);

        let mild = dense_depth(10, 8, |x, y| gt.get(x, y).unwrap() * 1.2);
        let eval = depth_metrics(&mild, &gt, 200.0).unwrap();
        assert_eq!(eval.delta1, 1.0);
    }

    #[test]
    fn depth_clamp_hides_far_error() {
        let gt = dense_depth(4, 4, |_, _| 100.0);
        let pred = dense_depth(4, 4, |_, _| 90.0);
        let eval = depth_metrics(&pred, &gt, 80.0).unwrap();
        assert_eq!(eval.abs_rel, 0.0);
        assert_eq!(eval.rmse, 0.0);
        assert_eq!(eval.delta1, 1.0);
    }

    #[test]
    fn depth_d1_uses_disparity_thresholds() {
        let k = Intrinsics::new(720.0, 720.0, 32.0, 16.0, 64, 32).unwrap();
        let rig = StereoRig::new(k, 0.5).unwrap();
        // bf = 360: gt depth 10 is disparity 36; prediction at depth 9 is
        // disparity 40, a 4 px error above both thresholds.
        let gt = dense_depth(6, 4, |_, _| 10.0);
        let bad = dense_depth(6, 4, |_, _| 9.0);
        let eval = depth_metrics_with(&bad, &gt, 80.0, Some(&rig)).unwrap();
        assert_eq!(eval.d1_all, Some(100.0));

        // Disparity 37 errs by 1 px; never an outlier.
        let near = dense_depth(6, 4, |_, _| 360.0 / 37.0);
        let eval = depth_metrics_with(&near, &gt, 80.0, Some(&rig)).unwrap();
        assert_eq!(eval.d1_all, Some(0.0));
    }

    #[test]
    fn depth_requires_shared_support() {
        let gt = DepthMap::new(
            Grid::filled(4, 4, 10.0),
            Mask::all_false(4, 4),
        )
        .unwrap();
        let pred = dense_depth(4, 4, |_, _| 10.0);
        assert!(matches!(
            depth_metrics(&pred, &gt, 80.0),
            Err(Error::EmptySupport(_))
        ));
    }

    fn random_relatives(seed: u64, n: usize, step: f64) -> Vec<PoseSE3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                PoseSE3::from_params6(&[
                    rng.random_range(-step..step),
                    rng.random_range(-step..step),
                    step + rng.random_range(0.0..step),
                    rng.random_range(-0.02..0.02),
                    rng.random_range(-0.02..0.02),
                    rng.random_range(-0.02..0.02),
                ])
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn ate_perfect_and_doubled_are_exact_zero() {
        let gt = random_relatives(11, 10, 0.3);
        let ate = ate_5frame(&gt, &gt).unwrap();
        assert_eq!(ate.mean, Some(0.0));
        assert_eq!(ate.std, Some(0.0));
        assert_eq!(ate.snippets, 7);
        assert_eq!(ate.skipped, 0);

        // Doubling every translation is absorbed exactly by the fitted
        // scale: s = 1/2 is dyadic and 0.5 * 2t - t cancels bitwise.
        let doubled: Vec<PoseSE3> = gt
            .iter()
            .map(|p| PoseSE3::new(*p.rotation(), p.translation() * 2.0).unwrap())
            .collect();
        let ate = ate_5frame(&doubled, &gt).unwrap();
        assert_eq!(ate.mean, Some(0.0));
    }

    #[test]
    fn ate_scale_fit_beats_scalar_scan() {
        let gt = random_relatives(13, 8, 0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let pred: Vec<PoseSE3> = gt
            .iter()
            .map(|p| {
                let t = p.translation();
                PoseSE3::new(
                    *p.rotation(),
                    Vector3::new(
                        t.x * 1.4 + rng.random_range(-0.02..0.02),
                        t.y * 1.4 + rng.random_range(-0.02..0.02),
                        t.z * 1.4 + rng.random_range(-0.02..0.02),
                    ),
                )
                .unwrap()
            })
            .collect();
        let ate = ate_5frame(&pred, &gt).unwrap();

        // Independent oracle: integrate with raw matrices and scan the
        // scale over a fine grid; the closed-form fit may not beat the
        // grid's best sample by more than the grid spacing allows.
        let mut scan_errors = Vec::new();
        for start in 0..=pred.len() - 4 {
            let integrate = |rel: &[PoseSE3]| {
                let mut rot = nalgebra::Matrix3::<f64>::identity();
                let mut tr = Vector3::zeros();
                let mut pos = vec![Vector3::zeros()];
                for r in rel {
                    rot = r.rotation() * rot;
                    tr = r.rotation() * tr + r.translation();
                    pos.push(-(rot.transpose() * tr));
                }
                pos
            };
            let pp = integrate(&pred[start..start + 4]);
            let gp = integrate(&gt[start..start + 4]);
            let mut best = f64::INFINITY;
            for i in 0..=40000 {
                let s = i as f64 * 1e-4;
                let sq: f64 = pp
                    .iter()
                    .zip(&gp)
                    .map(|(p, g)| (p * s - g).norm_squared())
                    .sum();
                best = best.min((sq / 5.0).sqrt());
            }
            scan_errors.push(best);
        }
        let scan_mean = scan_errors.iter().sum::<f64>() / scan_errors.len() as f64;
        assert!(ate.mean.unwrap() <= scan_mean + 1e-9);
        assert_relative_eq!(ate.mean.unwrap(), scan_mean, epsilon = 1e-6);
    }

    #[test]
    fn ate_skips_snippets_with_motionless_ground_truth() {
        let spin = PoseSE3::from_params6(&[0.0, 0.0, 0.0, 0.0, 0.03, 0.0]).unwrap();
        let mut gt = vec![spin.clone(), spin.clone(), spin.clone(), spin.clone()];
        gt.extend(random_relatives(15, 5, 0.3));
        let pred = gt.clone();
        let ate = ate_5frame(&pred, &gt).unwrap();
        assert_eq!(ate.skipped, 1);
        assert_eq!(ate.snippets, 5);
        assert_eq!(ate.mean, Some(0.0));
    }

    /// Camera-to-world poses walking +z, one meter per frame.
    fn straight_trajectory(frames: usize) -> Vec<PoseSE3> {
        (0..frames)
            .map(|i| {
                PoseSE3::new(
                    nalgebra::Matrix3::identity(),
                    Vector3::new(0.0, 0.0, i as f64),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn drift_perfect_prediction_scores_zero() {
        let gt = straight_trajectory(301);
        let drift = odometry_drift(&gt, &gt).unwrap();
        assert!(drift.segments > 0);
        assert_eq!(drift.t_err_percent, Some(0.0));
        assert_eq!(drift.r_err_deg_per_100m, Some(0.0));

        let short = straight_trajectory(50);
        let drift = odometry_drift(&short, &short).unwrap();
        assert_eq!(drift.segments, 0);
        assert_eq!(drift.t_err_percent, None);
    }

    #[test]
    fn drift_is_invariant_to_a_global_frame_change() {
        let gt: Vec<PoseSE3> = {
            // A gently curving path with 1 m steps.
            let turn = PoseSE3::from_params6(&[0.02, 0.0, 1.0, 0.0, 0.004, 0.0]).unwrap();
            let mut c = PoseSE3::identity();
            let mut out = vec![c.clone()];
            for _ in 0..260 {
                c = c.compose(&turn);
                out.push(c.clone());
            }
            out
        };
        let pred: Vec<PoseSE3> = gt
            .iter()
            .map(|p| PoseSE3::new(*p.rotation(), p.translation() * 1.01).unwrap())
            .collect();
        let base = odometry_drift(&pred, &gt).unwrap();

        let g = PoseSE3::from_params6(&[3.0, -2.0, 5.0, 0.4, -0.3, 0.8]).unwrap();
        let moved_gt: Vec<PoseSE3> = gt.iter().map(|p| g.compose(p)).collect();
        let moved_pred: Vec<PoseSE3> = pred.iter().map(|p| g.compose(p)).collect();
        let moved = odometry_drift(&moved_pred, &moved_gt).unwrap();
        assert_eq!(base.segments, moved.segments);
        assert_relative_eq!(
            base.t_err_percent.unwrap(),
            moved.t_err_percent.unwrap(),
            epsilon = 1e-9
        );
        assert_relative_eq!(
            base.r_err_deg_per_100m.unwrap(),
            moved.r_err_deg_per_100m.unwrap(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn drift_on_a_circle_matches_a_naive_reimplementation() {
        // 1000 one-meter chords around a circle; the prediction drifts by a
        // 1% translation scale.
        let n = 1001usize;
        let radius = 1000.0 / (2.0 * std::f64::consts::PI);
        let gt: Vec<PoseSE3> = (0..n)
            .map(|i| {
                let a = i as f64 * 2.0 * std::f64::consts::PI / 1000.0;
                let rot = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), a);
                PoseSE3::new(
                    *rot.matrix(),
                    Vector3::new(radius * a.cos(), 0.0, radius * a.sin()),
                )
                .unwrap()
            })
            .collect();
        let pred: Vec<PoseSE3> = gt
            .iter()
            .map(|p| PoseSE3::new(*p.rotation(), p.translation() * 1.01).unwrap())
            .collect();
        let ours = odometry_drift(&pred, &gt).unwrap();

        // Naive re-computation with raw 3x3 matrices and a linear scan for
        // the segment end.
        let pos: Vec<Vector3<f64>> = gt.iter().map(|p| *p.translation()).collect();
        let mut dist = vec![0.0f64];
        for i in 1..n {
            let d = dist[i - 1] + (pos[i] - pos[i - 1]).norm();
            dist.push(d);
        }
        let rel = |a: &PoseSE3, b: &PoseSE3| {
            let r = a.rotation().transpose() * b.rotation();
            let t = a.rotation().transpose() * (b.translation() - a.translation());
            (r, t)
        };
        let mut t_sum = 0.0;
        let mut r_sum = 0.0;
        let mut count = 0usize;
        for first in 0..n {
            for &len in &DRIFT_LENGTHS {
                let mut last = None;
                for j in first..n {
                    if dist[j] > dist[first] + len {
                        last = Some(j);
                        break;
                    }
                }
                let Some(last) = last else { break };
                let (rg, tg) = rel(&gt[first], &gt[last]);
                let (rp, tp) = rel(&pred[first], &pred[last]);
                let re = rp.transpose() * rg;
                let te = rp.transpose() * (tg - tp);
                let angle = ((re.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
                t_sum += te.norm() / len;
                r_sum += angle / len;
                count += 1;
            }
        }
        assert_eq!(ours.segments, count);
        assert_relative_eq!(
            ours.t_err_percent.unwrap(),
            100.0 * t_sum / count as f64,
            epsilon = 1e-9
        );
        assert_relative_eq!(
            ours.r_err_deg_per_100m.unwrap(),
            (r_sum / count as f64).to_degrees() * 100.0,
            epsilon = 1e-9
        );
        // Pure position scaling leaves a real translation drift but only
        // rounding-level rotation drift (the angle of a float-identity
        // rotation is of order sqrt(eps)).
        assert!(ours.t_err_percent.unwrap() > 0.1);
        assert!(ours.r_err_deg_per_100m.unwrap() < 1e-3);
    }

    #[test]
    fn odometry_metrics_combines_ate_and_drift() {
        let gt = straight_trajectory(151);
        let eval = odometry_metrics(&gt, &gt, AteMode::Rmse).unwrap();
        assert_eq!(eval.ate_mean, Some(0.0));
        assert_eq!(eval.t_err_percent, Some(0.0));
        assert!(eval.ate_snippets > 0 && eval.drift_segments > 0);

        let tiny = straight_trajectory(3);
        let eval = odometry_metrics(&tiny, &tiny, AteMode::Rmse).unwrap();
        assert_eq!(eval.ate_mean, None);
        assert_eq!(eval.ate_snippets, 0);
    }

    #[test]
    fn seg_hand_computed_confusion() {
        // gt: left half true. pred: top half true.
        let gt = Mask::from_fn(4, 4, |x, _| x < 2);
        let pred = Mask::from_fn(4, 4, |_, y| y < 2);
        let eval = seg_metrics(&pred, &gt).unwrap();
        // Confusion: tp(true) = 4, fn = 4, fp = 4, tn = 4.
        assert_relative_eq!(eval.pixel_acc, 0.5);
        assert_relative_eq!(eval.mean_acc, 0.5);
        // IoU per class: 4 / 12 each.
        assert_relative_eq!(eval.mean_iou, 1.0 / 3.0);
        assert_relative_eq!(eval.fw_iou, 1.0 / 3.0);
    }

    #[test]
    fn seg_inverted_prediction_scores_zero() {
        let gt = Mask::from_fn(4, 2, |x, _| x < 2);
        let eval = seg_metrics(&gt.not(), &gt).unwrap();
        assert_eq!(eval.pixel_acc, 0.0);
        assert_eq!(eval.mean_acc, 0.0);
        assert_eq!(eval.mean_iou, 0.0);
        assert_eq!(eval.fw_iou, 0.0);
    }

    #[test]
    fn seg_single_present_class() {
        let gt = Mask::all_true(3, 3);
        let pred = Mask::from_fn(3, 3, |x, _| x > 0);
        let eval = seg_metrics(&pred, &gt).unwrap();
        assert_relative_eq!(eval.pixel_acc, 6.0 / 9.0);
        assert_relative_eq!(eval.mean_acc, 6.0 / 9.0);
        assert_relative_eq!(eval.mean_iou, 6.0 / 9.0);
        assert_relative_eq!(eval.fw_iou, 6.0 / 9.0);
    }

    #[test]
    fn mismatched_dims_are_rejected() {
        let gt = random_flow(20, 8, 6, 5.0);
        let pred = random_flow(21, 8, 5, 5.0);
        assert!(matches!(
            flow_metrics(&pred, &gt, &FlowMaskSet::uniform(8, 6)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            seg_metrics(&Mask::all_true(3, 3), &Mask::all_true(3, 4)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(ate_5frame(&random_relatives(1, 5, 0.1), &random_relatives(1, 6, 0.1)).is_err());
    }

    #[test]
    fn reports_serialize_with_version() {
        let gt = random_flow(30, 4, 4, 5.0);
        let eval = flow_metrics(&gt, &gt, &FlowMaskSet::uniform(4, 4)).unwrap();
        let text = serde_json::to_string(&eval).unwrap();
        assert!(text.contains("\"format_version\":1"));
        let back: FlowEval = serde_json::from_str(&text).unwrap();
        assert_eq!(back, eval);
    }
}
