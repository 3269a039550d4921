//! Camera-motion flow synthesis and SVD-based pose refinement.
//!
//! The refinement pipeline compares two views of the first frame's geometry:
//! the back-projected cloud moved by the current pose estimate, and the
//! second frame's cloud pulled back along the optical flow. A least-squares
//! rigid correction between the two, fitted on the best-matching quarter of
//! the non-occluded pixels, absorbs pose error while staying insensitive to
//! independently moving objects (their correspondences disagree with the
//! camera motion and land in the discarded tail of the residual ranking).
//!
//! No step here is differentiable and none needs to be; the module is meant
//! to run inside a stop-gradient boundary.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{backproject, project, transform, DepthMap, Intrinsics, PointCloud, PoseSE3};
use crate::raster::{check_dims, Mask};
use crate::warp::{warp_cloud, FlowField};

/// Fraction of eligible pixels kept for the rigid fit.
pub const DEFAULT_REGION_FRACTION: f64 = 0.25;

/// A rigid fit needs at least this many points.
pub const MIN_REGION_POINTS: usize = 3;

/// Options for [`refine_pose_with`] and [`select_region_with`].
#[derive(Clone, Debug)]
pub struct AlignOptions {
    /// Fraction of eligible pixels kept, ranked by residual; in `(0, 1]`.
    pub region_fraction: f64,
    /// Number of select-and-align passes; each pass re-ranks residuals
    /// under the latest pose.
    pub iterations: usize,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self {
            region_fraction: DEFAULT_REGION_FRACTION,
            iterations: 1,
        }
    }
}

/// Outcome of [`refine_pose`].
#[derive(Clone, Debug)]
pub struct AlignmentResult {
    /// Correction applied on top of the initial pose: `refined = delta * init`.
    pub delta: PoseSE3,
    /// Corrected frame-1 to frame-2 pose.
    pub refined: PoseSE3,
    /// Pixels the final fit used.
    pub region: Mask,
    /// RMS point distance over the region before the correction.
    pub rms_before: f64,
    /// RMS point distance over the region after the correction.
    pub rms_after: f64,
}

/// Flow induced by camera motion alone: back-project `depth`, move by
/// `pose`, re-project, subtract the pixel grid. Pixels with invalid depth
/// or a transformed point at or behind the camera are masked out and carry
/// zero flow.
pub fn rigid_flow(
    depth: &DepthMap,
    pose: &PoseSE3,
    k: &Intrinsics,
) -> Result<(FlowField, Mask)> {
    let cloud = backproject(depth, k)?;
    let moved = transform(&cloud, pose);
    let proj = project(&moved, k)?;
    let (w, h) = depth.dims();
    let mut flow = FlowField::zeros(w, h);
    let mut validity = Mask::all_false(w, h);
    for y in 0..h {
        for x in 0..w {
            if proj.validity.get(x, y) {
                *flow.u_mut().at_mut(x, y) = proj.u.at(x, y) - x as f64;
                *flow.v_mut().at_mut(x, y) = proj.v.at(x, y) - y as f64;
                validity.set(x, y, true);
            }
        }
    }
    Ok((flow, validity))
}

fn eligible_mask(q_hat: &PointCloud, q_tilde: &PointCloud, non_occluded: &Mask) -> Result<Mask> {
    check_dims("aligned cloud vs warped cloud", q_hat.dims(), q_tilde.dims())?;
    check_dims("clouds vs non-occlusion mask", q_hat.dims(), non_occluded.dims())?;
    Ok(q_hat
        .validity()
        .and(q_tilde.validity())
        .and(non_occluded))
}

/// Selects `round(fraction * N)` of the `N` eligible pixels (valid in both
/// clouds and non-occluded) with the smallest point-to-point residuals.
/// Ties at the cutoff break in raster-scan order.
pub fn select_region_with(
    q_hat: &PointCloud,
    q_tilde: &PointCloud,
    non_occluded: &Mask,
    fraction: f64,
) -> Result<Mask> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "region fraction must be in (0, 1], got {fraction}"
        )));
    }
    let eligible = eligible_mask(q_hat, q_tilde, non_occluded)?;
    let (w, h) = q_hat.dims();
    let mut residuals: Vec<(f64, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if eligible.get(x, y) {
                let r = (q_hat.points().at(x, y) - q_tilde.points().at(x, y)).norm();
                residuals.push((r, y * w + x));
            }
        }
    }
    if residuals.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let keep = (fraction * residuals.len() as f64).round() as usize;
    // Stable sort keeps raster-scan order among equal residuals.
    residuals.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("residuals are finite"));
    let mut region = Mask::all_false(w, h);
    for &(_, idx) in residuals.iter().take(keep) {
        region.set(idx % w, idx / w, true);
    }
    Ok(region)
}

/// [`select_region_with`] at the default quarter fraction.
pub fn select_region(
    q_hat: &PointCloud,
    q_tilde: &PointCloud,
    non_occluded: &Mask,
) -> Result<Mask> {
    select_region_with(q_hat, q_tilde, non_occluded, DEFAULT_REGION_FRACTION)
}

/// Least-squares rigid transform taking `q_hat` onto `q_tilde` over the
/// region: centroids are removed, the cross-covariance is decomposed by
/// SVD, and the rotation is `V * diag(1, 1, det(V U^T)) * U^T` with
/// `t = centroid_tilde - R * centroid_hat`.
///
/// Fails on fewer than [`MIN_REGION_POINTS`] usable points or when the
/// centered points are collinear (cross-covariance rank below 2), which
/// leaves a rotation axis unconstrained.
pub fn align_svd(q_hat: &PointCloud, q_tilde: &PointCloud, region: &Mask) -> Result<PoseSE3> {
    check_dims("aligned cloud vs warped cloud", q_hat.dims(), q_tilde.dims())?;
    check_dims("clouds vs region", q_hat.dims(), region.dims())?;
    let (w, h) = q_hat.dims();

    let mut n = 0usize;
    let mut centroid_hat = Vector3::zeros();
    let mut centroid_tilde = Vector3::zeros();
    for y in 0..h {
        for x in 0..w {
            if region.get(x, y) && q_hat.validity().get(x, y) && q_tilde.validity().get(x, y) {
                centroid_hat += *q_hat.points().at(x, y);
                centroid_tilde += *q_tilde.points().at(x, y);
                n += 1;
            }
        }
    }
    if n < MIN_REGION_POINTS {
        return Err(Error::DegenerateRegion {
            points: n,
            min: MIN_REGION_POINTS,
        });
    }
    centroid_hat /= n as f64;
    centroid_tilde /= n as f64;

    let mut cross = Matrix3::zeros();
    for y in 0..h {
        for x in 0..w {
            if region.get(x, y) && q_hat.validity().get(x, y) && q_tilde.validity().get(x, y) {
                let a = q_hat.points().at(x, y) - centroid_hat;
                let b = q_tilde.points().at(x, y) - centroid_tilde;
                cross += a * b.transpose();
            }
        }
    }

    let svd = cross.svd(true, true);
    let sv = svd.singular_values;
    // Collinear (or coincident) points leave the second singular value at
    // zero and the in-line rotation free. The comparison is phrased so a
    // NaN singular value also lands here instead of slipping past.
    let floor = 1e-12 * sv[0].max(f64::MIN_POSITIVE);
    if sv[1].partial_cmp(&floor) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::SingularConfiguration);
    }
    let u = svd.u.expect("3x3 SVD always yields U");
    let v_t = svd.v_t.expect("3x3 SVD always yields V^T");
    let v = v_t.transpose();
    let u_t = u.transpose();
    let det = (v * u_t).determinant();
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, if det < 0.0 { -1.0 } else { 1.0 }));
    let rotation = v * d * u_t;
    let translation = centroid_tilde - rotation * centroid_hat;
    // The SVD factors are orthonormal to machine precision, so this cannot
    // fail for well-conditioned input; surface the error otherwise.
    PoseSE3::new(rotation, translation)
}

fn rms_over_region(q_a: &PointCloud, q_b: &PointCloud, region: &Mask) -> f64 {
    let (w, h) = q_a.dims();
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            if region.get(x, y) && q_a.validity().get(x, y) && q_b.validity().get(x, y) {
                sum += (q_a.points().at(x, y) - q_b.points().at(x, y)).norm_squared();
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Full refinement pass: back-project both depth maps, pull the second
/// frame's cloud back along the flow, move the first cloud by the initial
/// pose, fit a rigid correction on the best-matching region, and compose it
/// onto the initial pose.
pub fn refine_pose_with(
    depth1: &DepthMap,
    depth2: &DepthMap,
    flow12: &FlowField,
    pose_init: &PoseSE3,
    k: &Intrinsics,
    non_occluded: &Mask,
    options: &AlignOptions,
) -> Result<AlignmentResult> {
    if options.iterations == 0 {
        return Err(Error::InvalidInput("iterations must be at least 1".into()));
    }
    check_dims("depth1 vs depth2", depth1.dims(), depth2.dims())?;
    let cloud1 = backproject(depth1, k)?;
    let cloud2 = backproject(depth2, k)?;
    let q_tilde = warp_cloud(&cloud2, flow12)?;

    let mut current = pose_init.clone();
    let mut region = Mask::all_false(depth1.dims().0, depth1.dims().1);
    let mut rms_before = 0.0;
    let mut rms_after = 0.0;
    for pass in 0..options.iterations {
        let q_hat = transform(&cloud1, &current);
        region = select_region_with(&q_hat, &q_tilde, non_occluded, options.region_fraction)?;
        let delta = align_svd(&q_hat, &q_tilde, &region)?;
        if pass == 0 {
            rms_before = rms_over_region(&q_hat, &q_tilde, &region);
        }
        current = delta.compose(&current);
        if pass + 1 == options.iterations {
            let q_hat_after = transform(&cloud1, &current);
            rms_after = rms_over_region(&q_hat_after, &q_tilde, &region);
        }
    }
    let delta_total = current.compose(&pose_init.inverse());
    Ok(AlignmentResult {
        delta: delta_total,
        refined: current,
        region,
        rms_before,
        rms_after,
    })
}

/// [`refine_pose_with`] under default options (quarter region, one pass).
pub fn refine_pose(
    depth1: &DepthMap,
    depth2: &DepthMap,
    flow12: &FlowField,
    pose_init: &PoseSE3,
    k: &Intrinsics,
    non_occluded: &Mask,
) -> Result<AlignmentResult> {
    refine_pose_with(
        depth1,
        depth2,
        flow12,
        pose_init,
        k,
        non_occluded,
        &AlignOptions::default(),
    )
}

/// Mean Euclidean flow error over a mask; `None` on empty support.
/// Convenience for comparing rigid flows under different poses.
pub fn masked_epe(flow: &FlowField, reference: &FlowField, mask: &Mask) -> Option<f64> {
    let (w, h) = flow.dims();
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                let (ua, va) = flow.get(x, y);
                let (ub, vb) = reference.get(x, y);
                sum += ((ua - ub).powi(2) + (va - vb).powi(2)).sqrt();
                n += 1;
            }
        }
    }
    if n == 0 {
        None
    } else {
        Some(sum / n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Grid;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k100(w: usize, h: usize) -> Intrinsics {
        Intrinsics::new(
            100.0,
            100.0,
            (w - 1) as f64 / 2.0,
            (h - 1) as f64 / 2.0,
            w,
            h,
        )
        .unwrap()
    }

    fn random_cloud(w: usize, h: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            Grid::from_fn(w, h, |_, _| {
                Vector3::new(
                    rng.random_range(-4.0..4.0),
                    rng.random_range(-4.0..4.0),
                    rng.random_range(1.0..10.0),
                )
            }),
            Mask::all_true(w, h),
        )
        .unwrap()
    }

    fn random_pose(rng: &mut ChaCha8Rng, max_angle: f64, max_trans: f64) -> PoseSE3 {
        let mut axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if axis.norm() < 1e-9 {
            axis = Vector3::x();
        }
        let w = axis.normalize() * rng.random_range(0.0..max_angle);
        let t = Vector3::new(
            rng.random_range(-max_trans..max_trans),
            rng.random_range(-max_trans..max_trans),
            rng.random_range(-max_trans..max_trans),
        );
        PoseSE3::from_params6(&[t.x, t.y, t.z, w.x, w.y, w.z]).unwrap()
    }

    #[test]
    fn rigid_flow_identity_pose_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let depth = DepthMap::dense(Grid::from_fn(21, 15, |_, _| rng.random_range(1.0..9.0)))
            .unwrap();
        let (flow, validity) = rigid_flow(&depth, &PoseSE3::identity(), &k100(21, 15)).unwrap();
        assert_eq!(validity.count(), 21 * 15);
        for y in 0..15 {
            for x in 0..21 {
                let (u, v) = flow.get(x, y);
                assert_relative_eq!(u, 0.0, epsilon = 1e-9);
                assert_relative_eq!(v, 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn rigid_flow_translation_on_constant_depth_is_uniform() {
        let depth = DepthMap::dense(Grid::filled(21, 15, 2.0)).unwrap();
        let pose = PoseSE3::from_params6(&[0.1, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let (flow, _) = rigid_flow(&depth, &pose, &k100(21, 15)).unwrap();
        // Points shift +0.1 m at depth 2 with fx = 100: +5 px everywhere.
        for y in 0..15 {
            for x in 0..21 {
                let (u, v) = flow.get(x, y);
                assert_relative_eq!(u, 5.0, epsilon = 1e-9);
                assert_relative_eq!(v, 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn rigid_flow_masks_points_pushed_behind_camera() {
        let depth = DepthMap::dense(Grid::filled(11, 9, 1.0)).unwrap();
        let pose = PoseSE3::from_params6(&[0.0, 0.0, -2.0, 0.0, 0.0, 0.0]).unwrap();
        let (flow, validity) = rigid_flow(&depth, &pose, &k100(11, 9)).unwrap();
        assert_eq!(validity.count(), 0);
        assert!(flow.u().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn select_region_keeps_smallest_quarter() {
        // Four eligible pixels with residuals 1, 2, 3, 4: keep exactly the
        // residual-1 pixel.
        let mut pts_a = Grid::filled(4, 1, Vector3::zeros());
        let mut pts_b = Grid::filled(4, 1, Vector3::zeros());
        for x in 0..4 {
            *pts_a.at_mut(x, 0) = Vector3::new(x as f64, 0.0, 5.0);
            *pts_b.at_mut(x, 0) = Vector3::new(x as f64, (x + 1) as f64, 5.0);
        }
        let a = PointCloud::new(pts_a, Mask::all_true(4, 1)).unwrap();
        let b = PointCloud::new(pts_b, Mask::all_true(4, 1)).unwrap();
        let region = select_region(&a, &b, &Mask::all_true(4, 1)).unwrap();
        assert_eq!(region.count(), 1);
        assert!(region.get(0, 0));
    }

    #[test]
    fn select_region_breaks_ties_in_raster_order() {
        let pts = Grid::filled(4, 2, Vector3::new(1.0, 2.0, 3.0));
        let a = PointCloud::new(pts.clone(), Mask::all_true(4, 2)).unwrap();
        let b = PointCloud::new(pts, Mask::all_true(4, 2)).unwrap();
        let region = select_region(&a, &b, &Mask::all_true(4, 2)).unwrap();
        assert_eq!(region.count(), 2);
        assert!(region.get(0, 0));
        assert!(region.get(1, 0));
    }

    #[test]
    fn select_region_empty_eligible_set_errors() {
        let a = random_cloud(4, 4, 2);
        let b = random_cloud(4, 4, 3);
        let err = select_region(&a, &b, &Mask::all_false(4, 4));
        assert!(matches!(err, Err(Error::EmptyRegion)));
    }

    #[test]
    fn align_svd_identity_on_identical_clouds() {
        let cloud = random_cloud(8, 6, 4);
        let pose = align_svd(&cloud, &cloud, &Mask::all_true(8, 6)).unwrap();
        assert!(pose.is_identity(1e-12));
    }

    #[test]
    fn align_svd_recovers_known_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let cloud = random_cloud(10, 8, rng.random());
            let truth = random_pose(&mut rng, 0.5, 1.0);
            let moved = transform(&cloud, &truth);
            let fit = align_svd(&cloud, &moved, &Mask::all_true(10, 8)).unwrap();
            let residual = fit.compose(&truth.inverse());
            assert!(residual.rotation_angle() < 1e-9);
            assert!(residual.translation_norm() < 1e-9);
        }
    }

    #[test]
    fn align_svd_tolerates_gaussian_noise() {
        // 10k points, isotropic sigma = 0.01 m: the fit averages the noise
        // down to well under 0.1 degrees and 2 mm.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cloud = random_cloud(100, 100, 7);
        let truth = random_pose(&mut rng, 0.5, 1.0);
        let noisy = PointCloud::new(
            Grid::from_fn(100, 100, |x, y| {
                truth.apply(cloud.points().at(x, y))
                    + Vector3::new(
                        0.01 * gaussian(&mut rng),
                        0.01 * gaussian(&mut rng),
                        0.01 * gaussian(&mut rng),
                    )
            }),
            Mask::all_true(100, 100),
        )
        .unwrap();
        let fit = align_svd(&cloud, &noisy, &Mask::all_true(100, 100)).unwrap();
        let residual = fit.compose(&truth.inverse());
        assert!(residual.rotation_angle().to_degrees() < 0.1);
        assert!(residual.translation_norm() < 0.002);
    }

    fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller; plenty for test noise.
        let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    #[test]
    fn align_svd_rejects_collinear_points() {
        let pts = Grid::from_fn(5, 1, |x, _| Vector3::new(x as f64, 0.0, 1.0));
        let cloud = PointCloud::new(pts, Mask::all_true(5, 1)).unwrap();
        let shifted = PointCloud::new(
            cloud.points().map(|p| p + Vector3::new(0.5, 0.0, 0.0)),
            Mask::all_true(5, 1),
        )
        .unwrap();
        let err = align_svd(&cloud, &shifted, &Mask::all_true(5, 1));
        assert!(matches!(err, Err(Error::SingularConfiguration)));
    }

    #[test]
    fn align_svd_rejects_too_few_points() {
        let cloud = random_cloud(4, 4, 8);
        let mut region = Mask::all_false(4, 4);
        region.set(0, 0, true);
        region.set(1, 1, true);
        let err = align_svd(&cloud, &cloud, &region);
        assert!(matches!(err, Err(Error::DegenerateRegion { points: 2, .. })));
    }

    #[test]
    fn refinement_reduces_region_rms() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = 16;
        let h = 12;
        let k = k100(w, h);
        let depth = DepthMap::dense(Grid::from_fn(w, h, |_, _| rng.random_range(2.0..6.0)))
            .unwrap();
        let truth = random_pose(&mut rng, 0.05, 0.2);
        // Perfect correspondences: the target cloud is the truth-moved
        // first cloud itself.
        let cloud1 = backproject(&depth, &k).unwrap();
        let moved = transform(&cloud1, &truth);
        let perturbed = random_pose(&mut rng, 0.03, 0.1).compose(&truth);
        let q_hat = transform(&cloud1, &perturbed);
        let region = select_region(&q_hat, &moved, &Mask::all_true(w, h)).unwrap();
        let delta = align_svd(&q_hat, &moved, &region).unwrap();
        let before = rms_over_region(&q_hat, &moved, &region);
        let corrected = transform(&q_hat, &delta);
        let after = rms_over_region(&corrected, &moved, &region);
        assert!(after <= before + 1e-12);
        assert!(after < 1e-9);
    }
}
