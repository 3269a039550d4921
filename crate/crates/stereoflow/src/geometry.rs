//! Pinhole camera geometry and rigid transforms.
//!
//! Conventions:
//! * Pixel `(x, y)` is zero-based, `x` the column, `y` the row, centers at
//!   integer coordinates.
//! * Camera frames are right-handed with `z` forward (along the optical
//!   axis), `x` right, `y` down, matching the pixel axes.
//! * A [`PoseSE3`] between frames maps *points*: for a frame-1 to frame-2
//!   pose `T`, a point `q1` in frame-1 camera coordinates appears at
//!   `T.apply(q1)` in frame-2 camera coordinates.
//! * [`PoseSE3::compose`]`(a, b)` applies `b` first, then `a`.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::raster::{check_dims, Grid, Mask};

/// Points closer than this along the optical axis do not project.
pub const MIN_PROJECTION_DEPTH: f64 = 1e-6;

/// Orthonormality drift beyond this triggers re-orthonormalization in
/// [`PoseSE3::compose`]; `PoseSE3::new` rejects matrices that exceed it.
pub const ROTATION_DRIFT_TOL: f64 = 1e-9;

/// Pinhole intrinsics for one rectified camera.
#[derive(Clone, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidInput("non-finite intrinsics".into()));
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if width < 2 || height < 2 {
            return Err(Error::InvalidInput(format!(
                "image size must be at least 2x2, got {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Camera-frame ray direction through pixel center `(x, y)`, z = 1.
    #[inline]
    pub fn ray(&self, x: f64, y: f64) -> Vector3<f64> {
        Vector3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0)
    }
}

/// Rectified stereo pair: shared intrinsics plus baseline in meters.
/// The right camera sits at `+baseline` along the left camera's x axis.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoRig {
    pub intrinsics: Intrinsics,
    pub baseline: f64,
}

impl StereoRig {
    pub fn new(intrinsics: Intrinsics, baseline: f64) -> Result<Self> {
        if !baseline.is_finite() || baseline <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "baseline must be positive, got {baseline}"
            )));
        }
        Ok(Self {
            intrinsics,
            baseline,
        })
    }
}

pub(crate) fn orthonormality_drift(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r;
    let mut drift: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            drift = drift.max((gram[(i, j)] - target).abs());
        }
    }
    drift.max((r.determinant() - 1.0).abs())
}

/// Nearest rotation in Frobenius norm, via SVD with determinant correction.
pub(crate) fn reorthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let u = svd.u.expect("3x3 SVD always yields U");
    let v_t = svd.v_t.expect("3x3 SVD always yields V^T");
    let mut fixed = u * v_t;
    if fixed.determinant() < 0.0 {
        // Flip the axis of least significance to land on a proper rotation.
        let mut u2 = u;
        for i in 0..3 {
            u2[(i, 2)] = -u2[(i, 2)];
        }
        fixed = u2 * v_t;
    }
    fixed
}

/// Rigid transform: rotation then translation, `q' = R q + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSE3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates orthonormality (within [`ROTATION_DRIFT_TOL`]) and det = +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().all(|v| v.is_finite()) || !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite pose entries".into()));
        }
        let drift = orthonormality_drift(&rotation);
        if drift > ROTATION_DRIFT_TOL {
            return Err(Error::InvalidInput(format!(
                "rotation fails orthonormality check: drift {drift:.3e} exceeds {ROTATION_DRIFT_TOL:.0e}"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }


    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `compose(a, b)` applies `b` first, then `a` (matrix product `a * b`).
    /// Re-orthonormalizes when accumulated drift exceeds [`ROTATION_DRIFT_TOL`].
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        let mut rotation = self.rotation * other.rotation;
        if orthonormality_drift(&rotation) > ROTATION_DRIFT_TOL {
            rotation = reorthonormalize(&rotation);
        }
        PoseSE3 {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let r_t = self.rotation.transpose();
        PoseSE3 {
            rotation: r_t,
            translation: -(r_t * self.translation),
        }
    }

    /// Minimal parametrization `[tx, ty, tz, rx, ry, rz]`: literal translation
    /// plus rotation as an axis-angle vector in radians.
    pub fn from_params6(params: &[f64; 6]) -> Result<Self> {
        if !params.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite pose parameters".into()));
        }
        let axis_angle = Vector3::new(params[3], params[4], params[5]);
        let rotation = Rotation3::from_scaled_axis(axis_angle);
        Ok(Self {
            rotation: rotation.into_inner(),
            translation: Vector3::new(params[0], params[1], params[2]),
        })
    }

    /// Inverse of [`PoseSE3::from_params6`]. Round trips within 1e-10 for
    /// rotation angles below pi.
    pub fn to_params6(&self) -> [f64; 6] {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
            self.rotation,
        ));
        let w = q.scaled_axis();
        [
            self.translation.x,
            self.translation.y,
            self.translation.z,
            w.x,
            w.y,
            w.z,
        ]
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    pub fn translation_norm(&self) -> f64 {
        self.translation.norm()
    }

    /// True within `tol` of the identity in both angle and translation.
    pub fn is_identity(&self, tol: f64) -> bool {
        self.rotation_angle() <= tol && self.translation_norm() <= tol
    }
}

/// Per-pixel metric depth along the optical axis, with validity.
/// Valid entries are finite and strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    values: Grid<f64>,
    validity: Mask,
}

impl DepthMap {
    pub fn new(values: Grid<f64>, validity: Mask) -> Result<Self> {
        check_dims("depth values vs validity", values.dims(), validity.dims())?;
        for (x, y, &d) in values.enumerate() {
            if validity.get(x, y) && !(d.is_finite() && d > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "depth at ({x}, {y}) marked valid but is {d}"
                )));
            }
        }
        Ok(Self { values, validity })
    }

    /// All-valid map; every entry must be finite and positive.
    pub fn dense(values: Grid<f64>) -> Result<Self> {
        let validity = Mask::all_true(values.width(), values.height());
        Self::new(values, validity)
    }

    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    pub fn validity(&self) -> &Mask {
        &self.validity
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        if self.validity.get(x, y) {
            Some(*self.values.at(x, y))
        } else {
            None
        }
    }
}

/// Per-pixel stereo disparity in pixels, with validity.
/// Valid entries are finite, strictly positive, and below the image width.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityMap {
    values: Grid<f64>,
    validity: Mask,
}

impl DisparityMap {
    pub fn new(values: Grid<f64>, validity: Mask) -> Result<Self> {
        check_dims(
            "disparity values vs validity",
            values.dims(),
            validity.dims(),
        )?;
        let width = values.width() as f64;
        for (x, y, &d) in values.enumerate() {
            if validity.get(x, y) && !(d.is_finite() && d > 0.0 && d < width) {
                return Err(Error::InvalidInput(format!(
                    "disparity at ({x}, {y}) marked valid but is {d} (width {width})"
                )));
            }
        }
        Ok(Self { values, validity })
    }

    pub fn dense(values: Grid<f64>) -> Result<Self> {
        let validity = Mask::all_true(values.width(), values.height());
        Self::new(values, validity)
    }

    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    pub fn validity(&self) -> &Mask {
        &self.validity
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        if self.validity.get(x, y) {
            Some(*self.values.at(x, y))
        } else {
            None
        }
    }
}

/// Per-pixel 3-D points in camera coordinates, with validity.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Grid<Vector3<f64>>,
    validity: Mask,
}

impl PointCloud {
    pub fn new(points: Grid<Vector3<f64>>, validity: Mask) -> Result<Self> {
        check_dims("cloud points vs validity", points.dims(), validity.dims())?;
        Ok(Self { points, validity })
    }

    pub fn points(&self) -> &Grid<Vector3<f64>> {
        &self.points
    }

    pub fn validity(&self) -> &Mask {
        &self.validity
    }

    pub fn dims(&self) -> (usize, usize) {
        self.points.dims()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<Vector3<f64>> {
        if self.validity.get(x, y) {
            Some(*self.points.at(x, y))
        } else {
            None
        }
    }
}

/// Continuous pixel coordinates of projected points, with validity.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedPixels {
    pub u: Grid<f64>,
    pub v: Grid<f64>,
    pub validity: Mask,
}

impl ProjectedPixels {
    pub fn dims(&self) -> (usize, usize) {
        self.u.dims()
    }
}

/// Lifts each valid depth sample to a camera-frame 3-D point:
/// `(d*(x-cx)/fx, d*(y-cy)/fy, d)`. Invalid depths yield invalid points.
pub fn backproject(depth: &DepthMap, k: &Intrinsics) -> Result<PointCloud> {
    check_dims("depth vs intrinsics", k.dims(), depth.dims())?;
    let (w, h) = depth.dims();
    let mut points = Grid::filled(w, h, Vector3::zeros());
    for y in 0..h {
        for x in 0..w {
            if let Some(d) = depth.get(x, y) {
                *points.at_mut(x, y) = k.ray(x as f64, y as f64) * d;
            }
        }
    }
    PointCloud::new(points, depth.validity().clone())
}

/// Projects each valid point to continuous pixel coordinates
/// `(fx*X/Z + cx, fy*Y/Z + cy)`. Points with `Z <=` [`MIN_PROJECTION_DEPTH`]
/// are marked invalid.
pub fn project(cloud: &PointCloud, k: &Intrinsics) -> Result<ProjectedPixels> {
    check_dims("cloud vs intrinsics", k.dims(), cloud.dims())?;
    let (w, h) = cloud.dims();
    let mut u = Grid::filled(w, h, 0.0);
    let mut v = Grid::filled(w, h, 0.0);
    let mut validity = Mask::all_false(w, h);
    for y in 0..h {
        for x in 0..w {
            if let Some(p) = cloud.get(x, y) {
                if p.z > MIN_PROJECTION_DEPTH {
                    *u.at_mut(x, y) = k.fx * p.x / p.z + k.cx;
                    *v.at_mut(x, y) = k.fy * p.y / p.z + k.cy;
                    validity.set(x, y, true);
                }
            }
        }
    }
    Ok(ProjectedPixels { u, v, validity })
}

/// Applies a rigid transform to every valid point; validity passes through.
pub fn transform(cloud: &PointCloud, pose: &PoseSE3) -> PointCloud {
    let points = cloud.points().map(|p| pose.apply(p));
    PointCloud {
        points,
        validity: cloud.validity().clone(),
    }
}

/// `depth = baseline * fx / disparity`. Invalid disparities stay invalid.
pub fn disparity_to_depth(disparity: &DisparityMap, rig: &StereoRig) -> Result<DepthMap> {
    check_dims(
        "disparity vs intrinsics",
        rig.intrinsics.dims(),
        disparity.dims(),
    )?;
    let (w, h) = disparity.dims();
    let bf = rig.baseline * rig.intrinsics.fx;
    let mut values = Grid::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            if let Some(d) = disparity.get(x, y) {
                *values.at_mut(x, y) = bf / d;
            }
        }
    }
    DepthMap::new(values, disparity.validity().clone())
}

/// `disparity = baseline * fx / depth`. Inverse of [`disparity_to_depth`];
/// the round trip is exact to within 1e-12 relative error. Depths so small
/// that the disparity would reach the image width are marked invalid.
pub fn depth_to_disparity(depth: &DepthMap, rig: &StereoRig) -> Result<DisparityMap> {
    check_dims("depth vs intrinsics", rig.intrinsics.dims(), depth.dims())?;
    let (w, h) = depth.dims();
    let bf = rig.baseline * rig.intrinsics.fx;
    let mut values = Grid::filled(w, h, 0.0);
    let mut validity = Mask::all_false(w, h);
    for y in 0..h {
        for x in 0..w {
            if let Some(z) = depth.get(x, y) {
                let d = bf / z;
                if d < w as f64 {
                    *values.at_mut(x, y) = d;
                    validity.set(x, y, true);
                }
            }
        }
    }
    DisparityMap::new(values, validity)
}
