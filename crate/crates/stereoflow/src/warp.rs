//! Flow-driven bilinear warping and occlusion estimation.
//!
//! The warp follows the triangular-kernel form: for a flow `(u, v)` the
//! output at pixel `(x, y)` is
//!
//! ```text
//! out(x, y) = sum_{m,n} src(m, n) * max(0, 1 - |m - (x + u)|)
//!                                 * max(0, 1 - |n - (y + v)|)
//! ```
//!
//! which is ordinary bilinear sampling at `(x + u, y + v)` with zero padding
//! outside the raster. `in_bounds` marks pixels whose sample point has full
//! kernel support inside the raster, i.e. `x + u` in `[0, W-1]` and `y + v`
//! in `[0, H-1]`; photometric losses intersect their weights with it so
//! border samples never contribute.

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::raster::{check_dims, Grid, Mask};

/// A splat weight at or above this marks a pixel as visible (non-occluded)
/// in [`estimate_occlusion`].
pub const DEFAULT_OCCLUSION_THRESHOLD: f64 = 0.75;

/// Dense 2-D displacement field in pixels. `u` is the x (column)
/// displacement, `v` the y (row) displacement. All entries finite.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    u: Grid<f64>,
    v: Grid<f64>,
}

impl FlowField {
    pub fn new(u: Grid<f64>, v: Grid<f64>) -> Result<Self> {
        check_dims("flow u vs v", u.dims(), v.dims())?;
        if !u.all_finite() || !v.all_finite() {
            return Err(Error::InvalidInput("non-finite flow entries".into()));
        }
        Ok(Self { u, v })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            u: Grid::filled(width, height, 0.0),
            v: Grid::filled(width, height, 0.0),
        }
    }

    pub fn constant(width: usize, height: usize, u: f64, v: f64) -> Self {
        Self {
            u: Grid::filled(width, height, u),
            v: Grid::filled(width, height, v),
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> (f64, f64),
    ) -> Self {
        let mut u = Grid::filled(width, height, 0.0);
        let mut v = Grid::filled(width, height, 0.0);
        for y in 0..height {
            for x in 0..width {
                let (du, dv) = f(x, y);
                *u.at_mut(x, y) = du;
                *v.at_mut(x, y) = dv;
            }
        }
        Self { u, v }
    }

    pub fn u(&self) -> &Grid<f64> {
        &self.u
    }

    pub fn v(&self) -> &Grid<f64> {
        &self.v
    }

    pub fn u_mut(&mut self) -> &mut Grid<f64> {
        &mut self.u
    }

    pub fn v_mut(&mut self) -> &mut Grid<f64> {
        &mut self.v
    }

    pub fn dims(&self) -> (usize, usize) {
        self.u.dims()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        (*self.u.at(x, y), *self.v.at(x, y))
    }
}

/// Multi-channel image with values in `[0, 1]`, stored as one raster per
/// channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: Vec<Grid<f64>>,
}

impl Image {
    pub fn new(channels: Vec<Grid<f64>>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::InvalidInput("image needs at least one channel".into()))?;
        let dims = first.dims();
        for (i, c) in channels.iter().enumerate() {
            check_dims(&format!("image channel {i}"), dims, c.dims())?;
            if c.as_slice().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::InvalidInput(format!(
                    "image channel {i} has values outside [0, 1]"
                )));
            }
        }
        Ok(Self { channels })
    }

    pub fn gray(channel: Grid<f64>) -> Result<Self> {
        Self::new(vec![channel])
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, i: usize) -> &Grid<f64> {
        &self.channels[i]
    }

    pub fn channels(&self) -> &[Grid<f64>] {
        &self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        self.channels[0].dims()
    }

    pub fn width(&self) -> usize {
        self.channels[0].width()
    }

    pub fn height(&self) -> usize {
        self.channels[0].height()
    }
}

/// The (at most) 2x2 integer support of a bilinear sample at `(sx, sy)`.
///
/// `weight(m, n) = max(0, 1 - |m - sx|) * max(0, 1 - |n - sy|)` for the
/// four integer corners; corners outside the raster carry zero-padded
/// samples.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BilinearSupport {
    pub x0: i64,
    pub y0: i64,
    /// Fractional offsets of the sample inside the cell, both in `[0, 1)`.
    pub fx: f64,
    pub fy: f64,
}

impl BilinearSupport {
    #[inline]
    pub fn at(sx: f64, sy: f64) -> Self {
        let x0 = sx.floor();
        let y0 = sy.floor();
        Self {
            x0: x0 as i64,
            y0: y0 as i64,
            fx: sx - x0,
            fy: sy - y0,
        }
    }

    /// Corner weights in the fixed order (x0,y0), (x1,y0), (x0,y1), (x1,y1).
    #[inline]
    pub fn weights(&self) -> [f64; 4] {
        let (fx, fy) = (self.fx, self.fy);
        [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ]
    }

    /// Corner coordinates in the same order as [`BilinearSupport::weights`].
    #[inline]
    pub fn corners(&self) -> [(i64, i64); 4] {
        [
            (self.x0, self.y0),
            (self.x0 + 1, self.y0),
            (self.x0, self.y0 + 1),
            (self.x0 + 1, self.y0 + 1),
        ]
    }
}

#[inline]
pub(crate) fn in_raster(x: i64, y: i64, w: usize, h: usize) -> bool {
    x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h
}

/// Zero-padded bilinear sample of `grid` at continuous `(sx, sy)`.
///
/// Accumulated row by row so that a horizontal flip of raster and sample
/// position produces the bit-identical value.
#[inline]
pub(crate) fn bilinear_sample(grid: &Grid<f64>, sx: f64, sy: f64) -> f64 {
    let (w, h) = grid.dims();
    let s = BilinearSupport::at(sx, sy);
    let wts = s.weights();
    let cs = s.corners();
    let pick = |i: usize| {
        let (cx, cy) = cs[i];
        if in_raster(cx, cy, w, h) {
            wts[i] * *grid.at(cx as usize, cy as usize)
        } else {
            0.0
        }
    };
    (pick(0) + pick(1)) + (pick(2) + pick(3))
}

/// True when the sample at `(sx, sy)` has full kernel support inside a
/// `w x h` raster.
#[inline]
pub(crate) fn sample_in_bounds(sx: f64, sy: f64, w: usize, h: usize) -> bool {
    sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f64 && sy <= (h - 1) as f64
}

/// Warps a single raster by the flow: output at `(x, y)` samples the source
/// at `(x + u, y + v)`. Returns the warped raster and the `in_bounds` mask.
pub fn bilinear_warp_grid(source: &Grid<f64>, flow: &FlowField) -> Result<(Grid<f64>, Mask)> {
    check_dims("warp source vs flow", source.dims(), flow.dims())?;
    let (w, h) = source.dims();
    let mut out = Grid::filled(w, h, 0.0);
    let mut in_bounds = Mask::all_false(w, h);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.get(x, y);
            let sx = x as f64 + u;
            let sy = y as f64 + v;
            *out.at_mut(x, y) = bilinear_sample(source, sx, sy);
            in_bounds.set(x, y, sample_in_bounds(sx, sy, w, h));
        }
    }
    Ok((out, in_bounds))
}

/// Channel-wise [`bilinear_warp_grid`]; the `in_bounds` mask is shared by
/// all channels.
pub fn bilinear_warp(source: &Image, flow: &FlowField) -> Result<(Image, Mask)> {
    check_dims("warp source vs flow", source.dims(), flow.dims())?;
    let (w, h) = source.dims();
    let mut channels = Vec::with_capacity(source.num_channels());
    let mut in_bounds = Mask::all_false(w, h);
    for (ci, chan) in source.channels().iter().enumerate() {
        let (warped, ib) = bilinear_warp_grid(chan, flow)?;
        channels.push(warped);
        if ci == 0 {
            in_bounds = ib;
        }
    }
    // Warped samples can exceed [0, 1] only through padding truncation,
    // which cannot raise values; construction cannot fail.
    let image = Image { channels };
    Ok((image, in_bounds))
}

/// Warps a point cloud channel-wise (x, y, z separately). A warped pixel is
/// valid when its sample is in bounds and every source corner with positive
/// kernel weight is valid.
pub fn warp_cloud(cloud: &PointCloud, flow: &FlowField) -> Result<PointCloud> {
    check_dims("cloud vs flow", cloud.dims(), flow.dims())?;
    let (w, h) = cloud.dims();
    let mut points = Grid::filled(w, h, nalgebra::Vector3::zeros());
    let mut validity = Mask::all_false(w, h);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.get(x, y);
            let sx = x as f64 + u;
            let sy = y as f64 + v;
            if !sample_in_bounds(sx, sy, w, h) {
                continue;
            }
            let s = BilinearSupport::at(sx, sy);
            let wts = s.weights();
            let cs = s.corners();
            let mut acc = nalgebra::Vector3::zeros();
            let mut ok = true;
            for i in 0..4 {
                if wts[i] == 0.0 {
                    continue;
                }
                let (cx, cy) = cs[i];
                if !in_raster(cx, cy, w, h) || !cloud.validity().get(cx as usize, cy as usize) {
                    ok = false;
                    break;
                }
                acc += *cloud.points().at(cx as usize, cy as usize) * wts[i];
            }
            if ok {
                *points.at_mut(x, y) = acc;
                validity.set(x, y, true);
            }
        }
    }
    PointCloud::new(points, validity)
}

/// Splats each source pixel of the reverse flow onto its target with the
/// bilinear kernel and accumulates the received weight. Targets outside the
/// raster lose their mass.
pub fn coverage_map(flow21: &FlowField) -> Grid<f64> {
    let (w, h) = flow21.dims();
    let mut cover = Grid::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow21.get(x, y);
            let tx = x as f64 + u;
            let ty = y as f64 + v;
            let s = BilinearSupport::at(tx, ty);
            let wts = s.weights();
            let cs = s.corners();
            for i in 0..4 {
                let (cx, cy) = cs[i];
                if wts[i] > 0.0 && in_raster(cx, cy, w, h) {
                    *cover.at_mut(cx as usize, cy as usize) += wts[i];
                }
            }
        }
    }
    cover
}

/// Non-occlusion mask from the reverse flow: a first-frame pixel counts as
/// visible in the second frame when the splatted coverage reaches
/// `threshold`. Pixels nobody maps onto (coverage below threshold) are the
/// occluded ones.
pub fn estimate_occlusion_with(flow21: &FlowField, threshold: f64) -> Mask {
    let cover = coverage_map(flow21);
    let (w, h) = flow21.dims();
    Mask::from_fn(w, h, |x, y| *cover.at(x, y) >= threshold)
}

/// [`estimate_occlusion_with`] at [`DEFAULT_OCCLUSION_THRESHOLD`].
pub fn estimate_occlusion(flow21: &FlowField) -> Mask {
    estimate_occlusion_with(flow21, DEFAULT_OCCLUSION_THRESHOLD)
}

/// Per-pixel Euclidean norm of the difference of two flow fields.
pub fn flow_magnitude_diff(a: &FlowField, b: &FlowField) -> Result<Grid<f64>> {
    check_dims("flow difference", a.dims(), b.dims())?;
    let (w, h) = a.dims();
    Ok(Grid::from_fn(w, h, |x, y| {
        let (ua, va) = a.get(x, y);
        let (ub, vb) = b.get(x, y);
        ((ua - ub).powi(2) + (va - vb).powi(2)).sqrt()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ramp_image(w: usize, h: usize) -> Image {
        Image::gray(Grid::from_fn(w, h, |x, _| x as f64 / (w - 1) as f64)).unwrap()
    }

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::gray(Grid::from_fn(w, h, |_, _| rng.random_range(0.0..1.0))).unwrap()
    }

    #[test]
    fn zero_flow_is_identity_with_full_in_bounds() {
        let img = random_image(9, 7, 1);
        let flow = FlowField::zeros(9, 7);
        let (out, ib) = bilinear_warp(&img, &flow).unwrap();
        assert_eq!(out.channel(0), img.channel(0));
        assert_eq!(ib.count(), 9 * 7);
    }

    #[test]
    fn half_pixel_shift_on_ramp() {
        let img = ramp_image(11, 5);
        let flow = FlowField::constant(11, 5, 0.5, 0.0);
        let (out, ib) = bilinear_warp(&img, &flow).unwrap();
        for y in 0..5 {
            for x in 0..10 {
                // Sampling the linear ramp at x + 0.5 averages neighbors.
                let expected = (x as f64 + 0.5) / 10.0;
                assert_relative_eq!(*out.channel(0).at(x, y), expected, epsilon = 1e-12);
                assert!(ib.get(x, y));
            }
            assert!(!ib.get(10, y));
        }
    }

    #[test]
    fn far_out_of_bounds_sample_is_zero_and_flagged() {
        let img = random_image(6, 6, 2);
        let flow = FlowField::constant(6, 6, 15.0, 0.0);
        let (out, ib) = bilinear_warp(&img, &flow).unwrap();
        for (_, _, &v) in out.channel(0).enumerate() {
            assert_eq!(v, 0.0);
        }
        assert_eq!(ib.count(), 0);
    }

    #[test]
    fn warp_rejects_size_mismatch() {
        let img = random_image(6, 6, 3);
        let flow = FlowField::zeros(5, 6);
        assert!(matches!(
            bilinear_warp(&img, &flow),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn warp_is_linear_in_the_source() {
        let a = random_image(8, 8, 4);
        let b = random_image(8, 8, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let flow = FlowField::from_fn(8, 8, |_, _| {
            (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))
        });
        let (wa, _) = bilinear_warp_grid(a.channel(0), &flow).unwrap();
        let (wb, _) = bilinear_warp_grid(b.channel(0), &flow).unwrap();
        let (alpha, beta) = (0.3, 0.7);
        let combo = Grid::from_fn(8, 8, |x, y| {
            alpha * a.channel(0).at(x, y) + beta * b.channel(0).at(x, y)
        });
        let (wc, _) = bilinear_warp_grid(&combo, &flow).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_relative_eq!(
                    *wc.at(x, y),
                    alpha * wa.at(x, y) + beta * wb.at(x, y),
                    epsilon = 1e-12
                );
            }
        }
    }

    /// Flipping source and flow horizontally must flip the output exactly,
    /// bit for bit. Flow components live on a 1/64 lattice so the mirrored
    /// sample positions are the exact reflections of the originals; the
    /// row-pair accumulation then owes nothing to left-right order.
    #[test]
    fn warp_flip_equivariance_is_exact() {
        let w = 9;
        let h = 6;
        let img = random_image(w, h, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let flow = FlowField::from_fn(w, h, |_, _| {
            (
                rng.random_range(-192..=192) as f64 / 64.0,
                rng.random_range(-128..=128) as f64 / 64.0,
            )
        });
        let flip_grid =
            |g: &Grid<f64>| Grid::from_fn(w, h, |x, y| *g.at(w - 1 - x, y));
        let flipped_img = Image::gray(flip_grid(img.channel(0))).unwrap();
        let flipped_flow = FlowField::from_fn(w, h, |x, y| {
            let (u, v) = flow.get(w - 1 - x, y);
            (-u, v)
        });
        let (out, ib) = bilinear_warp_grid(img.channel(0), &flow).unwrap();
        let (out_f, ib_f) = bilinear_warp_grid(flipped_img.channel(0), &flipped_flow).unwrap();
        for y in 0..h {
            for x in 0..w {
                let a: f64 = *out.at(w - 1 - x, y);
                let b: f64 = *out_f.at(x, y);
                assert_eq!(a.to_bits(), b.to_bits(), "mismatch at ({x}, {y})");
                assert_eq!(ib.get(w - 1 - x, y), ib_f.get(x, y));
            }
        }
    }

    #[test]
    fn warp_cloud_zero_flow_preserves_points_and_validity() {
        let mut validity = Mask::all_true(5, 4);
        validity.set(2, 2, false);
        let points = Grid::from_fn(5, 4, |x, y| {
            nalgebra::Vector3::new(x as f64, y as f64, 1.0 + x as f64)
        });
        let cloud = PointCloud::new(points, validity.clone()).unwrap();
        let warped = warp_cloud(&cloud, &FlowField::zeros(5, 4)).unwrap();
        assert_eq!(warped.validity(), &validity);
        for y in 0..4 {
            for x in 0..5 {
                if validity.get(x, y) {
                    assert_eq!(warped.points().at(x, y), cloud.points().at(x, y));
                }
            }
        }
    }

    #[test]
    fn warp_cloud_integer_shift() {
        let points = Grid::from_fn(6, 3, |x, y| {
            nalgebra::Vector3::new(x as f64 * 0.1, y as f64 * 0.2, 2.0)
        });
        let cloud = PointCloud::new(points, Mask::all_true(6, 3)).unwrap();
        let warped = warp_cloud(&cloud, &FlowField::constant(6, 3, 2.0, 0.0)).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                assert!(warped.validity().get(x, y));
                assert_eq!(warped.points().at(x, y), cloud.points().at(x + 2, y));
            }
            assert!(!warped.validity().get(4, y));
            assert!(!warped.validity().get(5, y));
        }
    }

    #[test]
    fn warp_cloud_requires_valid_support() {
        let mut validity = Mask::all_true(6, 3);
        validity.set(3, 1, false);
        let points = Grid::filled(6, 3, nalgebra::Vector3::new(0.0, 0.0, 1.0));
        let cloud = PointCloud::new(points, validity).unwrap();
        let warped = warp_cloud(&cloud, &FlowField::constant(6, 3, 0.5, 0.0)).unwrap();
        // Pixels 2 and 3 both touch the invalid corner at x = 3.
        assert!(!warped.validity().get(2, 1));
        assert!(!warped.validity().get(3, 1));
        assert!(warped.validity().get(1, 1));
    }

    #[test]
    fn occlusion_zero_flow_keeps_everything_visible() {
        let flow = FlowField::zeros(7, 5);
        let cover = coverage_map(&flow);
        for (_, _, &v) in cover.enumerate() {
            assert_eq!(v, 1.0);
        }
        assert_eq!(estimate_occlusion(&flow).count(), 35);
    }

    #[test]
    fn occlusion_two_sources_one_target() {
        // Reverse flow sends both (1,0) and (3,0) onto (2,0): the doubly
        // covered pixel stays visible, the vacated pixel at (3,0) does not.
        let mut flow = FlowField::zeros(5, 1);
        *flow.u_mut().at_mut(1, 0) = 1.0;
        *flow.u_mut().at_mut(3, 0) = -1.0;
        let cover = coverage_map(&flow);
        assert_eq!(*cover.at(2, 0), 3.0);
        assert_eq!(*cover.at(1, 0), 0.0);
        assert_eq!(*cover.at(3, 0), 0.0);
        let visible = estimate_occlusion(&flow);
        assert!(visible.get(2, 0));
        assert!(!visible.get(1, 0));
        assert!(!visible.get(3, 0));
    }

    #[test]
    fn coverage_mass_is_conserved_or_lost_at_borders() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (w, h) = (12, 9);
        let flow = FlowField::from_fn(w, h, |_, _| {
            (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0))
        });
        let cover = coverage_map(&flow);
        let total: f64 = cover.as_slice().iter().sum();
        assert!(total <= (w * h) as f64 + 1e-9);
        assert!(cover.as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn flow_magnitude_diff_is_euclidean() {
        let a = FlowField::constant(3, 3, 3.0, 4.0);
        let b = FlowField::zeros(3, 3);
        let d = flow_magnitude_diff(&a, &b).unwrap();
        for (_, _, &v) in d.enumerate() {
            assert_relative_eq!(v, 5.0);
        }
        let zero = flow_magnitude_diff(&a, &a).unwrap();
        assert!(zero.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn image_validation() {
        let ok = Grid::filled(3, 3, 0.5);
        assert!(Image::new(vec![ok.clone(), ok.clone()]).is_ok());
        let bad = Grid::filled(3, 3, 1.5);
        assert!(Image::new(vec![bad]).is_err());
        let mismatched = Grid::filled(2, 3, 0.5);
        assert!(Image::new(vec![ok, mismatched]).is_err());
        assert!(Image::new(vec![]).is_err());
    }
}
