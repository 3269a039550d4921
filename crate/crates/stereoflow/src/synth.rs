//! Procedural stereo-video scenes with analytic ground truth.
//!
//! A scene is a set of textured surfaces: infinite background planes and
//! fronto-parallel rectangles, each rectangle carrying its own rigid motion
//! between the two frames. Rendering casts one ray per pixel per view and
//! derives every ground-truth raster from the hit points in closed form, so
//! depth, flow, occlusion, and the motion mask are exact rather than
//! resampled.
//!
//! On pixels whose surface does not move, `flow12` is computed through the
//! same arithmetic as [`rigid_flow`] and the two agree bit for bit.
//!
//! Rendering is pure per pixel; [`render_with_threads`] splits rows into
//! contiguous bands and produces identical bytes for every thread count.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{
    write_flow_png, write_image_png, write_intrinsics, write_mask_png, write_pfm,
    write_pose_file,
};
use crate::geometry::{
    depth_to_disparity, DepthMap, DisparityMap, Intrinsics, PoseSE3, StereoRig,
    MIN_PROJECTION_DEPTH,
};
use crate::raster::{Grid, Mask};
use crate::rigid::rigid_flow;
use crate::warp::{FlowField, Image};

/// Config schema version accepted by [`SceneConfig::from_toml_str`].
pub const SCENE_CONFIG_FORMAT_VERSION: u32 = 1;

/// Relative depth slack when deciding whether another surface hides a point.
/// A candidate occluder must be nearer than the point by more than this
/// factor; it absorbs the rounding of re-deriving the point as a ray hit.
const VISIBILITY_DEPTH_SLACK: f64 = 1e-9;

/// An infinite textured plane `normal . X = offset` in first-frame world
/// coordinates (the first left camera's frame). Planes never move.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneConfig {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub texture_seed: u64,
}

/// A textured fronto-parallel rectangle at depth `z`, spanning
/// `[x_min, x_max] x [y_min, y_max]` in first-frame world coordinates, and
/// carried by `motion` into the second frame. An identity motion makes the
/// rectangle part of the static scene.
#[derive(Clone, Debug, PartialEq)]
pub struct RectConfig {
    pub z: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub motion: PoseSE3,
    pub texture_seed: u64,
}

/// Full scene description: camera rig, camera motion between the frames,
/// and the surfaces.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub rig: StereoRig,
    /// Frame-1 to frame-2 pose of the left camera (maps points).
    pub camera_motion: PoseSE3,
    pub planes: Vec<PlaneConfig>,
    pub objects: Vec<RectConfig>,
}

/// Rendered scene: four views plus exact ground truth on the first left
/// frame (and depth for the second, for alignment pipelines).
///
/// Invariants: all depth maps are dense; `flow12` equals `rigid12` bitwise
/// wherever `moving1` is false; `moving1` is false wherever the hit surface
/// carries the identity motion.
#[derive(Clone, Debug)]
pub struct SceneSample {
    pub rig: StereoRig,
    pub camera_motion: PoseSE3,
    pub left1: Image,
    pub right1: Image,
    pub left2: Image,
    pub right2: Image,
    pub depth1: DepthMap,
    pub depth2: DepthMap,
    pub depth_right1: DepthMap,
    /// True optical flow of the first left frame, object motion included.
    pub flow12: FlowField,
    /// True optical flow of the second left frame back to the first.
    pub flow21: FlowField,
    /// Flow induced by the camera motion alone over the first frame's depth.
    pub rigid12: FlowField,
    /// True where the first-frame pixel's surface point stays visible in
    /// the second left frame (projects into it with nothing nearer) and
    /// its landing point's 2x2 sampling cell lies on that same surface,
    /// so bilinear lookups of second-frame rasters interpolate cleanly
    /// instead of mixing depths across an edge.
    pub non_occluded1: Mask,
    /// True where the pixel's surface moves independently.
    pub moving1: Mask,
}

// --- Procedural textures ----------------------------------------------------

const WAVES_PER_CHANNEL: usize = 8;

/// Peak deviation from mid-gray; keeps every sample inside [0.05, 0.95].
const TEXTURE_CONTRAST: f64 = 0.45;

#[derive(Clone, Copy, Debug)]
struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amplitude: f64,
}

/// Smooth band-limited color texture: per channel a seeded sum of plane
/// sinusoids over surface coordinates in meters. Infinitely differentiable,
/// so bilinear resampling error is second-order in the pixel pitch.
#[derive(Clone, Debug)]
pub struct ProceduralTexture {
    waves: Vec<Wave>,
}

impl ProceduralTexture {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut waves = Vec::with_capacity(3 * WAVES_PER_CHANNEL);
        for _ in 0..3 {
            let mut raw = [(0.0f64, 0.0f64, 0.0f64, 0.0f64); WAVES_PER_CHANNEL];
            let mut weight_sum = 0.0;
            for slot in raw.iter_mut() {
                let wavelength = rng.random_range(0.9..6.0);
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / wavelength;
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let weight = rng.random_range(0.5..1.5);
                *slot = (k * angle.cos(), k * angle.sin(), phase, weight);
                weight_sum += weight;
            }
            for (kx, ky, phase, weight) in raw {
                waves.push(Wave {
                    kx,
                    ky,
                    phase,
                    amplitude: TEXTURE_CONTRAST * weight / weight_sum,
                });
            }
        }
        Self { waves }
    }

    /// Sample one channel at surface coordinates `(u, v)`; always in
    /// `[0.05, 0.95]` because the channel amplitudes sum to the contrast.
    pub fn sample(&self, u: f64, v: f64, channel: usize) -> f64 {
        let mut acc = 0.5;
        for wave in &self.waves[channel * WAVES_PER_CHANNEL..(channel + 1) * WAVES_PER_CHANNEL] {
            acc += wave.amplitude * (wave.kx * u + wave.ky * v + wave.phase).sin();
        }
        acc
    }
}

// --- Scene internals --------------------------------------------------------

#[derive(Clone, Copy, PartialEq)]
enum Time {
    T1,
    T2,
}

enum Shape {
    Plane {
        /// Unit normal; offset rescaled to match.
        normal: Vector3<f64>,
        offset: f64,
        /// Orthonormal in-plane texture frame.
        e1: Vector3<f64>,
        e2: Vector3<f64>,
    },
    Rect {
        z: f64,
        x0: f64,
        x1: f64,
        y0: f64,
        y1: f64,
    },
}

struct Surface {
    shape: Shape,
    motion: PoseSE3,
    inv_motion: PoseSE3,
    moving: bool,
    texture: ProceduralTexture,
}

struct Ray {
    origin: Vector3<f64>,
    /// World direction of a camera ray with unit z in camera coordinates,
    /// so the ray parameter equals camera depth.
    dir: Vector3<f64>,
}

struct Hit {
    s: f64,
    /// Hit point in the surface's rest frame (its first-frame placement).
    rest: Vector3<f64>,
}

impl Surface {
    fn intersect(&self, ray: &Ray, time: Time) -> Option<Hit> {
        match &self.shape {
            Shape::Plane { normal, offset, .. } => {
                let denom = normal.dot(&ray.dir);
                let s = (offset - normal.dot(&ray.origin)) / denom;
                if s.is_finite() && s > MIN_PROJECTION_DEPTH {
                    Some(Hit {
                        s,
                        rest: ray.origin + ray.dir * s,
                    })
                } else {
                    None
                }
            }
            Shape::Rect { z, x0, x1, y0, y1 } => {
                // Intersect in the rectangle's rest frame: at the second
                // time the ray is pulled back through the object motion,
                // which preserves the parameter s.
                let (o, d) = if time == Time::T2 {
                    (
                        self.inv_motion.apply(&ray.origin),
                        self.inv_motion.rotation() * ray.dir,
                    )
                } else {
                    (ray.origin, ray.dir)
                };
                let s = (z - o.z) / d.z;
                if !(s.is_finite() && s > MIN_PROJECTION_DEPTH) {
                    return None;
                }
                let p = o + d * s;
                if p.x >= *x0 && p.x <= *x1 && p.y >= *y0 && p.y <= *y1 {
                    Some(Hit { s, rest: p })
                } else {
                    None
                }
            }
        }
    }

    fn tex_coords(&self, rest: &Vector3<f64>) -> (f64, f64) {
        match &self.shape {
            Shape::Plane { e1, e2, .. } => (rest.dot(e1), rest.dot(e2)),
            Shape::Rect { x0, y0, .. } => (rest.x - x0, rest.y - y0),
        }
    }
}

/// Deterministic orthonormal frame inside the plane with unit normal `n`.
fn plane_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let seed = if n.x.abs() <= n.y.abs() && n.x.abs() <= n.z.abs() {
        Vector3::x()
    } else if n.y.abs() <= n.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let e1 = (seed - n * seed.dot(n)).normalize();
    let e2 = n.cross(&e1);
    (e1, e2)
}

struct Camera {
    /// World to camera.
    pose: PoseSE3,
    /// Camera to world rotation.
    inv_rotation: Matrix3<f64>,
    /// Camera center in world coordinates.
    center: Vector3<f64>,
    time: Time,
    name: &'static str,
}

impl Camera {
    fn new(pose: PoseSE3, time: Time, name: &'static str) -> Self {
        let inv = pose.inverse();
        Self {
            inv_rotation: *inv.rotation(),
            center: *inv.translation(),
            pose,
            time,
            name,
        }
    }

    fn ray_through(&self, k: &Intrinsics, x: f64, y: f64) -> Ray {
        Ray {
            origin: self.center,
            dir: self.inv_rotation * k.ray(x, y),
        }
    }
}

fn nearest_hit(surfaces: &[Surface], ray: &Ray, time: Time) -> Option<(usize, Hit)> {
    let mut best: Option<(usize, Hit)> = None;
    for (idx, surface) in surfaces.iter().enumerate() {
        if let Some(hit) = surface.intersect(ray, time) {
            if best.as_ref().is_none_or(|(_, b)| hit.s < b.s) {
                best = Some((idx, hit));
            }
        }
    }
    best
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.planes.is_empty() && self.objects.is_empty() {
            return Err(Error::InvalidInput("scene has no surfaces".into()));
        }
        for (i, plane) in self.planes.iter().enumerate() {
            if !plane.normal.iter().all(|v| v.is_finite()) || plane.normal.norm() < 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "plane {i}: normal must be finite and nonzero"
                )));
            }
            if !plane.offset.is_finite() {
                return Err(Error::InvalidInput(format!("plane {i}: offset not finite")));
            }
        }
        for (i, rect) in self.objects.iter().enumerate() {
            let bounds = [rect.z, rect.x_min, rect.x_max, rect.y_min, rect.y_max];
            if !bounds.iter().all(|v| v.is_finite()) || rect.z <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "object {i}: bounds must be finite with positive depth"
                )));
            }
            if rect.x_min >= rect.x_max || rect.y_min >= rect.y_max {
                return Err(Error::InvalidInput(format!("object {i}: empty extent")));
            }
        }
        Ok(())
    }

    fn build_surfaces(&self) -> Vec<Surface> {
        let identity = PoseSE3::identity();
        let mut surfaces = Vec::with_capacity(self.planes.len() + self.objects.len());
        // Objects first so a rectangle coinciding with a plane wins ties.
        for rect in &self.objects {
            surfaces.push(Surface {
                shape: Shape::Rect {
                    z: rect.z,
                    x0: rect.x_min,
                    x1: rect.x_max,
                    y0: rect.y_min,
                    y1: rect.y_max,
                },
                inv_motion: rect.motion.inverse(),
                moving: rect.motion != identity,
                motion: rect.motion.clone(),
                texture: ProceduralTexture::new(rect.texture_seed),
            });
        }
        for plane in &self.planes {
            let norm = plane.normal.norm();
            let normal = plane.normal / norm;
            let (e1, e2) = plane_basis(&normal);
            surfaces.push(Surface {
                shape: Shape::Plane {
                    normal,
                    offset: plane.offset / norm,
                    e1,
                    e2,
                },
                motion: identity.clone(),
                inv_motion: identity.clone(),
                moving: false,
                texture: ProceduralTexture::new(plane.texture_seed),
            });
        }
        surfaces
    }

    fn build_cameras(&self) -> [Camera; 4] {
        let shift = PoseSE3::new(
            Matrix3::identity(),
            Vector3::new(-self.rig.baseline, 0.0, 0.0),
        )
        .expect("identity rotation is orthonormal");
        [
            Camera::new(PoseSE3::identity(), Time::T1, "left1"),
            Camera::new(shift.clone(), Time::T1, "right1"),
            Camera::new(self.camera_motion.clone(), Time::T2, "left2"),
            Camera::new(shift.compose(&self.camera_motion), Time::T2, "right2"),
        ]
    }
}

/// Runs `row` for every row index and concatenates the results in row
/// order. With more than one thread the rows are split into contiguous
/// bands; the output is identical for every thread count because each row
/// is computed independently.
fn par_rows<T, F>(height: usize, threads: usize, row: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<Vec<T>> + Sync,
{
    let threads = threads.clamp(1, height.max(1));
    if threads == 1 {
        let mut out = Vec::new();
        for y in 0..height {
            out.extend(row(y)?);
        }
        return Ok(out);
    }
    let row = &row;
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|b| {
                let y0 = b * height / threads;
                let y1 = (b + 1) * height / threads;
                scope.spawn(move || -> Result<Vec<T>> {
                    let mut band = Vec::new();
                    for y in y0..y1 {
                        band.extend(row(y)?);
                    }
                    Ok(band)
                })
            })
            .collect();
        let mut out = Vec::new();
        for handle in handles {
            out.extend(handle.join().expect("render worker panicked")?);
        }
        Ok(out)
    })
}

struct ViewPixel {
    color: [f64; 3],
    depth: f64,
    surface: usize,
    rest: Vector3<f64>,
}

fn render_view(
    k: &Intrinsics,
    surfaces: &[Surface],
    camera: &Camera,
    threads: usize,
) -> Result<Vec<ViewPixel>> {
    let (w, h) = k.dims();
    par_rows(h, threads, |y| {
        let mut band = Vec::with_capacity(w);
        for x in 0..w {
            let ray = camera.ray_through(k, x as f64, y as f64);
            let Some((idx, hit)) = nearest_hit(surfaces, &ray, camera.time) else {
                return Err(Error::NoCoverage {
                    x,
                    y,
                    view: camera.name.to_string(),
                });
            };
            let (tu, tv) = surfaces[idx].tex_coords(&hit.rest);
            let color =
                [0, 1, 2].map(|channel| surfaces[idx].texture.sample(tu, tv, channel));
            band.push(ViewPixel {
                color,
                depth: hit.s,
                surface: idx,
                rest: hit.rest,
            });
        }
        Ok(band)
    })
}

fn image_from(pixels: &[ViewPixel], w: usize, h: usize) -> Result<Image> {
    let channels = (0..3)
        .map(|c| Grid::from_fn(w, h, |x, y| pixels[y * w + x].color[c]))
        .collect();
    Image::new(channels)
}

fn depth_from(pixels: &[ViewPixel], w: usize, h: usize) -> Result<DepthMap> {
    DepthMap::dense(Grid::from_fn(w, h, |x, y| pixels[y * w + x].depth))
}

/// Renders a scene single-threaded. See [`render_with_threads`].
pub fn render(config: &SceneConfig) -> Result<SceneSample> {
    render_with_threads(config, 1)
}

/// Renders all four views and the ground-truth rasters.
///
/// Fails with [`Error::NoCoverage`] when some ray hits no surface, and
/// rejects configurations that push a ground-truth surface point to or
/// behind a camera (the true flow would be undefined there).
pub fn render_with_threads(config: &SceneConfig, threads: usize) -> Result<SceneSample> {
    if threads == 0 {
        return Err(Error::InvalidInput("thread count must be at least 1".into()));
    }
    config.validate()?;
    let k = &config.rig.intrinsics;
    let (w, h) = k.dims();
    let surfaces = config.build_surfaces();
    let cameras = config.build_cameras();

    let l1 = render_view(k, &surfaces, &cameras[0], threads)?;
    let r1 = render_view(k, &surfaces, &cameras[1], threads)?;
    let l2 = render_view(k, &surfaces, &cameras[2], threads)?;
    let r2 = render_view(k, &surfaces, &cameras[3], threads)?;

    let project_err = |x: usize, y: usize, cam: &Camera| {
        Error::InvalidInput(format!(
            "ground-truth point of pixel ({x}, {y}) does not project into {}",
            cam.name
        ))
    };

    // Forward flow, visibility, and the motion flag, all from the first
    // left frame's hit points.
    let cam_l2 = &cameras[2];
    let l1_ref = &l1;
    let l2_px = &l2;
    let surfaces_ref = &surfaces;
    let extras = par_rows(h, threads, move |y| {
        let mut band = Vec::with_capacity(w);
        for x in 0..w {
            let px = &l1_ref[y * w + x];
            let surface = &surfaces_ref[px.surface];
            let p2_world = surface.motion.apply(&px.rest);
            let p_c2 = cam_l2.pose.apply(&p2_world);
            if p_c2.z <= MIN_PROJECTION_DEPTH {
                return Err(project_err(x, y, cam_l2));
            }
            let u2 = k.fx * p_c2.x / p_c2.z + k.cx;
            let v2 = k.fy * p_c2.y / p_c2.z + k.cy;
            let flow = (u2 - x as f64, v2 - y as f64);
            let in_frame =
                u2 >= 0.0 && u2 <= (w - 1) as f64 && v2 >= 0.0 && v2 <= (h - 1) as f64;
            let visible = in_frame
                && {
                    let ray = cam_l2.ray_through(k, u2, v2);
                    match nearest_hit(surfaces_ref, &ray, Time::T2) {
                        // The point's own surface re-hits at s close to its
                        // depth, so only a strictly nearer hit means occlusion.
                        Some((_, hit)) => hit.s > p_c2.z * (1.0 - VISIBILITY_DEPTH_SLACK),
                        None => true,
                    }
                }
                && {
                    // Bilinear lookups of second-frame rasters read the 2x2
                    // cell around the landing point. A cell that straddles
                    // two surfaces interpolates across a depth edge, which
                    // no downstream consumer can treat as ground truth, so
                    // such pixels count as occluded.
                    let x0 = (u2.floor() as usize).min(w - 1);
                    let y0 = (v2.floor() as usize).min(h - 1);
                    let x1 = (x0 + 1).min(w - 1);
                    let y1 = (y0 + 1).min(h - 1);
                    [(x0, y0), (x1, y0), (x0, y1), (x1, y1)]
                        .into_iter()
                        .all(|(cx, cy)| l2_px[cy * w + cx].surface == px.surface)
                };
            band.push((flow, visible, surface.moving));
        }
        Ok(band)
    })?;

    // Reverse flow from the second left frame's hit points; their rest
    // positions are first-frame world coordinates already.
    let cam_l1 = &cameras[0];
    let l2_ref = &l2;
    let back_flow = par_rows(h, threads, move |y| {
        let mut band = Vec::with_capacity(w);
        for x in 0..w {
            let px = &l2_ref[y * w + x];
            let p_c1 = cam_l1.pose.apply(&px.rest);
            if p_c1.z <= MIN_PROJECTION_DEPTH {
                return Err(project_err(x, y, cam_l1));
            }
            let u1 = k.fx * p_c1.x / p_c1.z + k.cx;
            let v1 = k.fy * p_c1.y / p_c1.z + k.cy;
            band.push((u1 - x as f64, v1 - y as f64));
        }
        Ok(band)
    })?;

    let depth1 = depth_from(&l1, w, h)?;
    let depth2 = depth_from(&l2, w, h)?;
    let depth_right1 = depth_from(&r1, w, h)?;

    let (rigid12, rigid_valid) = rigid_flow(&depth1, &config.camera_motion, k)?;
    if rigid_valid.count() != w * h {
        return Err(Error::InvalidInput(
            "camera motion pushes part of the scene to or behind the second camera".into(),
        ));
    }

    let flow12 = FlowField::from_fn(w, h, |x, y| extras[y * w + x].0);
    let flow21 = FlowField::from_fn(w, h, |x, y| back_flow[y * w + x]);
    let non_occluded1 = Mask::from_fn(w, h, |x, y| extras[y * w + x].1);
    let moving1 = Mask::from_fn(w, h, |x, y| extras[y * w + x].2);

    Ok(SceneSample {
        rig: config.rig.clone(),
        camera_motion: config.camera_motion.clone(),
        left1: image_from(&l1, w, h)?,
        right1: image_from(&r1, w, h)?,
        left2: image_from(&l2, w, h)?,
        right2: image_from(&r2, w, h)?,
        depth1,
        depth2,
        depth_right1,
        flow12,
        flow21,
        rigid12,
        non_occluded1,
        moving1,
    })
}

/// Ground-truth disparity of the first left frame, `baseline * fx / depth`.
pub fn stereo_disparity_truth(sample: &SceneSample) -> Result<DisparityMap> {
    depth_to_disparity(&sample.depth1, &sample.rig)
}

/// Ground-truth disparity of the first right frame.
pub fn stereo_disparity_truth_right(sample: &SceneSample) -> Result<DisparityMap> {
    depth_to_disparity(&sample.depth_right1, &sample.rig)
}

fn random_unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Left-composes a seeded random error of exactly the requested rotation
/// angle (degrees) and translation norm (meters) onto a pose. The relative
/// pose between the result and the input is the error itself. Zero
/// magnitudes return the pose unchanged; the same seed always produces the
/// same error.
pub fn perturb_pose(pose: &PoseSE3, rot_deg: f64, trans_m: f64, seed: u64) -> Result<PoseSE3> {
    if !(rot_deg.is_finite() && (0.0..180.0).contains(&rot_deg)) {
        return Err(Error::InvalidInput(format!(
            "rotation magnitude must be in [0, 180) degrees, got {rot_deg}"
        )));
    }
    if !(trans_m.is_finite() && trans_m >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "translation magnitude must be non-negative, got {trans_m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = random_unit_vector(&mut rng);
    let dir = random_unit_vector(&mut rng);
    let w = axis * rot_deg.to_radians();
    let t = dir * trans_m;
    let delta = PoseSE3::from_params6(&[t.x, t.y, t.z, w.x, w.y, w.z])?;
    Ok(delta.compose(pose))
}

/// Writes every raster and the scene's calibration to `dir`:
/// images as 8-bit PNGs, depths and disparities as PFMs (invalid disparity
/// entries stored as 0), flows as 16-bit PNGs, masks as 8-bit PNGs, the
/// camera motion as a one-line pose file, and the intrinsics with baseline.
pub fn export(sample: &SceneSample, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let (w, h) = sample.depth1.dims();
    let dense = Mask::all_true(w, h);

    write_image_png(dir.join("left1.png"), &sample.left1)?;
    write_image_png(dir.join("right1.png"), &sample.right1)?;
    write_image_png(dir.join("left2.png"), &sample.left2)?;
    write_image_png(dir.join("right2.png"), &sample.right2)?;

    write_pfm(dir.join("depth1.pfm"), sample.depth1.values())?;
    write_pfm(dir.join("depth2.pfm"), sample.depth2.values())?;
    write_pfm(dir.join("depth_right1.pfm"), sample.depth_right1.values())?;

    write_flow_png(dir.join("flow12.png"), &sample.flow12, &dense)?;
    write_flow_png(dir.join("flow21.png"), &sample.flow21, &dense)?;
    write_flow_png(dir.join("rigid12.png"), &sample.rigid12, &dense)?;

    write_mask_png(dir.join("non_occluded1.png"), &sample.non_occluded1)?;
    write_mask_png(dir.join("moving1.png"), &sample.moving1)?;

    write_pose_file(
        dir.join("camera_motion.txt"),
        std::slice::from_ref(&sample.camera_motion),
    )?;
    write_intrinsics(
        dir.join("intrinsics.txt"),
        &sample.rig.intrinsics,
        Some(sample.rig.baseline),
    )?;

    write_pfm(
        dir.join("disparity1.pfm"),
        stereo_disparity_truth(sample)?.values(),
    )?;
    write_pfm(
        dir.join("disparity_right1.pfm"),
        stereo_disparity_truth_right(sample)?.values(),
    )?;
    Ok(())
}

// --- TOML config ------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CameraFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    baseline: f64,
}

#[derive(Serialize, Deserialize)]
struct MotionFile {
    /// `[tx, ty, tz, rx, ry, rz]`, rotation as an axis-angle vector in
    /// radians.
    camera: [f64; 6],
}

#[derive(Serialize, Deserialize)]
struct PlaneFile {
    normal: [f64; 3],
    offset: f64,
    /// Opaque 64-bit seed, bit-cast to signed because the file format has
    /// no unsigned integers.
    texture_seed: i64,
}

#[derive(Serialize, Deserialize)]
struct ObjectFile {
    z: f64,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    #[serde(default)]
    motion: [f64; 6],
    /// Opaque 64-bit seed, bit-cast to signed because the file format has
    /// no unsigned integers.
    texture_seed: i64,
}

#[derive(Serialize, Deserialize)]
struct SceneConfigFile {
    format_version: u32,
    camera: CameraFile,
    motion: MotionFile,
    #[serde(default, rename = "plane")]
    planes: Vec<PlaneFile>,
    #[serde(default, rename = "object")]
    objects: Vec<ObjectFile>,
}

impl SceneConfig {
    fn parse(text: &str) -> std::result::Result<Self, String> {
        let file: SceneConfigFile = toml::from_str(text).map_err(|e| e.to_string())?;
        if file.format_version != SCENE_CONFIG_FORMAT_VERSION {
            return Err(format!(
                "unsupported format_version {}, expected {SCENE_CONFIG_FORMAT_VERSION}",
                file.format_version
            ));
        }
        let c = &file.camera;
        let intrinsics =
            Intrinsics::new(c.fx, c.fy, c.cx, c.cy, c.width, c.height).map_err(|e| e.to_string())?;
        let rig = StereoRig::new(intrinsics, c.baseline).map_err(|e| e.to_string())?;
        let camera_motion =
            PoseSE3::from_params6(&file.motion.camera).map_err(|e| e.to_string())?;
        let planes = file
            .planes
            .iter()
            .map(|p| PlaneConfig {
                normal: Vector3::new(p.normal[0], p.normal[1], p.normal[2]),
                offset: p.offset,
                texture_seed: p.texture_seed as u64,
            })
            .collect();
        let objects = file
            .objects
            .iter()
            .map(|o| {
                Ok(RectConfig {
                    z: o.z,
                    x_min: o.x_min,
                    x_max: o.x_max,
                    y_min: o.y_min,
                    y_max: o.y_max,
                    motion: PoseSE3::from_params6(&o.motion).map_err(|e| e.to_string())?,
                    texture_seed: o.texture_seed as u64,
                })
            })
            .collect::<std::result::Result<Vec<_>, String>>()?;
        let config = SceneConfig {
            rig,
            camera_motion,
            planes,
            objects,
        };
        config.validate().map_err(|e| e.to_string())?;
        Ok(config)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::parse(text).map_err(Error::InvalidInput)
    }

    pub fn to_toml_string(&self) -> String {
        let file = SceneConfigFile {
            format_version: SCENE_CONFIG_FORMAT_VERSION,
            camera: CameraFile {
                fx: self.rig.intrinsics.fx,
                fy: self.rig.intrinsics.fy,
                cx: self.rig.intrinsics.cx,
                cy: self.rig.intrinsics.cy,
                width: self.rig.intrinsics.width,
                height: self.rig.intrinsics.height,
                baseline: self.rig.baseline,
            },
            motion: MotionFile {
                camera: self.camera_motion.to_params6(),
            },
            planes: self
                .planes
                .iter()
                .map(|p| PlaneFile {
                    normal: [p.normal.x, p.normal.y, p.normal.z],
                    offset: p.offset,
                    texture_seed: p.texture_seed as i64,
                })
                .collect(),
            objects: self
                .objects
                .iter()
                .map(|o| ObjectFile {
                    z: o.z,
                    x_min: o.x_min,
                    x_max: o.x_max,
                    y_min: o.y_min,
                    y_max: o.y_max,
                    motion: o.motion.to_params6(),
                    texture_seed: o.texture_seed as i64,
                })
                .collect(),
        };
        toml::to_string_pretty(&file).expect("scene config serializes")
    }

    /// Reads and validates a TOML scene config.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let scene_err = |message: String| Error::Format {
            format: "scene-toml",
            path: path.display().to_string(),
            message,
        };
        let bytes = fs::read(path).map_err(|e| scene_err(format!("cannot read: {e}")))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| scene_err("not valid UTF-8".to_string()))?;
        Self::parse(text).map_err(scene_err)
    }

    /// Writes the config as TOML (atomically).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::formats::write_atomic(path, self.to_toml_string().as_bytes())
    }
}

// --- Random test scenes -----------------------------------------------------

fn random_camera_motion(rng: &mut ChaCha8Rng) -> PoseSE3 {
    let t = random_unit_vector(rng) * rng.random_range(0.08..0.25);
    let w = random_unit_vector(rng) * rng.random_range(0.2f64..1.2).to_radians();
    PoseSE3::from_params6(&[t.x, t.y, t.z, w.x, w.y, w.z]).expect("finite parameters")
}

fn random_base(
    rng: &mut ChaCha8Rng,
    width: usize,
    height: usize,
) -> (StereoRig, PoseSE3, Vec<PlaneConfig>) {
    let fx = width as f64 * rng.random_range(0.45..0.62);
    let fy = fx * rng.random_range(0.95..1.05);
    let cx = (width - 1) as f64 / 2.0 + rng.random_range(-2.0..2.0);
    let cy = (height - 1) as f64 / 2.0 + rng.random_range(-1.0..1.0);
    let intrinsics =
        Intrinsics::new(fx, fy, cx, cy, width, height).expect("generated intrinsics are valid");
    let rig =
        StereoRig::new(intrinsics, rng.random_range(0.3..0.6)).expect("baseline is positive");
    // A slightly tilted far plane always covers the whole field of view of
    // all four cameras.
    let planes = vec![PlaneConfig {
        normal: Vector3::new(
            rng.random_range(-0.12..0.12),
            rng.random_range(-0.12..0.12),
            1.0,
        ),
        offset: rng.random_range(7.0..12.0),
        texture_seed: rng.random(),
    }];
    let motion = random_camera_motion(rng);
    (rig, motion, planes)
}

/// Rectangle whose first-frame projection is centered at `center_px` with
/// the given half extents in pixels.
fn rect_at(
    rig: &StereoRig,
    z: f64,
    center_px: (f64, f64),
    half_px_w: f64,
    half_px_h: f64,
    motion: PoseSE3,
    texture_seed: u64,
) -> RectConfig {
    let k = &rig.intrinsics;
    let cx_w = (center_px.0 - k.cx) / k.fx * z;
    let cy_w = (center_px.1 - k.cy) / k.fy * z;
    let hx = half_px_w / k.fx * z;
    let hy = half_px_h / k.fy * z;
    RectConfig {
        z,
        x_min: cx_w - hx,
        x_max: cx_w + hx,
        y_min: cy_w - hy,
        y_max: cy_w + hy,
        motion,
        texture_seed,
    }
}

fn rect_margins(rig: &StereoRig, half_px_w: f64, half_px_h: f64) -> (f64, f64) {
    let k = &rig.intrinsics;
    (
        (half_px_w + 2.0).min(k.width as f64 / 2.0 - 1.0),
        (half_px_h + 2.0).min(k.height as f64 / 2.0 - 1.0),
    )
}

fn random_rect(
    rng: &mut ChaCha8Rng,
    rig: &StereoRig,
    z: f64,
    half_px_w: f64,
    half_px_h: f64,
    motion: PoseSE3,
) -> RectConfig {
    let k = &rig.intrinsics;
    let (w, h) = (k.width as f64, k.height as f64);
    let (margin_x, margin_y) = rect_margins(rig, half_px_w, half_px_h);
    let center_px = (
        rng.random_range(margin_x..w - margin_x),
        rng.random_range(margin_y..h - margin_y),
    );
    let texture_seed = rng.random();
    rect_at(rig, z, center_px, half_px_w, half_px_h, motion, texture_seed)
}

/// Seeded random static scene: a tilted far plane, one or two static
/// rectangles at mid depth for parallax, and a small camera motion.
pub fn random_static_config(seed: u64, width: usize, height: usize) -> SceneConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rig, camera_motion, planes) = random_base(&mut rng, width, height);
    let n_rects = rng.random_range(1..3);
    let objects = (0..n_rects)
        .map(|_| {
            let z = rng.random_range(2.8..5.0);
            let half_w = width as f64 * rng.random_range(0.08..0.16);
            let half_h = height as f64 * rng.random_range(0.10..0.20);
            random_rect(&mut rng, &rig, z, half_w, half_h, PoseSE3::identity())
        })
        .collect();
    SceneConfig {
        rig,
        camera_motion,
        planes,
        objects,
    }
}

/// Seeded random scene with one independently moving rectangle whose
/// first-frame footprint covers roughly the given fraction range of the
/// image. The object's displacement is at least a meter, far above what
/// small camera-pose errors induce, so residual ranking separates it
/// cleanly from the static scene.
pub fn random_moving_config(
    seed: u64,
    width: usize,
    height: usize,
    coverage: (f64, f64),
) -> SceneConfig {
    assert!(
        coverage.0 > 0.0 && coverage.0 <= coverage.1 && coverage.1 <= 0.35,
        "coverage range must lie in (0, 0.35]"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rig, camera_motion, planes) = random_base(&mut rng, width, height);

    let cov = rng.random_range(coverage.0..=coverage.1);
    let area_px = cov * (width * height) as f64;
    let aspect = rng.random_range(0.7..1.5);
    let mut half_w = (area_px * aspect).sqrt() / 2.0;
    let mut half_h = area_px / (4.0 * half_w);
    let max_half_w = width as f64 * 0.42;
    let max_half_h = height as f64 * 0.42;
    if half_h > max_half_h {
        half_h = max_half_h;
        half_w = area_px / (4.0 * half_h);
    }
    half_w = half_w.min(max_half_w);

    let z = rng.random_range(2.5..4.0);
    let dx_mag = rng.random_range(1.3..2.2);
    let dy_mag = rng.random_range(0.1..0.45);
    let dz = rng.random_range(-0.15..0.15);
    let spin = random_unit_vector(&mut rng) * rng.random_range(0.0f64..0.5).to_radians();

    let k = &rig.intrinsics;
    let (wf, hf) = (k.width as f64, k.height as f64);
    let (margin_x, margin_y) = rect_margins(&rig, half_w, half_h);
    let center = (
        rng.random_range(margin_x..wf - margin_x),
        rng.random_range(margin_y..hf - margin_y),
    );
    // Point the displacement toward the far side of the frame on both
    // axes, so a healthy part of the object is still in view in the second
    // frame and its ground-truth motion mask keeps a non-occluded core.
    let sx = if center.0 <= (wf - 1.0) / 2.0 { 1.0 } else { -1.0 };
    let sy = if center.1 <= (hf - 1.0) / 2.0 { 1.0 } else { -1.0 };
    let motion = PoseSE3::from_params6(&[
        sx * dx_mag,
        sy * dy_mag,
        dz,
        spin.x,
        spin.y,
        spin.z,
    ])
    .expect("finite parameters");
    let texture_seed = rng.random();

    let objects = vec![rect_at(&rig, z, center, half_w, half_h, motion, texture_seed)];
    SceneConfig {
        rig,
        camera_motion,
        planes,
        objects,
    }
}
