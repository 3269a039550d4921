//! Closed-form gradients of the loss terms.
//!
//! Every function returns the term value together with its derivative so
//! callers never pair a gradient with a stale value. Conventions shared
//! by all of them:
//!
//! * `sign(0) = 0` for the subgradient of absolute values, so exact fixed
//!   points have exactly zero gradient;
//! * the sampling-support and mask structure is treated as locally
//!   constant, which is the correct derivative everywhere off the measure-
//!   zero set where bilinear cells or mask decisions switch;
//! * the refined rigid flow acts as a constant inside the consistency
//!   term, so its gradient there is identically zero by definition.

use super::ssim::{channel_stats, SSIM_C1, SSIM_C2};
use super::stereo::{disparity_flow, lr_direction, sample_disparity_row_detailed};
use super::{
    consistency_loss, photometric_loss, smoothness_loss, stereo_loss_with, LossInputs, LossTerm,
    LossWeights, StereoLossBreakdown, StereoLossParams,
};
use crate::error::{Error, Result};
use crate::geometry::{DepthMap, Intrinsics, PoseSE3};
use crate::raster::{check_dims, Grid, Mask};
use crate::rigid::rigid_flow;
use crate::warp::{bilinear_warp, in_raster, BilinearSupport, FlowField, Image};
use nalgebra::{Matrix3, Vector3};

/// Derivative of a scalar loss with respect to a flow field.
#[derive(Clone, Debug)]
pub struct FlowGradient {
    pub du: Grid<f64>,
    pub dv: Grid<f64>,
}

impl FlowGradient {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            du: Grid::filled(width, height, 0.0),
            dv: Grid::filled(width, height, 0.0),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.du.dims()
    }

    /// Largest absolute entry over both components.
    pub fn max_abs(&self) -> f64 {
        self.du
            .as_slice()
            .iter()
            .chain(self.dv.as_slice())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Derivative of a scalar loss with respect to both disparity rasters.
#[derive(Clone, Debug)]
pub struct DisparityGradient {
    pub left: Grid<f64>,
    pub right: Grid<f64>,
}

impl DisparityGradient {
    pub fn max_abs(&self) -> f64 {
        self.left
            .as_slice()
            .iter()
            .chain(self.right.as_slice())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[inline]
fn sgn(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Backpropagates the SSIM-plus-L1 photometric mean through to the
/// reconstructed image. Returns the term (identical to
/// [`photometric_loss`] on the same inputs) and one gradient grid per
/// channel.
fn psi_wrt_recon(
    target: &Image,
    recon: &Image,
    weight: &Grid<f64>,
    alpha: f64,
) -> Result<(LossTerm, Vec<Grid<f64>>)> {
    let term = photometric_loss(target, recon, weight, alpha)?;
    let (w, h) = target.dims();
    let channels = target.num_channels();
    let mut grads = vec![Grid::filled(w, h, 0.0); channels];
    if term.is_empty() {
        return Ok((term, grads));
    }
    let wsum = term.weight_sum;
    let c = channels as f64;
    let ssim_pref = -alpha / (2.0 * c) / wsum;
    let l1_pref = -(1.0 - alpha) / c / wsum;
    let r = 1i64;
    for (ci, grad) in grads.iter_mut().enumerate() {
        let tc = target.channel(ci);
        let wc = recon.channel(ci);
        let stats = channel_stats(tc, wc, 1);
        for py in 0..h as i64 {
            for px in 0..w as i64 {
                let wp = *weight.at(px as usize, py as usize);
                if wp == 0.0 {
                    continue;
                }
                let mx = *stats.mu_x.at(px as usize, py as usize);
                let my = *stats.mu_y.at(px as usize, py as usize);
                let vx = *stats.var_x.at(px as usize, py as usize);
                let vy = *stats.var_y.at(px as usize, py as usize);
                let cov = *stats.cov.at(px as usize, py as usize);
                let n = *stats.count.at(px as usize, py as usize);
                let s = *stats.s.at(px as usize, py as usize);
                let a1 = 2.0 * mx * my + SSIM_C1;
                let a2 = 2.0 * cov + SSIM_C2;
                let b1 = mx * mx + my * my + SSIM_C1;
                let b2 = vx + vy + SSIM_C2;
                let scale = ssim_pref * wp * 2.0 / (n * b1 * b2);
                for wy in (py - r).max(0)..=(py + r).min(h as i64 - 1) {
                    for wx in (px - r).max(0)..=(px + r).min(w as i64 - 1) {
                        let xr = *tc.at(wx as usize, wy as usize);
                        let yr = *wc.at(wx as usize, wy as usize);
                        // dS/dy_r; grouped so both brackets cancel exactly
                        // when target and recon are bit-identical.
                        let ds = (mx * a2 - s * (my * b2)) + (a1 * (xr - mx) - s * (b1 * (yr - my)));
                        *grad.at_mut(wx as usize, wy as usize) += scale * ds;
                    }
                }
            }
        }
        for y in 0..h {
            for x in 0..w {
                let wr = *weight.at(x, y);
                if wr == 0.0 {
                    continue;
                }
                *grad.at_mut(x, y) += l1_pref * wr * sgn(tc.at(x, y) - wc.at(x, y));
            }
        }
    }
    Ok((term, grads))
}

/// Chains per-channel reconstruction gradients through the bilinear
/// sampler to the flow that drove it.
fn recon_grad_to_flow(source: &Image, flow: &FlowField, grecon: &[Grid<f64>]) -> FlowGradient {
    let (w, h) = flow.dims();
    let mut out = FlowGradient::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let sx = x as f64 + flow.u().at(x, y);
            let sy = y as f64 + flow.v().at(x, y);
            let sup = BilinearSupport::at(sx, sy);
            let corners = sup.corners();
            let mut du = 0.0;
            let mut dv = 0.0;
            for (ci, g) in grecon.iter().enumerate() {
                let gq = *g.at(x, y);
                if gq == 0.0 {
                    continue;
                }
                let pick = |idx: usize| -> f64 {
                    let (cx, cy) = corners[idx];
                    if in_raster(cx, cy, w, h) {
                        *source.channel(ci).at(cx as usize, cy as usize)
                    } else {
                        0.0
                    }
                };
                let (p00, p10, p01, p11) = (pick(0), pick(1), pick(2), pick(3));
                let dsx = (1.0 - sup.fy) * (p10 - p00) + sup.fy * (p11 - p01);
                let dsy = (1.0 - sup.fx) * (p01 - p00) + sup.fx * (p11 - p10);
                du += gq * dsx;
                dv += gq * dsy;
            }
            *out.du.at_mut(x, y) = du;
            *out.dv.at_mut(x, y) = dv;
        }
    }
    out
}

/// Photometric reconstruction term and its gradient with respect to the
/// warping flow. The effective weight is `weight` intersected with the
/// warp's coverage, exactly as in the forward evaluation.
pub fn photometric_wrt_flow(
    target: &Image,
    source: &Image,
    flow: &FlowField,
    weight: &Grid<f64>,
    alpha: f64,
) -> Result<(LossTerm, FlowGradient)> {
    check_dims("photometric source", target.dims(), source.dims())?;
    check_dims("photometric flow", target.dims(), flow.dims())?;
    let (recon, coverage) = bilinear_warp(source, flow)?;
    let (w, h) = target.dims();
    let w_eff = Grid::from_fn(w, h, |x, y| {
        if coverage.get(x, y) {
            *weight.at(x, y)
        } else {
            0.0
        }
    });
    let (term, grecon) = psi_wrt_recon(target, &recon, &w_eff, alpha)?;
    let fg = recon_grad_to_flow(source, flow, &grecon);
    Ok((term, fg))
}

/// Edge-aware second-order smoothness term and its flow gradient.
pub fn smoothness_wrt_flow(
    flow: &FlowField,
    image: &Image,
    region: &Mask,
    beta: f64,
) -> Result<(LossTerm, FlowGradient)> {
    let term = smoothness_loss(flow, image, region, beta)?;
    let (w, h) = flow.dims();
    let n = (w * h) as f64;
    let mut fg = FlowGradient::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            if !region.get(x, y) {
                continue;
            }
            for axis in 0..2 {
                let (Some(ddu), Some(ddv)) = (
                    super::second_difference(flow.u(), x, y, axis),
                    super::second_difference(flow.v(), x, y, axis),
                ) else {
                    continue;
                };
                let e = (-beta * super::edge_gradient(image, x, y, axis).expect("interior")).exp();
                let (pa, pb) = match axis {
                    0 => ((x + 1, y), (x - 1, y)),
                    _ => ((x, y + 1), (x, y - 1)),
                };
                let su = sgn(ddu) * e / n;
                let sv = sgn(ddv) * e / n;
                *fg.du.at_mut(pa.0, pa.1) += su;
                *fg.du.at_mut(pb.0, pb.1) += su;
                *fg.du.at_mut(x, y) -= 2.0 * su;
                *fg.dv.at_mut(pa.0, pa.1) += sv;
                *fg.dv.at_mut(pb.0, pb.1) += sv;
                *fg.dv.at_mut(x, y) -= 2.0 * sv;
            }
        }
    }
    Ok((term, fg))
}

/// Rigid-consistency term and its gradient with respect to the optical
/// flow.
pub fn consistency_wrt_flow(
    flow_opt: &FlowField,
    flow_rigid_refined: &FlowField,
    moving: &Mask,
) -> Result<(LossTerm, FlowGradient)> {
    let term = consistency_loss(flow_opt, flow_rigid_refined, moving)?;
    let (w, h) = flow_opt.dims();
    let n = (w * h) as f64;
    let mut fg = FlowGradient::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            if moving.get(x, y) {
                continue;
            }
            *fg.du.at_mut(x, y) =
                sgn(flow_opt.u().at(x, y) - flow_rigid_refined.u().at(x, y)) / n;
            *fg.dv.at_mut(x, y) =
                sgn(flow_opt.v().at(x, y) - flow_rigid_refined.v().at(x, y)) / n;
        }
    }
    Ok((term, fg))
}

/// Rigid-consistency term with the gradient of its teacher side: zero by
/// definition, since the refined rigid flow is held constant there.
pub fn consistency_wrt_refined_rigid_flow(
    flow_opt: &FlowField,
    flow_rigid_refined: &FlowField,
    moving: &Mask,
) -> Result<(LossTerm, FlowGradient)> {
    let term = consistency_loss(flow_opt, flow_rigid_refined, moving)?;
    let (w, h) = flow_opt.dims();
    Ok((term, FlowGradient::zeros(w, h)))
}

/// Full stereo objective and its gradient with respect to both disparity
/// rasters. Entries whose disparity is invalid get a zero gradient: the
/// evaluation never reads them.
pub fn stereo_wrt_disparity(
    left: &Image,
    right: &Image,
    disp_left: &crate::geometry::DisparityMap,
    disp_right: &crate::geometry::DisparityMap,
    params: &StereoLossParams,
) -> Result<(StereoLossBreakdown, DisparityGradient)> {
    let breakdown = stereo_loss_with(left, right, disp_left, disp_right, params)?;
    let (w, h) = left.dims();
    let mut grad = DisparityGradient {
        left: Grid::filled(w, h, 0.0),
        right: Grid::filled(w, h, 0.0),
    };

    // Reconstruction: chain each direction through the warp, flip the
    // sign for the left view (its flow is minus the disparity).
    {
        let flow_l = disparity_flow(disp_left, -1.0);
        let (_, fg) =
            photometric_wrt_flow(left, right, &flow_l, &disp_left.validity().to_weights(), params.alpha)?;
        for y in 0..h {
            for x in 0..w {
                if disp_left.validity().get(x, y) {
                    *grad.left.at_mut(x, y) -= params.recon_weight * fg.du.at(x, y);
                }
            }
        }
        let flow_r = disparity_flow(disp_right, 1.0);
        let (_, fg) =
            photometric_wrt_flow(right, left, &flow_r, &disp_right.validity().to_weights(), params.alpha)?;
        for y in 0..h {
            for x in 0..w {
                if disp_right.validity().get(x, y) {
                    *grad.right.at_mut(x, y) += params.recon_weight * fg.du.at(x, y);
                }
            }
        }
    }

    // Smoothness: scatter the sign of each central difference to its two
    // stencil neighbors.
    let n = (w * h) as f64;
    let smooth_scatter = |disp: &crate::geometry::DisparityMap,
                              image: &Image,
                              out: &mut Grid<f64>| {
        for y in 0..h {
            for x in 0..w {
                for axis in 0..2 {
                    let (pa, pb) = match axis {
                        0 => {
                            if x == 0 || x + 1 >= w {
                                continue;
                            }
                            ((x + 1, y), (x - 1, y))
                        }
                        _ => {
                            if y == 0 || y + 1 >= h {
                                continue;
                            }
                            ((x, y + 1), (x, y - 1))
                        }
                    };
                    if !disp.validity().get(pa.0, pa.1) || !disp.validity().get(pb.0, pb.1) {
                        continue;
                    }
                    let diff =
                        (disp.values().at(pa.0, pa.1) - disp.values().at(pb.0, pb.1)) / 2.0;
                    let e = (-params.edge_beta
                        * super::edge_gradient(image, x, y, axis).expect("interior"))
                    .exp();
                    let s = params.smooth_weight * sgn(diff) * e / (2.0 * n);
                    *out.at_mut(pa.0, pa.1) += s;
                    *out.at_mut(pb.0, pb.1) -= s;
                }
            }
        }
    };
    smooth_scatter(disp_left, left, &mut grad.left);
    smooth_scatter(disp_right, right, &mut grad.right);

    // Left-right consistency: each supported pixel couples its own
    // disparity (directly and through the sample position) with the two
    // columns it samples in the other view.
    let lr_scatter = |own: &crate::geometry::DisparityMap,
                          other: &crate::geometry::DisparityMap,
                          sign: f64,
                          own_grad_is_left: bool,
                          grad: &mut DisparityGradient| {
        let (_, count) = lr_direction(own, other, sign);
        if count == 0 {
            return;
        }
        let k = params.lr_weight / count as f64;
        for y in 0..h {
            for x in 0..w {
                if !own.validity().get(x, y) {
                    continue;
                }
                let d = *own.values().at(x, y);
                let Some(sample) = sample_disparity_row_detailed(other, x as f64 + sign * d, y)
                else {
                    continue;
                };
                let s = sgn(d - sample.value);
                let slope = other.values().at(sample.x1, y) - other.values().at(sample.x0, y);
                let (own_g, other_g) = if own_grad_is_left {
                    (&mut grad.left, &mut grad.right)
                } else {
                    (&mut grad.right, &mut grad.left)
                };
                *own_g.at_mut(x, y) += k * s * (1.0 - sign * slope);
                *other_g.at_mut(sample.x0, y) -= k * s * (1.0 - sample.fx);
                *other_g.at_mut(sample.x1, y) -= k * s * sample.fx;
            }
        }
    };
    lr_scatter(disp_left, disp_right, -1.0, true, &mut grad);
    lr_scatter(disp_right, disp_left, 1.0, false, &mut grad);

    Ok((breakdown, grad))
}

#[inline]
fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Derivatives of the rotation matrix with respect to the three
/// components of its axis-angle vector.
///
/// Uses the exact closed form
/// `dR/dw_i = ((w_i [w]x + [w x ((I - R) e_i)]x) / |w|^2) R`,
/// falling back to `[e_i]x R` near zero where that expression degenerates
/// but the limit is plain.
pub(crate) fn rotation_derivatives(axis: Vector3<f64>) -> [Matrix3<f64>; 3] {
    let r = nalgebra::Rotation3::from_scaled_axis(axis).into_inner();
    let theta2 = axis.norm_squared();
    std::array::from_fn(|i| {
        let mut e = Vector3::zeros();
        e[i] = 1.0;
        if theta2 < 1e-16 {
            skew(&e) * r
        } else {
            let m = (skew(&axis) * axis[i] + skew(&axis.cross(&((Matrix3::identity() - r) * e))))
                / theta2;
            m * r
        }
    })
}

/// Photometric cost of rigidly re-projecting the first frame into the
/// second and comparing with the target.
///
/// `weight` is intersected with both the warp's coverage and the rigid
/// flow's own validity (invalid depth or points behind the camera).
pub fn rigid_reconstruction_value(
    target: &Image,
    source: &Image,
    depth: &DepthMap,
    pose: &PoseSE3,
    k: &Intrinsics,
    weight: &Grid<f64>,
    alpha: f64,
) -> Result<LossTerm> {
    let (flow, fvalid) = rigid_flow(depth, pose, k)?;
    let (w, h) = flow.dims();
    let w_eff = Grid::from_fn(w, h, |x, y| {
        if fvalid.get(x, y) {
            *weight.at(x, y)
        } else {
            0.0
        }
    });
    let (recon, coverage) = bilinear_warp(source, &flow)?;
    let w_eff = Grid::from_fn(w, h, |x, y| {
        if coverage.get(x, y) {
            *w_eff.at(x, y)
        } else {
            0.0
        }
    });
    photometric_loss(target, &recon, &w_eff, alpha)
}

/// [`rigid_reconstruction_value`] and its gradient with respect to the
/// six pose parameters `[tx, ty, tz, rx, ry, rz]`.
///
/// The chain runs loss -> reconstruction -> flow -> projected point ->
/// pose, with the projection Jacobian
/// `[[fx/Z, 0, -fx X/Z^2], [0, fy/Z, -fy Y/Z^2]]` evaluated at each
/// transformed point.
pub fn rigid_reconstruction_wrt_pose(
    target: &Image,
    source: &Image,
    depth: &DepthMap,
    params: &[f64; 6],
    k: &Intrinsics,
    weight: &Grid<f64>,
    alpha: f64,
) -> Result<(LossTerm, [f64; 6])> {
    check_dims("rigid recon depth", target.dims(), depth.dims())?;
    check_dims("rigid recon intrinsics", target.dims(), k.dims())?;
    check_dims("rigid recon weight", target.dims(), weight.dims())?;
    let pose = PoseSE3::from_params6(params)?;
    let (flow, fvalid) = rigid_flow(depth, &pose, k)?;
    let (w, h) = flow.dims();
    let w_eff = Grid::from_fn(w, h, |x, y| {
        if fvalid.get(x, y) {
            *weight.at(x, y)
        } else {
            0.0
        }
    });
    let (term, fg) = photometric_wrt_flow(target, source, &flow, &w_eff, alpha)?;

    let rot = pose.rotation();
    let dr = rotation_derivatives(Vector3::new(params[3], params[4], params[5]));
    let mut g = [0.0; 6];
    for y in 0..h {
        for x in 0..w {
            if !fvalid.get(x, y) {
                continue;
            }
            let du = *fg.du.at(x, y);
            let dv = *fg.dv.at(x, y);
            if du == 0.0 && dv == 0.0 {
                continue;
            }
            let d = depth.get(x, y).expect("rigid flow validity implies depth");
            let q = k.ray(x as f64, y as f64) * d;
            let p = rot * q + pose.translation();
            let (fx_z, fy_z) = (k.fx / p.z, k.fy / p.z);
            let (ju_z, jv_z) = (-k.fx * p.x / (p.z * p.z), -k.fy * p.y / (p.z * p.z));
            // dflow/dP = J; dP/dt_i = e_i; dP/dw_i = (dR/dw_i) q.
            g[0] += du * fx_z;
            g[1] += dv * fy_z;
            g[2] += du * ju_z + dv * jv_z;
            for i in 0..3 {
                let dp = dr[i] * q;
                g[3 + i] += du * (fx_z * dp.x + ju_z * dp.z) + dv * (fy_z * dp.y + jv_z * dp.z);
            }
        }
    }
    Ok((term, g))
}

/// Which term of the objective a gradient request refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossKind {
    Photometric,
    Smoothness,
    Consistency,
    Stereo,
    RigidReconstruction,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Photometric => "photometric",
            Self::Smoothness => "smoothness",
            Self::Consistency => "consistency",
            Self::Stereo => "stereo",
            Self::RigidReconstruction => "rigid_reconstruction",
        }
    }
}

/// Which input a gradient request differentiates with respect to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WrtInput {
    OpticalFlow,
    RefinedRigidFlow,
    Disparity,
    Pose,
}

impl WrtInput {
    pub fn name(self) -> &'static str {
        match self {
            Self::OpticalFlow => "optical_flow",
            Self::RefinedRigidFlow => "refined_rigid_flow",
            Self::Disparity => "disparity",
            Self::Pose => "pose",
        }
    }
}

/// A term value together with its derivative with respect to one input.
#[derive(Debug)]
pub struct GradientBundle {
    pub kind: LossKind,
    pub wrt: WrtInput,
    pub value: f64,
    pub entry: GradientEntry,
}

#[derive(Debug)]
pub enum GradientEntry {
    Flow(FlowGradient),
    Disparity(DisparityGradient),
    Pose([f64; 6]),
}

/// Everything the dispatcher may need beyond the shared loss inputs.
/// The pose-path fields stay `None` unless a pose gradient is wanted.
pub struct GradientContext<'a> {
    pub inputs: &'a LossInputs<'a>,
    pub weights: &'a LossWeights,
    pub depth1: Option<&'a DepthMap>,
    pub intrinsics: Option<&'a Intrinsics>,
    pub pose_params: Option<[f64; 6]>,
}

/// Routes a (term, input) pair to the matching closed-form gradient.
/// Pairs the objective does not couple return
/// [`Error::UnsupportedGradient`].
pub fn gradient(kind: LossKind, ctx: &GradientContext, wrt: WrtInput) -> Result<GradientBundle> {
    let inputs = ctx.inputs;
    let (w, h) = inputs.left1.dims();
    let moving = match inputs.moving {
        Some(m) => m.clone(),
        None => Mask::all_false(w, h),
    };
    match (kind, wrt) {
        (LossKind::Photometric, WrtInput::OpticalFlow) => {
            let (term, fg) = photometric_wrt_flow(
                inputs.left1,
                inputs.left2,
                inputs.flow_opt,
                &inputs.non_occluded.to_weights(),
                ctx.weights.alpha,
            )?;
            Ok(GradientBundle {
                kind,
                wrt,
                value: term.value,
                entry: GradientEntry::Flow(fg),
            })
        }
        (LossKind::Smoothness, WrtInput::OpticalFlow) => {
            let region = match inputs.moving {
                Some(m) => m.clone(),
                None => Mask::all_true(w, h),
            };
            let (term, fg) =
                smoothness_wrt_flow(inputs.flow_opt, inputs.left1, &region, ctx.weights.beta)?;
            Ok(GradientBundle {
                kind,
                wrt,
                value: term.value,
                entry: GradientEntry::Flow(fg),
            })
        }
        (LossKind::Consistency, WrtInput::OpticalFlow) => {
            let (term, fg) =
                consistency_wrt_flow(inputs.flow_opt, inputs.flow_rigid_refined, &moving)?;
            Ok(GradientBundle {
                kind,
                wrt,
                value: term.value,
                entry: GradientEntry::Flow(fg),
            })
        }
        (LossKind::Consistency, WrtInput::RefinedRigidFlow) => {
            let (term, fg) = consistency_wrt_refined_rigid_flow(
                inputs.flow_opt,
                inputs.flow_rigid_refined,
                &moving,
            )?;
            Ok(GradientBundle {
                kind,
                wrt,
                value: term.value,
                entry: GradientEntry::Flow(fg),
            })
        }
        (LossKind::Stereo, WrtInput::Disparity) => {
            let params = StereoLossParams {
                alpha: ctx.weights.alpha,
                ..Default::default()
            };
            let (breakdown, dg) = stereo_wrt_disparity(
                inputs.left1,
                inputs.right1,
                inputs.disp_left,
                inputs.disp_right,
                &params,
            )?;
            Ok(GradientBundle {
                kind,
                wrt,
                value: breakdown.total,
                entry: GradientEntry::Disparity(dg),
            })
        }
        (LossKind::RigidReconstruction, WrtInput::Pose) => {
            let (depth, k, params) = match (ctx.depth1, ctx.intrinsics, ctx.pose_params) {
                (Some(d), Some(k), Some(p)) => (d, k, p),
                _ => {
                    return Err(Error::InvalidInput(
                        "pose gradient needs depth, intrinsics, and pose parameters in the context"
                            .into(),
                    ))
                }
            };
            let weight = inputs.non_occluded.and(&moving.not()).to_weights();
            let (term, g) = rigid_reconstruction_wrt_pose(
                inputs.left1,
                inputs.left2,
                depth,
                &params,
                k,
                &weight,
                ctx.weights.alpha,
            )?;
            Ok(GradientBundle {
                kind,
                wrt,
                value: term.value,
                entry: GradientEntry::Pose(g),
            })
        }
        _ => Err(Error::UnsupportedGradient {
            loss: kind.name(),
            input: wrt.name(),
        }),
    }
}
