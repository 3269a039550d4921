//! Training objective: photometric, smoothness, stereo, and consistency
//! terms plus their weighted combination.
//!
//! Every term is a plain function of its inputs with a deterministic
//! raster-order reduction, so repeated evaluation is bit-identical. Terms
//! whose support happens to be empty evaluate to zero and say so through
//! [`LossTerm::is_empty`] instead of producing NaN.

mod grad;
mod ssim;
mod stereo;

pub use grad::{
    consistency_wrt_flow, consistency_wrt_refined_rigid_flow, gradient, photometric_wrt_flow,
    rigid_reconstruction_value, rigid_reconstruction_wrt_pose, smoothness_wrt_flow,
    stereo_wrt_disparity, DisparityGradient, FlowGradient, GradientBundle, GradientContext,
    GradientEntry, LossKind, WrtInput,
};
pub use ssim::{ssim, ssim_with_radius, DEFAULT_SSIM_RADIUS};
pub use stereo::{stereo_loss, stereo_loss_with, StereoLossBreakdown, StereoLossParams};

use crate::error::{Error, Result};
use crate::raster::{check_dims, Grid, Mask};
use crate::warp::{bilinear_warp, FlowField, Image};
use serde::{Deserialize, Serialize};

/// Scalar weights and shared parameters of the combined objective.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the optical-flow smoothness term.
    pub lambda_smooth: f64,
    /// Weight of the stereo (disparity) term.
    pub lambda_stereo: f64,
    /// Weight applied to each of the two rigid reconstruction terms.
    pub lambda_rigid: f64,
    /// Weight of the rigid-consistency term.
    pub lambda_consistency: f64,
    /// SSIM-vs-L1 mix of the photometric terms, in [0, 1].
    pub alpha: f64,
    /// Edge sensitivity of the flow smoothness weight.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_smooth: 10.0,
            lambda_stereo: 1.0,
            lambda_rigid: 10.0,
            lambda_consistency: 0.01,
            alpha: 0.85,
            beta: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            self.lambda_smooth,
            self.lambda_stereo,
            self.lambda_rigid,
            self.lambda_consistency,
        ];
        if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidInput(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        if !self.alpha.is_finite() || !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidInput(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::InvalidInput(format!(
                "beta must be finite and non-negative, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// One evaluated loss term: its value and how much support it had.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub value: f64,
    /// Sum of the per-pixel weights (for normalized terms) or the fixed
    /// normalizer (for area-normalized terms).
    pub weight_sum: f64,
    /// Number of pixels with a strictly positive contribution weight.
    pub support_pixels: u64,
}

impl LossTerm {
    pub fn zero() -> Self {
        Self {
            value: 0.0,
            weight_sum: 0.0,
            support_pixels: 0,
        }
    }

    /// True when nothing contributed; the value is then a defined 0.
    pub fn is_empty(&self) -> bool {
        self.support_pixels == 0
    }
}

/// Everything [`total_loss`] needs, borrowed from the caller.
///
/// `moving` is optional: before any motion segmentation exists, pass
/// `None` and the combination behaves as if no pixel were flagged moving
/// for the reconstruction and consistency terms while the smoothness term
/// covers the full frame.
pub struct LossInputs<'a> {
    /// First left frame (the reconstruction target).
    pub left1: &'a Image,
    /// Second left frame (the reconstruction source).
    pub left2: &'a Image,
    /// First right frame.
    pub right1: &'a Image,
    pub disp_left: &'a crate::geometry::DisparityMap,
    pub disp_right: &'a crate::geometry::DisparityMap,
    /// Optical flow, first left frame to second.
    pub flow_opt: &'a FlowField,
    /// Rigid flow from the initial pose.
    pub flow_rigid: &'a FlowField,
    /// Rigid flow from the refined pose.
    pub flow_rigid_refined: &'a FlowField,
    /// Pixels of frame 1 still visible in frame 2.
    pub non_occluded: &'a Mask,
    /// Pixels flagged as independently moving, if segmentation ran.
    pub moving: Option<&'a Mask>,
}

/// Per-term support counts of a [`LossReport`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossSupport {
    pub opt_photometric: u64,
    pub opt_smoothness: u64,
    pub stereo: u64,
    pub rigid_init: u64,
    pub rigid_refined: u64,
    pub consistency: u64,
}

/// All term values, the weighted total, and the support behind each term.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossReport {
    pub format_version: u32,
    pub opt_photometric: f64,
    pub opt_smoothness: f64,
    pub stereo: f64,
    pub rigid_init: f64,
    pub rigid_refined: f64,
    pub consistency: f64,
    pub total: f64,
    pub support: LossSupport,
}

pub const LOSS_REPORT_FORMAT_VERSION: u32 = 1;

/// The weighted combination rule, exposed so the report's total can be
/// cross-checked against its own term values.
pub fn weighted_total(
    weights: &LossWeights,
    opt_photometric: f64,
    opt_smoothness: f64,
    stereo: f64,
    rigid_init: f64,
    rigid_refined: f64,
    consistency: f64,
) -> f64 {
    opt_photometric
        + weights.lambda_smooth * opt_smoothness
        + weights.lambda_stereo * stereo
        + weights.lambda_rigid * (rigid_init + rigid_refined)
        + weights.lambda_consistency * consistency
}

/// Weighted SSIM-plus-L1 photometric distance between a target image and
/// its reconstruction.
///
/// Per pixel the term is `alpha * (1 - ssim) / 2` plus
/// `(1 - alpha)` times the channel-mean absolute difference; the result
/// is the weighted mean over pixels with the given weights. A weight
/// raster summing to zero yields the empty [`LossTerm`].
pub fn photometric_loss(
    target: &Image,
    recon: &Image,
    weight: &Grid<f64>,
    alpha: f64,
) -> Result<LossTerm> {
    check_dims("photometric image pair", target.dims(), recon.dims())?;
    check_dims("photometric weight", target.dims(), weight.dims())?;
    if target.num_channels() != recon.num_channels() {
        return Err(Error::InvalidInput(format!(
            "photometric loss needs matching channel counts, got {} and {}",
            target.num_channels(),
            recon.num_channels()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if weight.as_slice().iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidInput(
            "photometric weights must be finite and non-negative".into(),
        ));
    }
    let ssim_map = ssim(target, recon)?;
    let (w, h) = target.dims();
    let channels = target.num_channels() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut support = 0u64;
    for y in 0..h {
        for x in 0..w {
            let wt = *weight.at(x, y);
            if wt > 0.0 {
                support += 1;
            }
            let mut l1 = 0.0;
            for ci in 0..target.num_channels() {
                l1 += (target.channel(ci).at(x, y) - recon.channel(ci).at(x, y)).abs();
            }
            l1 /= channels;
            let term = alpha * 0.5 * (1.0 - ssim_map.at(x, y)) + (1.0 - alpha) * l1;
            num += wt * term;
            den += wt;
        }
    }
    if den == 0.0 {
        return Ok(LossTerm::zero());
    }
    Ok(LossTerm {
        value: num / den,
        weight_sum: den,
        support_pixels: support,
    })
}

/// Mean absolute image gradient along one axis at one pixel, using the
/// symmetric two-neighbor difference. Axis 0 is x, axis 1 is y.
pub(crate) fn edge_gradient(image: &Image, x: usize, y: usize, axis: usize) -> Option<f64> {
    let (w, h) = image.dims();
    let (pa, pb) = match axis {
        0 => {
            if x == 0 || x + 1 >= w {
                return None;
            }
            ((x + 1, y), (x - 1, y))
        }
        _ => {
            if y == 0 || y + 1 >= h {
                return None;
            }
            ((x, y + 1), (x, y - 1))
        }
    };
    let mut g = 0.0;
    for ci in 0..image.num_channels() {
        g += ((image.channel(ci).at(pa.0, pa.1) - image.channel(ci).at(pb.0, pb.1)) / 2.0).abs();
    }
    Some(g / image.num_channels() as f64)
}

/// Second difference of one flow component along one axis at one pixel.
pub(crate) fn second_difference(grid: &Grid<f64>, x: usize, y: usize, axis: usize) -> Option<f64> {
    let (w, h) = grid.dims();
    match axis {
        0 => {
            if x == 0 || x + 1 >= w {
                return None;
            }
            Some(grid.at(x + 1, y) + grid.at(x - 1, y) - 2.0 * grid.at(x, y))
        }
        _ => {
            if y == 0 || y + 1 >= h {
                return None;
            }
            Some(grid.at(x, y + 1) + grid.at(x, y - 1) - 2.0 * grid.at(x, y))
        }
    }
}

/// Edge-aware second-order flow smoothness over a pixel region.
///
/// Each interior pixel of `region` contributes, per axis, the absolute
/// second difference of both flow components damped by
/// `exp(-beta * g)` where `g` is the channel-mean absolute image gradient
/// along that axis. The sum is normalized by the full pixel count of the
/// raster, not the region size, so the term scales with how much of the
/// frame it covers.
pub fn smoothness_loss(
    flow: &FlowField,
    image: &Image,
    region: &Mask,
    beta: f64,
) -> Result<LossTerm> {
    check_dims("smoothness flow vs image", flow.dims(), image.dims())?;
    check_dims("smoothness region", flow.dims(), region.dims())?;
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::InvalidInput(format!(
            "beta must be finite and non-negative, got {beta}"
        )));
    }
    let (w, h) = flow.dims();
    let n = (w * h) as f64;
    let mut sum = 0.0;
    let mut support = 0u64;
    for y in 0..h {
        for x in 0..w {
            if !region.get(x, y) {
                continue;
            }
            let mut contributed = false;
            for axis in 0..2 {
                let (Some(du), Some(dv)) = (
                    second_difference(flow.u(), x, y, axis),
                    second_difference(flow.v(), x, y, axis),
                ) else {
                    continue;
                };
                let g = edge_gradient(image, x, y, axis).expect("same interior as flow");
                sum += (du.abs() + dv.abs()) * (-beta * g).exp();
                contributed = true;
            }
            if contributed {
                support += 1;
            }
        }
    }
    Ok(LossTerm {
        value: sum / n,
        weight_sum: n,
        support_pixels: support,
    })
}

/// Mean absolute deviation between optical flow and refined rigid flow
/// outside the moving region, normalized by the full pixel count.
///
/// The rigid flow acts as a fixed teacher here: its gradient is defined
/// to be zero (see [`consistency_wrt_refined_rigid_flow`]).
pub fn consistency_loss(
    flow_opt: &FlowField,
    flow_rigid_refined: &FlowField,
    moving: &Mask,
) -> Result<LossTerm> {
    check_dims(
        "consistency flow pair",
        flow_opt.dims(),
        flow_rigid_refined.dims(),
    )?;
    check_dims("consistency moving mask", flow_opt.dims(), moving.dims())?;
    let (w, h) = flow_opt.dims();
    let n = (w * h) as f64;
    let mut sum = 0.0;
    let mut support = 0u64;
    for y in 0..h {
        for x in 0..w {
            if moving.get(x, y) {
                continue;
            }
            support += 1;
            let du = flow_opt.u().at(x, y) - flow_rigid_refined.u().at(x, y);
            let dv = flow_opt.v().at(x, y) - flow_rigid_refined.v().at(x, y);
            sum += du.abs() + dv.abs();
        }
    }
    Ok(LossTerm {
        value: sum / n,
        weight_sum: n,
        support_pixels: support,
    })
}

/// Photometric terms for the two rigid reconstructions of the first left
/// frame, both restricted to visible, non-moving pixels.
pub fn rigid_loss(
    target: &Image,
    recon_init: &Image,
    recon_refined: &Image,
    non_occluded: &Mask,
    moving: &Mask,
    alpha: f64,
) -> Result<(LossTerm, LossTerm)> {
    let weight = non_occluded.and(&moving.not()).to_weights();
    Ok((
        photometric_loss(target, recon_init, &weight, alpha)?,
        photometric_loss(target, recon_refined, &weight, alpha)?,
    ))
}

/// Evaluates every term of the objective and combines them with the given
/// weights.
///
/// Reconstruction weights intersect the visibility mask with the warp's
/// own coverage so pixels that sample outside the source frame do not
/// contribute.
pub fn total_loss(inputs: &LossInputs, weights: &LossWeights) -> Result<LossReport> {
    weights.validate()?;
    let dims = inputs.left1.dims();
    check_dims("loss inputs: second left frame", dims, inputs.left2.dims())?;
    check_dims("loss inputs: right frame", dims, inputs.right1.dims())?;
    check_dims("loss inputs: optical flow", dims, inputs.flow_opt.dims())?;
    check_dims("loss inputs: rigid flow", dims, inputs.flow_rigid.dims())?;
    check_dims(
        "loss inputs: refined rigid flow",
        dims,
        inputs.flow_rigid_refined.dims(),
    )?;
    check_dims(
        "loss inputs: visibility mask",
        dims,
        inputs.non_occluded.dims(),
    )?;
    if let Some(moving) = inputs.moving {
        check_dims("loss inputs: moving mask", dims, moving.dims())?;
    }
    let (w, h) = dims;

    let moving = match inputs.moving {
        Some(m) => m.clone(),
        None => Mask::all_false(w, h),
    };
    // Without a segmentation the smoothness region is the whole frame;
    // with one it shrinks to the moving pixels, where rigid flow offers
    // no guidance and the flow must rely on its own regularity.
    let smooth_region = match inputs.moving {
        Some(m) => m.clone(),
        None => Mask::all_true(w, h),
    };

    let (recon_opt, cover_opt) = bilinear_warp(inputs.left2, inputs.flow_opt)?;
    let opt_ph = photometric_loss(
        inputs.left1,
        &recon_opt,
        &inputs.non_occluded.and(&cover_opt).to_weights(),
        weights.alpha,
    )?;
    let opt_sm = smoothness_loss(inputs.flow_opt, inputs.left1, &smooth_region, weights.beta)?;
    let stereo = stereo_loss(
        inputs.left1,
        inputs.right1,
        inputs.disp_left,
        inputs.disp_right,
        weights.alpha,
    )?;

    let static_visible = inputs.non_occluded.and(&moving.not());
    let (recon_rig, cover_rig) = bilinear_warp(inputs.left2, inputs.flow_rigid)?;
    let rigid_init = photometric_loss(
        inputs.left1,
        &recon_rig,
        &static_visible.and(&cover_rig).to_weights(),
        weights.alpha,
    )?;
    let (recon_ref, cover_ref) = bilinear_warp(inputs.left2, inputs.flow_rigid_refined)?;
    let rigid_refined = photometric_loss(
        inputs.left1,
        &recon_ref,
        &static_visible.and(&cover_ref).to_weights(),
        weights.alpha,
    )?;
    let consistency = consistency_loss(inputs.flow_opt, inputs.flow_rigid_refined, &moving)?;

    let total = weighted_total(
        weights,
        opt_ph.value,
        opt_sm.value,
        stereo.value,
        rigid_init.value,
        rigid_refined.value,
        consistency.value,
    );
    Ok(LossReport {
        format_version: LOSS_REPORT_FORMAT_VERSION,
        opt_photometric: opt_ph.value,
        opt_smoothness: opt_sm.value,
        stereo: stereo.value,
        rigid_init: rigid_init.value,
        rigid_refined: rigid_refined.value,
        consistency: consistency.value,
        total,
        support: LossSupport {
            opt_photometric: opt_ph.support_pixels,
            opt_smoothness: opt_sm.support_pixels,
            stereo: stereo.support_pixels,
            rigid_init: rigid_init.support_pixels,
            rigid_refined: rigid_refined.support_pixels,
            consistency: consistency.support_pixels,
        },
    })
}
