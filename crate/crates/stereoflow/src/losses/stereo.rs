//! Disparity objective over a rectified stereo pair.
//!
//! Three components, each evaluated in both directions so the term is
//! symmetric under mirroring the pair: photometric reconstruction of each
//! view from the other, edge-aware first-order disparity smoothness, and
//! left-right disparity consistency.

use super::{edge_gradient, photometric_loss, LossTerm};
use crate::error::{Error, Result};
use crate::geometry::DisparityMap;
use crate::raster::{check_dims, Grid};
use crate::warp::{bilinear_warp, FlowField, Image};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StereoLossParams {
    /// SSIM-vs-L1 mix of the reconstruction component.
    pub alpha: f64,
    pub recon_weight: f64,
    pub smooth_weight: f64,
    pub lr_weight: f64,
    /// Edge sensitivity of the disparity smoothness weight.
    pub edge_beta: f64,
}

impl Default for StereoLossParams {
    fn default() -> Self {
        Self {
            alpha: 0.85,
            recon_weight: 1.0,
            smooth_weight: 0.1,
            lr_weight: 1.0,
            edge_beta: 1.0,
        }
    }
}

impl StereoLossParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha,
            self.recon_weight,
            self.smooth_weight,
            self.lr_weight,
            self.edge_beta,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(
                "stereo loss parameters must be finite and non-negative".into(),
            ));
        }
        if self.alpha > 1.0 {
            return Err(Error::InvalidInput(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Component values of the stereo term; `total` is their weighted sum.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StereoLossBreakdown {
    pub reconstruction: f64,
    pub smoothness: f64,
    pub lr_consistency: f64,
    pub total: f64,
    /// Pixels contributing to the two reconstruction directions combined.
    pub support_pixels: u64,
}

/// Horizontal flow that carries each pixel to its match in the other
/// view. Pixels without a valid disparity get zero flow; their weight is
/// zeroed separately.
pub(super) fn disparity_flow(disp: &DisparityMap, sign: f64) -> FlowField {
    let (w, h) = disp.dims();
    let u = Grid::from_fn(w, h, |x, y| {
        if disp.validity().get(x, y) {
            sign * disp.values().at(x, y)
        } else {
            0.0
        }
    });
    FlowField::new(u, Grid::filled(w, h, 0.0)).expect("disparities are finite")
}

fn reconstruction_direction(
    target: &Image,
    source: &Image,
    disp: &DisparityMap,
    sign: f64,
    alpha: f64,
) -> Result<LossTerm> {
    let flow = disparity_flow(disp, sign);
    let (recon, coverage) = bilinear_warp(source, &flow)?;
    let weight = disp.validity().and(&coverage).to_weights();
    photometric_loss(target, &recon, &weight, alpha)
}

/// Edge-damped absolute central difference of the disparity, summed over
/// both axes and normalized by the raster area. A stencil contributes
/// only when both of its neighbor samples are valid.
pub(super) fn disparity_smoothness(disp: &DisparityMap, image: &Image, beta: f64) -> f64 {
    let (w, h) = disp.dims();
    let n = (w * h) as f64;
    let mut sum = 0.0;
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
                let diff = (disp.values().at(pa.0, pa.1) - disp.values().at(pb.0, pb.1)) / 2.0;
                let g = edge_gradient(image, x, y, axis).expect("stencil is interior");
                sum += diff.abs() * (-beta * g).exp();
            }
        }
    }
    sum / n
}

/// One linear sample of a disparity row, with the support that produced
/// it (needed by the gradient path).
pub(super) struct RowSample {
    pub value: f64,
    pub x0: usize,
    pub x1: usize,
    pub fx: f64,
}

/// Linear interpolation of a disparity row at a fractional column.
/// `None` outside the raster or when a positively weighted neighbor is
/// invalid.
pub(super) fn sample_disparity_row_detailed(
    disp: &DisparityMap,
    sx: f64,
    y: usize,
) -> Option<RowSample> {
    let (w, _) = disp.dims();
    if !(0.0..=(w - 1) as f64).contains(&sx) {
        return None;
    }
    let x0 = sx.floor() as usize;
    let fx = sx - x0 as f64;
    let x1 = (x0 + 1).min(w - 1);
    if !disp.validity().get(x0, y) || (fx > 0.0 && !disp.validity().get(x1, y)) {
        return None;
    }
    Some(RowSample {
        value: (1.0 - fx) * disp.values().at(x0, y) + fx * disp.values().at(x1, y),
        x0,
        x1,
        fx,
    })
}

pub(super) fn sample_disparity_row(disp: &DisparityMap, sx: f64, y: usize) -> Option<f64> {
    sample_disparity_row_detailed(disp, sx, y).map(|s| s.value)
}

/// Mean absolute difference between one view's disparity and the other
/// view's disparity sampled at the matching column.
pub(super) fn lr_direction(own: &DisparityMap, other: &DisparityMap, sign: f64) -> (f64, u64) {
    let (w, h) = own.dims();
    let mut sum = 0.0;
    let mut count = 0u64;
    for y in 0..h {
        for x in 0..w {
            if !own.validity().get(x, y) {
                continue;
            }
            let d = *own.values().at(x, y);
            let Some(matched) = sample_disparity_row(other, x as f64 + sign * d, y) else {
                continue;
            };
            sum += (d - matched).abs();
            count += 1;
        }
    }
    if count == 0 {
        (0.0, 0)
    } else {
        (sum / count as f64, count)
    }
}

/// Full stereo objective with explicit component weights.
///
/// Left pixels match the right view at `x - d_left`, right pixels match
/// the left view at `x + d_right`.
pub fn stereo_loss_with(
    left: &Image,
    right: &Image,
    disp_left: &DisparityMap,
    disp_right: &DisparityMap,
    params: &StereoLossParams,
) -> Result<StereoLossBreakdown> {
    params.validate()?;
    let dims = left.dims();
    check_dims("stereo right image", dims, right.dims())?;
    check_dims("stereo left disparity", dims, disp_left.dims())?;
    check_dims("stereo right disparity", dims, disp_right.dims())?;

    let recon_l = reconstruction_direction(left, right, disp_left, -1.0, params.alpha)?;
    let recon_r = reconstruction_direction(right, left, disp_right, 1.0, params.alpha)?;
    let reconstruction = recon_l.value + recon_r.value;

    let smoothness = disparity_smoothness(disp_left, left, params.edge_beta)
        + disparity_smoothness(disp_right, right, params.edge_beta);

    let (lr_l, _) = lr_direction(disp_left, disp_right, -1.0);
    let (lr_r, _) = lr_direction(disp_right, disp_left, 1.0);
    let lr_consistency = lr_l + lr_r;

    let total = params.recon_weight * reconstruction
        + params.smooth_weight * smoothness
        + params.lr_weight * lr_consistency;
    Ok(StereoLossBreakdown {
        reconstruction,
        smoothness,
        lr_consistency,
        total,
        support_pixels: recon_l.support_pixels + recon_r.support_pixels,
    })
}

/// [`stereo_loss_with`] at the default component weights, reported as a
/// single term.
pub fn stereo_loss(
    left: &Image,
    right: &Image,
    disp_left: &DisparityMap,
    disp_right: &DisparityMap,
    alpha: f64,
) -> Result<LossTerm> {
    let params = StereoLossParams {
        alpha,
        ..Default::default()
    };
    let breakdown = stereo_loss_with(left, right, disp_left, disp_right, &params)?;
    Ok(LossTerm {
        value: breakdown.total,
        weight_sum: breakdown.support_pixels as f64,
        support_pixels: breakdown.support_pixels,
    })
}
