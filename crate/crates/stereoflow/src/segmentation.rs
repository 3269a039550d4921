//! Motion segmentation by comparing full flow against camera-only flow.
//!
//! A pixel is flagged as independently moving when the optical flow and the
//! rigid (camera-motion) flow disagree by more than a threshold *and* the
//! pixel is visible in both frames. Occluded pixels are never flagged, so
//! the moving mask is a subset of the non-occlusion mask by construction.
//! The raw thresholded mask is returned as-is; no morphological cleanup.

use crate::error::{Error, Result};
use crate::raster::Mask;
use crate::warp::{flow_magnitude_diff, FlowField};

/// Flow-disagreement threshold in pixels.
#[derive(Clone, Debug)]
pub struct SegmentationParams {
    /// A pixel moves when the flow difference norm strictly exceeds this.
    pub delta: f64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self { delta: 3.0 }
    }
}

impl SegmentationParams {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::InvalidInput(format!(
                "segmentation threshold must be positive, got {delta}"
            )));
        }
        Ok(Self { delta })
    }
}

/// `moving = (|flow_opt - flow_rig| > delta) AND non_occluded`.
pub fn motion_mask(
    flow_opt: &FlowField,
    flow_rig: &FlowField,
    non_occluded: &Mask,
    params: &SegmentationParams,
) -> Result<Mask> {
    let diff = flow_magnitude_diff(flow_opt, flow_rig)?;
    crate::raster::check_dims("flow vs non-occlusion mask", diff.dims(), non_occluded.dims())?;
    let (w, h) = diff.dims();
    Ok(Mask::from_fn(w, h, |x, y| {
        *diff.at(x, y) > params.delta && non_occluded.get(x, y)
    }))
}
