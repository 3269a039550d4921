//! Per-pixel structural similarity with a uniform square window.
//!
//! Means, variances, and covariance are population statistics over the
//! window intersected with the raster, so border pixels use the pixels
//! they have (4 or 6 of them for a 3x3 window) instead of padding.

use crate::error::{Error, Result};
use crate::raster::{check_dims, Grid};
use crate::warp::Image;

pub(crate) const SSIM_C1: f64 = 0.01 * 0.01;
pub(crate) const SSIM_C2: f64 = 0.03 * 0.03;

/// Default window radius: 1, i.e. a 3x3 window.
pub const DEFAULT_SSIM_RADIUS: usize = 1;

/// Window statistics and SSIM for one channel pair; kept around so the
/// gradient pass can reuse them.
#[derive(Clone, Debug)]
pub(crate) struct ChannelStats {
    pub mu_x: Grid<f64>,
    pub mu_y: Grid<f64>,
    pub var_x: Grid<f64>,
    pub var_y: Grid<f64>,
    pub cov: Grid<f64>,
    /// Effective window size at each pixel.
    pub count: Grid<f64>,
    /// Per-pixel SSIM.
    pub s: Grid<f64>,
}

pub(crate) fn channel_stats(x: &Grid<f64>, y: &Grid<f64>, radius: usize) -> ChannelStats {
    let (w, h) = x.dims();
    let r = radius as i64;
    let mut mu_x = Grid::filled(w, h, 0.0);
    let mut mu_y = Grid::filled(w, h, 0.0);
    let mut var_x = Grid::filled(w, h, 0.0);
    let mut var_y = Grid::filled(w, h, 0.0);
    let mut cov = Grid::filled(w, h, 0.0);
    let mut count = Grid::filled(w, h, 0.0);
    let mut s = Grid::filled(w, h, 0.0);
    for py in 0..h as i64 {
        for px in 0..w as i64 {
            let (x0, x1) = ((px - r).max(0), (px + r).min(w as i64 - 1));
            let (y0, y1) = ((py - r).max(0), (py + r).min(h as i64 - 1));
            let mut sx = 0.0;
            let mut sy = 0.0;
            let mut sxx = 0.0;
            let mut syy = 0.0;
            let mut sxy = 0.0;
            let mut n = 0.0;
            for wy in y0..=y1 {
                for wx in x0..=x1 {
                    let a = *x.at(wx as usize, wy as usize);
                    let b = *y.at(wx as usize, wy as usize);
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                    n += 1.0;
                }
            }
            let mx = sx / n;
            let my = sy / n;
            let vx = sxx / n - mx * mx;
            let vy = syy / n - my * my;
            let cxy = sxy / n - mx * my;
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * cxy + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = vx + vy + SSIM_C2;
            *mu_x.at_mut(px as usize, py as usize) = mx;
            *mu_y.at_mut(px as usize, py as usize) = my;
            *var_x.at_mut(px as usize, py as usize) = vx;
            *var_y.at_mut(px as usize, py as usize) = vy;
            *cov.at_mut(px as usize, py as usize) = cxy;
            *count.at_mut(px as usize, py as usize) = n;
            *s.at_mut(px as usize, py as usize) = (a1 * a2) / (b1 * b2);
        }
    }
    ChannelStats {
        mu_x,
        mu_y,
        var_x,
        var_y,
        cov,
        count,
        s,
    }
}

/// Channel-averaged per-pixel SSIM of two images with a square window of
/// the given radius.
pub fn ssim_with_radius(a: &Image, b: &Image, radius: usize) -> Result<Grid<f64>> {
    check_dims("ssim image pair", a.dims(), b.dims())?;
    if a.num_channels() != b.num_channels() {
        return Err(Error::InvalidInput(format!(
            "ssim needs matching channel counts, got {} and {}",
            a.num_channels(),
            b.num_channels()
        )));
    }
    let (w, h) = a.dims();
    let mut out = Grid::filled(w, h, 0.0);
    let c = a.num_channels() as f64;
    for ci in 0..a.num_channels() {
        let stats = channel_stats(a.channel(ci), b.channel(ci), radius);
        for y in 0..h {
            for x in 0..w {
                *out.at_mut(x, y) += stats.s.at(x, y) / c;
            }
        }
    }
    Ok(out)
}

/// [`ssim_with_radius`] with the default 3x3 window.
pub fn ssim(a: &Image, b: &Image) -> Result<Grid<f64>> {
    ssim_with_radius(a, b, DEFAULT_SSIM_RADIUS)
}
