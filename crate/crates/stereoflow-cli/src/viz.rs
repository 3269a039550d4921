//! Flow-to-color rendering with the standard optical-flow color wheel.

use stereoflow::error::{Error, Result};
use stereoflow::raster::{Grid, Mask};
use stereoflow::warp::{FlowField, Image};

const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;
const NCOLS: usize = RY + YG + GC + CB + BM + MR;

/// 55 hues around the wheel, red at zero phase.
fn color_wheel() -> [[f64; 3]; NCOLS] {
    let mut wheel = [[0.0; 3]; NCOLS];
    let mut col = 0;
    for i in 0..RY {
        wheel[col + i] = [1.0, i as f64 / RY as f64, 0.0];
    }
    col += RY;
    for i in 0..YG {
        wheel[col + i] = [1.0 - i as f64 / YG as f64, 1.0, 0.0];
    }
    col += YG;
    for i in 0..GC {
        wheel[col + i] = [0.0, 1.0, i as f64 / GC as f64];
    }
    col += GC;
    for i in 0..CB {
        wheel[col + i] = [0.0, 1.0 - i as f64 / CB as f64, 1.0];
    }
    col += CB;
    for i in 0..BM {
        wheel[col + i] = [i as f64 / BM as f64, 0.0, 1.0];
    }
    col += BM;
    for i in 0..MR {
        wheel[col + i] = [1.0, 0.0, 1.0 - i as f64 / MR as f64];
    }
    wheel
}

/// Renders a flow field as an RGB image: hue encodes direction, saturation
/// encodes magnitude relative to `max_flow` (the largest valid magnitude
/// when not given). Magnitudes past the ceiling darken to 75% value;
/// invalid pixels come out black.
pub fn flow_to_color(flow: &FlowField, validity: &Mask, max_flow: Option<f64>) -> Result<Image> {
    let (w, h) = flow.dims();
    if validity.dims() != (w, h) {
        return Err(Error::InvalidInput(
            "flow and validity mask sizes differ".into(),
        ));
    }
    let maxrad = match max_flow {
        Some(m) if m.is_finite() && m > 0.0 => m,
        Some(m) => {
            return Err(Error::InvalidInput(format!(
                "flow ceiling must be positive and finite, got {m}"
            )))
        }
        None => {
            let mut r: f64 = 0.0;
            for y in 0..h {
                for x in 0..w {
                    if validity.get(x, y) {
                        let (u, v) = flow.get(x, y);
                        r = r.max(u.hypot(v));
                    }
                }
            }
            // An all-zero field renders as the wheel center.
            if r == 0.0 {
                1.0
            } else {
                r
            }
        }
    };

    let wheel = color_wheel();
    let mut channels = vec![Grid::filled(w, h, 0.0); 3];
    for y in 0..h {
        for x in 0..w {
            if !validity.get(x, y) {
                continue;
            }
            let (u, v) = flow.get(x, y);
            let rad = u.hypot(v) / maxrad;
            let a = (-v).atan2(-u) / std::f64::consts::PI;
            let fk = (a + 1.0) / 2.0 * (NCOLS - 1) as f64;
            let k0 = (fk.floor() as usize).min(NCOLS - 1);
            let k1 = (k0 + 1) % NCOLS;
            let f = fk - k0 as f64;
            for c in 0..3 {
                let col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
                let col = if rad <= 1.0 {
                    1.0 - rad * (1.0 - col)
                } else {
                    0.75 * col
                };
                *channels[c].at_mut(x, y) = col;
            }
        }
    }
    Image::new(channels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wheel_endpoints_are_red() {
        let wheel = color_wheel();
        assert_eq!(wheel[0], [1.0, 0.0, 0.0]);
        // The last entry closes back toward red.
        assert_eq!(wheel[NCOLS - 1][0], 1.0);
        assert!(wheel[NCOLS - 1][2] > 0.0);
    }

    #[test]
    fn zero_flow_is_white_and_invalid_is_black() {
        let flow = FlowField::zeros(4, 3);
        let mut validity = Mask::all_true(4, 3);
        validity.set(2, 1, false);
        let img = flow_to_color(&flow, &validity, None).unwrap();
        for c in 0..3 {
            assert_eq!(*img.channel(c).at(0, 0), 1.0);
            assert_eq!(*img.channel(c).at(2, 1), 0.0);
        }
    }

    #[test]
    fn saturation_grows_with_magnitude() {
        let flow = FlowField::from_fn(3, 1, |x, _| (x as f64 * -2.0, 0.0));
        let img = flow_to_color(&flow, &Mask::all_true(3, 1), None).unwrap();
        // Negative-x flow lands on the cyan-blue side: the red channel
        // drops from white toward zero as the magnitude grows.
        let r0 = *img.channel(0).at(0, 0);
        let r1 = *img.channel(0).at(1, 0);
        let r2 = *img.channel(0).at(2, 0);
        assert!(r0 > r1 && r1 > r2, "{r0} {r1} {r2}");
    }

    #[test]
    fn explicit_ceiling_rescales() {
        let flow = FlowField::from_fn(1, 1, |_, _| (-1.0, 0.0));
        let valid = Mask::all_true(1, 1);
        let full = flow_to_color(&flow, &valid, None).unwrap();
        let half = flow_to_color(&flow, &valid, Some(2.0)).unwrap();
        // A larger ceiling leaves the same vector less saturated.
        assert!(half.channel(0).at(0, 0) > full.channel(0).at(0, 0));
        assert!(flow_to_color(&flow, &valid, Some(0.0)).is_err());
    }
}
