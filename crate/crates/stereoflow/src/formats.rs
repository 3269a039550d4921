//! File interchange: 16-bit flow PNGs, PFM rasters, pose text files,
//! 8-bit image and mask PNGs, intrinsics files, and JSON reports.
//!
//! Every writer is atomic (temp file beside the target, then rename) and
//! deterministic: the same in-memory value always produces the same bytes.
//! PNG encoding is pinned to a fixed filter and compression setting so a
//! re-encode cannot drift between runs.
//!
//! Read failures, including unreadable files, surface as [`Error::Format`]
//! so the diagnostic always names the offending path; [`Error::Io`] is
//! reserved for failures while writing.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{
    orthonormality_drift, reorthonormalize, DepthMap, DisparityMap, Intrinsics, PoseSE3,
    ROTATION_DRIFT_TOL,
};
use crate::raster::{check_dims, Grid, Mask};
use crate::warp::{FlowField, Image};

/// Quantization step of the 16-bit flow format, in reciprocal pixels.
pub const FLOW_PNG_SCALE: f64 = 64.0;

/// Stored value representing zero flow.
pub const FLOW_PNG_OFFSET: u16 = 32768;

/// Largest finite pose-file rotation drift that is silently repaired by
/// projection back onto the rotation group. Text rounding lands well below
/// this; anything above it is treated as a corrupt file.
pub const POSE_REPAIR_DRIFT: f64 = 1e-6;

fn format_error(format: &'static str, path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        format,
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Writes `bytes` to a sibling temp file and renames it over `path`, so a
/// reader never observes a half-written file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_bytes(path: &Path, format: &'static str) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| format_error(format, path, format!("cannot read: {e}")))
}

// --- PNG plumbing -----------------------------------------------------------

fn png_bytes(
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
) -> std::result::Result<Vec<u8>, png::EncodingError> {
    let mut out = Vec::new();
    let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(depth);
    encoder.set_compression(png::Compression::Fast);
    encoder.set_filter(png::FilterType::NoFilter);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(data)?;
    writer.finish()?;
    Ok(out)
}

fn read_png(path: &Path, format: &'static str) -> Result<(png::OutputInfo, Vec<u8>)> {
    let bytes = read_bytes(path, format)?;
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| format_error(format, path, e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| format_error(format, path, e.to_string()))?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

// --- 16-bit flow PNG --------------------------------------------------------

pub(crate) fn encode_flow_component(f: f64) -> u16 {
    (f * FLOW_PNG_SCALE + f64::from(FLOW_PNG_OFFSET))
        .round()
        .clamp(0.0, 65535.0) as u16
}

pub(crate) fn decode_flow_component(stored: u16) -> f64 {
    (f64::from(stored) - f64::from(FLOW_PNG_OFFSET)) / FLOW_PNG_SCALE
}

/// Writes a flow field as a 16-bit RGB PNG: per pixel the channels hold
/// `round(u * 64) + 32768`, the same for `v`, and validity as 0 or 1.
/// Components decode back within 1/128 px as long as they stay below
/// 511.98 px in magnitude; validity round-trips exactly.
pub fn write_flow_png(path: impl AsRef<Path>, flow: &FlowField, validity: &Mask) -> Result<()> {
    let path = path.as_ref();
    check_dims("flow vs validity", flow.dims(), validity.dims())?;
    let (w, h) = flow.dims();
    let mut data = Vec::with_capacity(w * h * 6);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.get(x, y);
            let valid = u16::from(validity.get(x, y));
            for s in [encode_flow_component(u), encode_flow_component(v), valid] {
                data.extend_from_slice(&s.to_be_bytes());
            }
        }
    }
    let bytes = png_bytes(w, h, png::ColorType::Rgb, png::BitDepth::Sixteen, &data)
        .map_err(|e| format_error("flow-png", path, e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Reads a flow field written by [`write_flow_png`].
pub fn read_flow_png(path: impl AsRef<Path>) -> Result<(FlowField, Mask)> {
    let path = path.as_ref();
    let (info, buf) = read_png(path, "flow-png")?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Sixteen {
        return Err(format_error(
            "flow-png",
            path,
            format!(
                "expected 16-bit RGB, got {:?} {:?}",
                info.bit_depth, info.color_type
            ),
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut u = Grid::filled(w, h, 0.0);
    let mut v = Grid::filled(w, h, 0.0);
    let mut validity = Mask::all_false(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) * 6;
            let su = u16::from_be_bytes([buf[i], buf[i + 1]]);
            let sv = u16::from_be_bytes([buf[i + 2], buf[i + 3]]);
            let sm = u16::from_be_bytes([buf[i + 4], buf[i + 5]]);
            *u.at_mut(x, y) = decode_flow_component(su);
            *v.at_mut(x, y) = decode_flow_component(sv);
            validity.set(x, y, sm != 0);
        }
    }
    Ok((FlowField::new(u, v)?, validity))
}

// --- PFM --------------------------------------------------------------------

/// Writes a grid as a grayscale PFM: header `Pf`, width and height, scale
/// `-1` (little-endian), then rows bottom-up as 32-bit floats. Values pass
/// through `f32`, so the write-read round trip is bit-exact at 32-bit
/// precision.
pub fn write_pfm(path: impl AsRef<Path>, grid: &Grid<f64>) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = grid.dims();
    let mut bytes = format!("Pf\n{w} {h}\n-1\n").into_bytes();
    bytes.reserve(w * h * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            bytes.extend_from_slice(&(*grid.at(x, y) as f32).to_le_bytes());
        }
    }
    write_atomic(path, &bytes)
}

/// Reads a grayscale PFM in either endianness.
pub fn read_pfm(path: impl AsRef<Path>) -> Result<Grid<f64>> {
    let path = path.as_ref();
    let bytes = read_bytes(path, "pfm")?;
    let mut pos = 0usize;
    let mut token = |after_all_ws: bool| -> Result<&str> {
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos == start {
            return Err(format_error("pfm", path, "truncated header"));
        }
        let tok = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| format_error("pfm", path, "non-ASCII header"))?;
        // The scale token is followed by exactly one whitespace byte, then
        // binary data; earlier tokens may be padded freely.
        if after_all_ws {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
        } else if pos < bytes.len() {
            pos += 1;
        }
        Ok(tok)
    };

    let magic = token(true)?;
    if magic == "PF" {
        return Err(format_error("pfm", path, "color PFM not supported"));
    }
    if magic != "Pf" {
        return Err(format_error("pfm", path, format!("bad magic {magic:?}")));
    }
    let w: usize = token(true)?
        .parse()
        .map_err(|_| format_error("pfm", path, "bad width"))?;
    let h: usize = token(true)?
        .parse()
        .map_err(|_| format_error("pfm", path, "bad height"))?;
    let scale: f64 = token(false)?
        .parse()
        .map_err(|_| format_error("pfm", path, "bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(format_error("pfm", path, format!("bad scale {scale}")));
    }
    let little_endian = scale < 0.0;

    let expected = w * h * 4;
    let data = &bytes[pos..];
    if data.len() != expected {
        return Err(format_error(
            "pfm",
            path,
            format!("expected {expected} data bytes, got {}", data.len()),
        ));
    }
    let mut grid = Grid::filled(w.max(1), h.max(1), 0.0);
    if w == 0 || h == 0 {
        return Err(format_error("pfm", path, "empty raster"));
    }
    for row in 0..h {
        let y = h - 1 - row;
        for x in 0..w {
            let i = (row * w + x) * 4;
            let quad = [data[i], data[i + 1], data[i + 2], data[i + 3]];
            let value = if little_endian {
                f32::from_le_bytes(quad)
            } else {
                f32::from_be_bytes(quad)
            };
            *grid.at_mut(x, y) = f64::from(value);
        }
    }
    Ok(grid)
}

/// Reads a PFM as a depth map; entries that are not finite and positive are
/// marked invalid (the writers store invalid entries as 0).
pub fn read_depth_pfm(path: impl AsRef<Path>) -> Result<DepthMap> {
    let grid = read_pfm(path)?;
    let validity = Mask::from_fn(grid.width(), grid.height(), |x, y| {
        let v = *grid.at(x, y);
        v.is_finite() && v > 0.0
    });
    DepthMap::new(grid, validity)
}

/// Reads a PFM as a disparity map; entries outside `(0, width)` are marked
/// invalid.
pub fn read_disparity_pfm(path: impl AsRef<Path>) -> Result<DisparityMap> {
    let grid = read_pfm(path)?;
    let w = grid.width() as f64;
    let validity = Mask::from_fn(grid.width(), grid.height(), |x, y| {
        let v = *grid.at(x, y);
        v.is_finite() && v > 0.0 && v < w
    });
    DisparityMap::new(grid, validity)
}

// --- Pose text files --------------------------------------------------------

/// Writes one pose per line as 12 numbers: the 3x4 `[R|t]` matrix in
/// row-major order. Numbers use the shortest decimal form that parses back
/// to the identical double, so a read after a write is exact.
pub fn write_pose_file(path: impl AsRef<Path>, poses: &[PoseSE3]) -> Result<()> {
    let mut text = String::new();
    for pose in poses {
        let r = pose.rotation();
        let t = pose.translation();
        let row = [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ];
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

/// Reads a pose file written by [`write_pose_file`]. Rotations whose
/// orthonormality drift falls in (1e-9, [`POSE_REPAIR_DRIFT`]] are projected
/// back onto the rotation group; larger drift rejects the file. Blank lines
/// are skipped.
pub fn read_pose_file(path: impl AsRef<Path>) -> Result<Vec<PoseSE3>> {
    let path = path.as_ref();
    let bytes = read_bytes(path, "pose")?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| format_error("pose", path, "not valid UTF-8"))?;
    let mut poses = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let nums: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(str::parse::<f64>).collect();
        let nums = nums
            .map_err(|e| format_error("pose", path, format!("line {}: {e}", idx + 1)))?;
        if nums.len() != 12 {
            return Err(format_error(
                "pose",
                path,
                format!("line {}: expected 12 numbers, got {}", idx + 1, nums.len()),
            ));
        }
        let rotation = nalgebra::Matrix3::new(
            nums[0], nums[1], nums[2], nums[4], nums[5], nums[6], nums[8], nums[9], nums[10],
        );
        let translation = nalgebra::Vector3::new(nums[3], nums[7], nums[11]);
        let drift = orthonormality_drift(&rotation);
        let rotation = if drift <= ROTATION_DRIFT_TOL {
            rotation
        } else if drift <= POSE_REPAIR_DRIFT {
            reorthonormalize(&rotation)
        } else {
            return Err(format_error(
                "pose",
                path,
                format!(
                    "line {}: rotation drift {drift:.3e} exceeds {POSE_REPAIR_DRIFT:.0e}",
                    idx + 1
                ),
            ));
        };
        let pose = PoseSE3::new(rotation, translation)
            .map_err(|e| format_error("pose", path, format!("line {}: {e}", idx + 1)))?;
        poses.push(pose);
    }
    Ok(poses)
}

// --- 8-bit images and masks -------------------------------------------------

fn quantize8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes an image as an 8-bit PNG: grayscale for one channel, RGB for
/// three. Values quantize to `round(v * 255)`; a second write-read round
/// trip is a fixed point.
pub fn write_image_png(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = image.dims();
    let color = match image.num_channels() {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        n => {
            return Err(Error::InvalidInput(format!(
                "image PNG supports 1 or 3 channels, got {n}"
            )))
        }
    };
    let mut data = Vec::with_capacity(w * h * image.num_channels());
    for y in 0..h {
        for x in 0..w {
            for c in 0..image.num_channels() {
                data.push(quantize8(*image.channel(c).at(x, y)));
            }
        }
    }
    let bytes = png_bytes(w, h, color, png::BitDepth::Eight, &data)
        .map_err(|e| format_error("image-png", path, e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Reads an 8-bit grayscale or RGB PNG into a unit-range image.
pub fn read_image_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let (info, buf) = read_png(path, "image-png")?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(format_error(
            "image-png",
            path,
            format!("expected 8-bit, got {:?}", info.bit_depth),
        ));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(format_error(
                "image-png",
                path,
                format!("expected grayscale or RGB, got {other:?}"),
            ))
        }
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let grids: Vec<Grid<f64>> = (0..channels)
        .map(|c| {
            Grid::from_fn(w, h, |x, y| {
                f64::from(buf[(y * w + x) * channels + c]) / 255.0
            })
        })
        .collect();
    Image::new(grids)
}

/// Writes a mask as an 8-bit grayscale PNG, 255 for set pixels and 0
/// otherwise.
pub fn write_mask_png(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = mask.dims();
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            data.push(if mask.get(x, y) { 255 } else { 0 });
        }
    }
    let bytes = png_bytes(w, h, png::ColorType::Grayscale, png::BitDepth::Eight, &data)
        .map_err(|e| format_error("mask-png", path, e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Reads an 8-bit grayscale PNG as a mask; any nonzero byte counts as set.
pub fn read_mask_png(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let (info, buf) = read_png(path, "mask-png")?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(format_error(
            "mask-png",
            path,
            format!(
                "expected 8-bit grayscale, got {:?} {:?}",
                info.bit_depth, info.color_type
            ),
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    Ok(Mask::from_fn(w, h, |x, y| buf[y * w + x] != 0))
}

// --- Intrinsics -------------------------------------------------------------

/// Writes intrinsics as one whitespace-separated line:
/// `fx fy cx cy width height` plus the stereo baseline when given.
pub fn write_intrinsics(
    path: impl AsRef<Path>,
    k: &Intrinsics,
    baseline: Option<f64>,
) -> Result<()> {
    let mut line = format!(
        "{} {} {} {} {} {}",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height
    );
    if let Some(b) = baseline {
        line.push_str(&format!(" {b}"));
    }
    line.push('\n');
    write_atomic(path, line.as_bytes())
}

/// Reads an intrinsics file written by [`write_intrinsics`].
pub fn read_intrinsics(path: impl AsRef<Path>) -> Result<(Intrinsics, Option<f64>)> {
    let path = path.as_ref();
    let bytes = read_bytes(path, "intrinsics")?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| format_error("intrinsics", path, "not valid UTF-8"))?;
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() != 6 && tokens.len() != 7 {
        return Err(format_error(
            "intrinsics",
            path,
            format!("expected 6 or 7 numbers, got {}", tokens.len()),
        ));
    }
    let num = |i: usize| -> Result<f64> {
        tokens[i]
            .parse()
            .map_err(|_| format_error("intrinsics", path, format!("bad number {:?}", tokens[i])))
    };
    let size = |i: usize| -> Result<usize> {
        tokens[i]
            .parse()
            .map_err(|_| format_error("intrinsics", path, format!("bad size {:?}", tokens[i])))
    };
    let k = Intrinsics::new(num(0)?, num(1)?, num(2)?, num(3)?, size(4)?, size(5)?)
        .map_err(|e| format_error("intrinsics", path, e.to_string()))?;
    let baseline = if tokens.len() == 7 {
        let b = num(6)?;
        if !b.is_finite() || b <= 0.0 {
            return Err(format_error(
                "intrinsics",
                path,
                format!("baseline must be positive, got {b}"),
            ));
        }
        Some(b)
    } else {
        None
    };
    Ok((k, baseline))
}

// --- JSON reports -----------------------------------------------------------

/// Serializes a report as pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| format_error("json", path, e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Reads a JSON report written by [`write_json`].
pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = read_bytes(path, "json")?;
    serde_json::from_slice(&bytes).map_err(|e| format_error("json", path, e.to_string()))
}
