//! Disparity rasters, RGB images and metric depth maps.
//!
//! Disparity is stored the way stereo ground truth is usually shipped: one
//! unsigned 16-bit code `p` per pixel, where `p = 0` marks a failed
//! measurement and any other code decodes to `(p - 1) / 256` pixels of
//! disparity. Depth follows from the stereo relation `Z = B * f / d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Code reserved for invalid (unmeasured) pixels.
pub const INVALID_CODE: u16 = 0;

/// Disparity quantization step: codes carry 1/256 pixel of disparity.
pub const CODE_SCALE: f64 = 256.0;

/// Baseline of the reference stereo rig, in meters.
pub const DEFAULT_BASELINE_M: f64 = 0.22;

/// Decodes a stored code into disparity in pixels. `None` for the invalid code.
pub fn decode_disparity(code: u16) -> Option<f64> {
    if code == INVALID_CODE {
        None
    } else {
        Some((f64::from(code) - 1.0) / CODE_SCALE)
    }
}

/// Quantizes a disparity back to its code.
///
/// Rounds half away from zero and clamps into the valid range `[1, 65535]`,
/// so any finite non-negative disparity yields a valid code. Negative inputs
/// clamp to the minimum valid code; NaN is treated as invalid.
pub fn encode_disparity(disparity: Option<f64>) -> u16 {
    match disparity {
        None => INVALID_CODE,
        Some(d) if d.is_nan() => INVALID_CODE,
        Some(d) => {
            let code = (d * CODE_SCALE).round() + 1.0;
            code.clamp(1.0, f64::from(u16::MAX)) as u16
        }
    }
}

/// Stereo rig parameters needed to turn disparity into metric depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRig {
    pub baseline_m: f64,
    pub focal_px: f64,
}

impl CameraRig {
    pub fn new(baseline_m: f64, focal_px: f64) -> Result<Self> {
        let rig = Self { baseline_m, focal_px };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.baseline_m.is_finite() && self.baseline_m > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "baseline_m must be positive, got {}",
                self.baseline_m
            )));
        }
        if !(self.focal_px.is_finite() && self.focal_px > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "focal_px must be positive, got {}",
                self.focal_px
            )));
        }
        Ok(())
    }

    /// `B * f`, the numerator of the depth relation.
    pub fn baseline_focal(&self) -> f64 {
        self.baseline_m * self.focal_px
    }
}

/// `Z = B * f / d`. Zero disparity is a point at infinity and comes back invalid.
pub fn disparity_to_depth(disparity: Option<f64>, rig: &CameraRig) -> Option<f64> {
    match disparity {
        Some(d) if d > 0.0 && d.is_finite() => Some(rig.baseline_focal() / d),
        _ => None,
    }
}

pub fn depth_to_disparity(depth_m: Option<f64>, rig: &CameraRig) -> Option<f64> {
    match depth_m {
        Some(z) if z > 0.0 && z.is_finite() => Some(rig.baseline_focal() / z),
        _ => None,
    }
}

/// Single-channel 16-bit disparity codes, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DisparityRaster {
    width: usize,
    height: usize,
    codes: Vec<u16>,
}

impl DisparityRaster {
    pub fn new(width: usize, height: usize, codes: Vec<u16>) -> Result<Self> {
        if codes.len() != width * height {
            return Err(Error::BufferLength {
                len: codes.len(),
                width,
                height,
                channels: 1,
            });
        }
        Ok(Self { width, height, codes })
    }

    pub fn filled(width: usize, height: usize, code: u16) -> Self {
        Self {
            width,
            height,
            codes: vec![code; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[u16] {
        &self.codes
    }

    pub fn codes_mut(&mut self) -> &mut [u16] {
        &mut self.codes
    }

    pub fn into_codes(self) -> Vec<u16> {
        self.codes
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.codes[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, code: u16) {
        self.codes[y * self.width + x] = code;
    }

    pub fn invalid_count(&self) -> usize {
        self.codes.iter().filter(|&&c| c == INVALID_CODE).count()
    }

    pub fn ensure_same_dims(&self, other: &DisparityRaster) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }

    /// Nearest-neighbor resample. Nearest keeps depth edges sharp instead of
    /// blending foreground and background disparities.
    pub fn resize_nearest(&self, width: usize, height: usize) -> DisparityRaster {
        if (width, height) == self.dims() {
            return self.clone();
        }
        let codes = resample_nearest(&self.codes, self.width, self.height, 1, width, height);
        DisparityRaster { width, height, codes }
    }
}

/// 8-bit interleaved RGB, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::BufferLength {
                len: data.len(),
                width,
                height,
                channels: 3,
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn resize_nearest(&self, width: usize, height: usize) -> RgbImage {
        if (width, height) == self.dims() {
            return self.clone();
        }
        let data = resample_nearest(&self.data, self.width, self.height, 3, width, height);
        RgbImage { width, height, data }
    }
}

fn resample_nearest<T: Copy>(
    src: &[T],
    src_w: usize,
    src_h: usize,
    channels: usize,
    dst_w: usize,
    dst_h: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(dst_w * dst_h * channels);
    for y in 0..dst_h {
        // Sample at the destination pixel center.
        let sy = ((2 * y + 1) * src_h / (2 * dst_h)).min(src_h - 1);
        for x in 0..dst_w {
            let sx = ((2 * x + 1) * src_w / (2 * dst_w)).min(src_w - 1);
            let i = (sy * src_w + sx) * channels;
            out.extend_from_slice(&src[i..i + channels]);
        }
    }
    out
}

/// Per-pixel metric depth plus an explicit validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    depth_m: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Value stored at invalid positions. Never a legal depth.
    pub const SENTINEL: f64 = 0.0;

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.depth_m[i])
    }

    pub fn depths(&self) -> &[f64] {
        &self.depth_m
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = Option<f64>> + '_ {
        self.depth_m.iter().zip(&self.valid).map(|(&z, &v)| v.then_some(z))
    }
}

pub fn raster_to_depth_map(raster: &DisparityRaster, rig: &CameraRig) -> DepthMap {
    let mut depth_m = Vec::with_capacity(raster.len());
    let mut valid = Vec::with_capacity(raster.len());
    for &code in raster.codes() {
        match disparity_to_depth(decode_disparity(code), rig) {
            Some(z) => {
                depth_m.push(z);
                valid.push(true);
            }
            None => {
                depth_m.push(DepthMap::SENTINEL);
                valid.push(false);
            }
        }
    }
    DepthMap {
        width: raster.width(),
        height: raster.height(),
        depth_m,
        valid,
    }
}
