//! Seeded synthetic stereo scenes with exact ground-truth disparity.
//!
//! A scene is a sky band at the far depth, a ground plane whose disparity
//! grows linearly towards the bottom row, and axis-aligned rectangles at
//! constant depth painted far-to-near. Shading is `hue * brightness` where
//! brightness is an affine function of disparity and every hue has a green
//! component of 1 (red and blue vary per object), so the green channel, which
//! is also the maximum channel, recovers disparity up to 8-bit rounding.
//!
//! Invalid pixels are punched in two passes: occlusion bands along the left
//! edge of each object (where the right camera cannot see), then uniform
//! speckle until the requested fraction is met.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{CameraRig, DisparityRaster, RgbImage, CODE_SCALE, INVALID_CODE};

/// Allowed gap between the requested and the realized hole fraction.
pub const HOLE_FRACTION_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub object_count: usize,
    pub hole_fraction: f64,
    /// `(near, far)` in meters.
    pub depth_range_m: (f64, f64),
    pub rig: CameraRig,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.rig.validate()?;
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("scene size must be non-zero".into()));
        }
        if !(0.0..1.0).contains(&self.hole_fraction) {
            return Err(Error::InvalidConfig(format!(
                "hole_fraction must lie in [0, 1), got {}",
                self.hole_fraction
            )));
        }
        let (near, far) = self.depth_range_m;
        if !(near > 0.0 && near < far && far.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "depth_range_m must satisfy 0 < near < far, got ({near}, {far})"
            )));
        }
        let (lo, hi) = self.code_bounds();
        if lo < 2 || lo > hi {
            return Err(Error::InvalidConfig(format!(
                "depth range ({near}, {far}) m does not map to usable disparity codes with this rig"
            )));
        }
        Ok(())
    }

    /// Smallest and largest code whose decoded depth stays inside `depth_range_m`.
    pub fn code_bounds(&self) -> (u32, u32) {
        let (near, far) = self.depth_range_m;
        let bf = self.rig.baseline_focal();
        let lo = (bf / far * CODE_SCALE).ceil() + 1.0;
        let hi = (bf / near * CODE_SCALE).floor() + 1.0;
        (lo.clamp(0.0, 65535.0) as u32, hi.clamp(0.0, 65535.0) as u32)
    }

    fn disparity_bounds(&self) -> (f64, f64) {
        let (near, far) = self.depth_range_m;
        let bf = self.rig.baseline_focal();
        (bf / far, bf / near)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSample {
    pub rgb: RgbImage,
    /// Hole-free ground truth.
    pub truth: DisparityRaster,
    /// `truth` with invalid pixels punched in.
    pub holed: DisparityRaster,
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    depth: f64,
    hue: [f64; 3],
}

fn random_hue(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random_range(0.2..1.0), 1.0, rng.random_range(0.2..1.0)]
}

pub fn generate_scene(cfg: &SceneConfig) -> Result<SyntheticSample> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let n = w * h;
    let target_holes = (cfg.hole_fraction * n as f64).round() as usize;
    if target_holes >= n || (target_holes as f64 / n as f64 - cfg.hole_fraction).abs() > HOLE_FRACTION_TOLERANCE {
        return Err(Error::InfeasibleHoles {
            requested: cfg.hole_fraction,
            width: w,
            height: h,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (near, far) = cfg.depth_range_m;
    let bf = cfg.rig.baseline_focal();
    let (d_min, d_max) = cfg.disparity_bounds();

    // Background: sky above the horizon, ground plane below it.
    let horizon = (h as f64 * rng.random_range(0.25..0.45)).round() as usize;
    let ground_near = near + (far - near) * rng.random_range(0.1..0.3);
    let sky_hue = [0.55, 1.0, 0.9];
    let ground_hue = [0.9, 1.0, 0.75];
    let mut disparity = vec![0.0f64; n];
    let mut hue = vec![[0.0f64; 3]; n];
    for y in 0..h {
        let d = if y < horizon || h == horizon {
            d_min
        } else {
            // Planar ground: disparity is linear in image row.
            let t = (y - horizon + 1) as f64 / (h - horizon) as f64;
            d_min + t * (bf / ground_near - d_min)
        };
        let row_hue = if y < horizon { sky_hue } else { ground_hue };
        for x in 0..w {
            disparity[y * w + x] = d;
            hue[y * w + x] = row_hue;
        }
    }

    let mut rects: Vec<Rect> = (0..cfg.object_count)
        .map(|_| {
            let rw = ((w as f64 * rng.random_range(0.12..0.35)).round() as usize).clamp(1, w);
            let rh = ((h as f64 * rng.random_range(0.15..0.5)).round() as usize).clamp(1, h);
            let x0 = rng.random_range(0..=w - rw);
            let y0 = rng.random_range(0..=h - rh);
            let depth = near + (far - near) * rng.random_range(0.0..0.7);
            Rect {
                x0,
                y0,
                x1: x0 + rw,
                y1: y0 + rh,
                depth,
                hue: random_hue(&mut rng),
            }
        })
        .collect();
    // Painter's order: far objects first so nearer ones occlude them.
    rects.sort_by(|a, b| b.depth.total_cmp(&a.depth));
    for r in &rects {
        let d = bf / r.depth;
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                disparity[y * w + x] = d;
                hue[y * w + x] = r.hue;
            }
        }
    }

    let (code_lo, code_hi) = cfg.code_bounds();
    let truth_codes: Vec<u16> = disparity
        .iter()
        .map(|&d| {
            let code = (d * CODE_SCALE).round() + 1.0;
            (code as u32).clamp(code_lo, code_hi) as u16
        })
        .collect();

    let mut rgb = Vec::with_capacity(n * 3);
    for (&d, hue) in disparity.iter().zip(&hue) {
        let brightness = 0.15 + 0.85 * ((d - d_min) / (d_max - d_min)).clamp(0.0, 1.0);
        for &c in hue {
            rgb.push((255.0 * c * brightness).round() as u8);
        }
    }

    let mut holes: HashSet<usize> = HashSet::with_capacity(target_holes);
    let mut hole_order: Vec<usize> = Vec::with_capacity(target_holes);
    'bands: for r in rects.iter().rev() {
        // Occlusion width grows with the object's disparity.
        let rel = (bf / r.depth - d_min) / (d_max - d_min);
        let band = 1 + (rel * w as f64 * 0.08).round() as usize;
        let bx0 = r.x0.saturating_sub(band);
        for y in r.y0..r.y1 {
            for x in bx0..r.x0 {
                if holes.len() >= target_holes {
                    break 'bands;
                }
                let i = y * w + x;
                if holes.insert(i) {
                    hole_order.push(i);
                }
            }
        }
    }
    let mut remaining: Vec<usize> = (0..n).filter(|i| !holes.contains(i)).collect();
    remaining.shuffle(&mut rng);
    let needed = target_holes - holes.len();
    hole_order.extend_from_slice(&remaining[..needed]);

    let truth = DisparityRaster::new(w, h, truth_codes)?;
    let mut holed = truth.clone();
    for &i in &hole_order {
        holed.codes_mut()[i] = INVALID_CODE;
    }
    Ok(SyntheticSample {
        rgb: RgbImage::new(w, h, rgb)?,
        truth,
        holed,
    })
}

/// `n` scenes with seeds `cfg.seed + index`.
pub fn generate_dataset(cfg: &SceneConfig, n: usize) -> Result<Vec<SyntheticSample>> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    (0..n)
        .map(|i| {
            generate_scene(&SceneConfig {
                seed: cfg.seed.wrapping_add(i as u64),
                ..*cfg
            })
        })
        .collect()
}
