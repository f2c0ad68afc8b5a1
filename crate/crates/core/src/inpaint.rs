//! Filling invalid pixels from a prediction, plus a diffusion baseline predictor.

use crate::error::{Error, Result};
use crate::raster::{DisparityRaster, INVALID_CODE};

/// Sweeps stop once no pixel moves by this much (in code units).
pub const DIFFUSION_TOLERANCE: f64 = 0.5;
pub const DIFFUSION_MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FillOutcome {
    pub filled: DisparityRaster,
    pub replaced_count: usize,
    pub remaining_invalid: usize,
}

/// Replaces every invalid target pixel with the prediction at the same
/// position. Valid target pixels are never touched.
pub fn fill_missing(target: &DisparityRaster, predicted: &DisparityRaster) -> Result<FillOutcome> {
    target.ensure_same_dims(predicted)?;
    let mut filled = target.clone();
    let mut replaced_count = 0;
    let mut remaining_invalid = 0;
    for (out, &pred) in filled.codes_mut().iter_mut().zip(predicted.codes()) {
        if *out != INVALID_CODE {
            continue;
        }
        *out = pred;
        if pred == INVALID_CODE {
            remaining_invalid += 1;
        } else {
            replaced_count += 1;
        }
    }
    Ok(FillOutcome {
        filled,
        replaced_count,
        remaining_invalid,
    })
}

/// Non-learned stand-in predictor: invalid pixels relax to the average of
/// their 4-neighbours (a discrete Laplace solve with the valid pixels held
/// fixed). The result has no invalid codes.
pub fn baseline_predict(target: &DisparityRaster) -> Result<DisparityRaster> {
    let (w, h) = target.dims();
    let codes = target.codes();
    let valid_count = codes.len() - target.invalid_count();
    if valid_count == 0 {
        return Err(Error::AllInvalid);
    }
    let mean = codes.iter().map(|&c| f64::from(c)).sum::<f64>() / valid_count as f64;

    let holes: Vec<usize> = (0..codes.len()).filter(|&i| codes[i] == INVALID_CODE).collect();
    let mut field = initial_guess(target, mean);

    // Gauss-Seidel sweeps over the hole pixels only.
    for _ in 0..DIFFUSION_MAX_SWEEPS {
        let mut max_change = 0.0f64;
        for &i in &holes {
            let (x, y) = (i % w, i / w);
            let mut sum = 0.0;
            let mut n = 0.0;
            if x > 0 {
                sum += field[i - 1];
                n += 1.0;
            }
            if x + 1 < w {
                sum += field[i + 1];
                n += 1.0;
            }
            if y > 0 {
                sum += field[i - w];
                n += 1.0;
            }
            if y + 1 < h {
                sum += field[i + w];
                n += 1.0;
            }
            if n == 0.0 {
                continue;
            }
            let next = sum / n;
            max_change = max_change.max((next - field[i]).abs());
            field[i] = next;
        }
        if max_change < DIFFUSION_TOLERANCE {
            break;
        }
    }

    let out = codes
        .iter()
        .zip(&field)
        .map(|(&c, &v)| {
            if c != INVALID_CODE {
                c
            } else {
                v.round().clamp(1.0, f64::from(u16::MAX)) as u16
            }
        })
        .collect();
    DisparityRaster::new(w, h, out)
}

/// Starting field for the relaxation: holes interpolate linearly between the
/// nearest valid pixels in their row (or copy the one neighbour that exists);
/// rows without any valid pixel start at the global mean.
fn initial_guess(target: &DisparityRaster, mean: f64) -> Vec<f64> {
    let (w, h) = target.dims();
    let codes = target.codes();
    let mut field: Vec<f64> = codes.iter().map(|&c| f64::from(c)).collect();
    for y in 0..h {
        let row = &codes[y * w..(y + 1) * w];
        let mut prev: Option<usize> = None;
        let mut x = 0;
        while x < w {
            if row[x] != INVALID_CODE {
                prev = Some(x);
                x += 1;
                continue;
            }
            let end = (x..w).find(|&i| row[i] != INVALID_CODE);
            for i in x..end.unwrap_or(w) {
                field[y * w + i] = match (prev, end) {
                    (Some(a), Some(b)) => {
                        let t = (i - a) as f64 / (b - a) as f64;
                        f64::from(row[a]) * (1.0 - t) + f64::from(row[b]) * t
                    }
                    (Some(a), None) => f64::from(row[a]),
                    (None, Some(b)) => f64::from(row[b]),
                    (None, None) => mean,
                };
            }
            x = end.unwrap_or(w);
        }
    }
    field
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raster(w: usize, h: usize, codes: &[u16]) -> DisparityRaster {
        DisparityRaster::new(w, h, codes.to_vec()).unwrap()
    }

    #[test]
    fn fill_examples() {
        let out = fill_missing(&raster(2, 1, &[0, 300]), &raster(2, 1, &[500, 999])).unwrap();
        assert_eq!(out.filled.codes(), &[500, 300]);
        assert_eq!(out.replaced_count, 1);
        assert_eq!(out.remaining_invalid, 0);

        let valid = raster(2, 1, &[4, 5]);
        let out = fill_missing(&valid, &raster(2, 1, &[9, 9])).unwrap();
        assert_eq!(out.filled, valid);
        assert_eq!(out.replaced_count, 0);

        let out = fill_missing(&raster(1, 1, &[0]), &raster(1, 1, &[0])).unwrap();
        assert_eq!(out.filled.codes(), &[0]);
        assert_eq!(out.remaining_invalid, 1);
        assert_eq!(out.replaced_count, 0);
    }

    #[test]
    fn fill_rejects_mismatched_dims() {
        assert!(matches!(
            fill_missing(&raster(2, 1, &[0, 1]), &raster(1, 2, &[0, 1])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn baseline_examples() {
        let uniform = DisparityRaster::filled(5, 4, 777);
        assert_eq!(baseline_predict(&uniform).unwrap(), uniform);

        let line = raster(3, 1, &[100, 0, 300]);
        assert_eq!(baseline_predict(&line).unwrap().codes(), &[100, 200, 300]);

        assert!(matches!(
            baseline_predict(&DisparityRaster::filled(3, 3, 0)),
            Err(Error::AllInvalid)
        ));
    }

    #[test]
    fn baseline_fills_large_holes() {
        // Left column 1000, right column 3000, everything between missing.
        let (w, h) = (9, 5);
        let mut r = DisparityRaster::filled(w, h, 0);
        for y in 0..h {
            r.set(0, y, 1000);
            r.set(w - 1, y, 3000);
        }
        let out = baseline_predict(&r).unwrap();
        assert_eq!(out.invalid_count(), 0);
        // Harmonic solution is linear across columns.
        for x in 0..w {
            let expected = 1000.0 + 2000.0 * x as f64 / (w - 1) as f64;
            assert!((f64::from(out.get(x, 2)) - expected).abs() <= 2.0);
        }
    }
}
