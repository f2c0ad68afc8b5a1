//! Pixel-error accuracy, invalid-pixel statistics and corrected-pixel rates.
//!
//! All metrics work on stored disparity codes, not metric depth. Accuracy is
//! `100 - 100 * sum|P - P_hat| / sum P`; the raw error ratio is kept alongside.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{DisparityRaster, INVALID_CODE};

/// Which pixels enter the accuracy sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyScope {
    /// Every pixel, including target pixels with code 0.
    #[default]
    AllPixels,
    /// Only pixels whose target code is non-zero.
    ValidTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelErrorSummary {
    pub absolute_error_sum: u64,
    pub target_sum: u64,
    pub error_ratio_pct: f64,
    pub accuracy_pct: f64,
}

impl PixelErrorSummary {
    pub fn from_sums(absolute_error_sum: u64, target_sum: u64) -> Result<Self> {
        if target_sum == 0 {
            return Err(Error::UndefinedMetric("target pixel sum is zero"));
        }
        let error_ratio_pct = 100.0 * absolute_error_sum as f64 / target_sum as f64;
        Ok(Self {
            absolute_error_sum,
            target_sum,
            error_ratio_pct,
            accuracy_pct: 100.0 - error_ratio_pct,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvalidStats {
    pub per_image_counts: Vec<usize>,
    pub average_invalid: f64,
    pub invalid_fraction_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionStats {
    pub per_image_corrected: Vec<usize>,
    pub average_corrected: f64,
    pub average_invalid: f64,
    pub corrected_pct: f64,
}

pub fn absolute_error_sum(pred: &DisparityRaster, target: &DisparityRaster) -> Result<u64> {
    target.ensure_same_dims(pred)?;
    Ok(pred
        .codes()
        .iter()
        .zip(target.codes())
        .map(|(&p, &t)| u64::from(p.abs_diff(t)))
        .sum())
}

fn sums(pred: &DisparityRaster, target: &DisparityRaster, scope: AccuracyScope) -> Result<(u64, u64)> {
    target.ensure_same_dims(pred)?;
    let mut err = 0u64;
    let mut total = 0u64;
    for (&p, &t) in pred.codes().iter().zip(target.codes()) {
        if scope == AccuracyScope::ValidTarget && t == INVALID_CODE {
            continue;
        }
        err += u64::from(p.abs_diff(t));
        total += u64::from(t);
    }
    Ok((err, total))
}

/// Accuracy over every pixel.
pub fn accuracy(pred: &DisparityRaster, target: &DisparityRaster) -> Result<PixelErrorSummary> {
    accuracy_with(pred, target, AccuracyScope::AllPixels)
}

/// Accuracy restricted to pixels with a valid target code.
pub fn accuracy_masked(pred: &DisparityRaster, target: &DisparityRaster) -> Result<PixelErrorSummary> {
    accuracy_with(pred, target, AccuracyScope::ValidTarget)
}

pub fn accuracy_with(
    pred: &DisparityRaster,
    target: &DisparityRaster,
    scope: AccuracyScope,
) -> Result<PixelErrorSummary> {
    let (err, total) = sums(pred, target, scope)?;
    PixelErrorSummary::from_sums(err, total)
}

/// Pooled accuracy over many image pairs: error and target sums are
/// accumulated across the whole set before dividing.
pub fn dataset_accuracy<'a, I>(pairs: I, scope: AccuracyScope) -> Result<PixelErrorSummary>
where
    I: IntoIterator<Item = (&'a DisparityRaster, &'a DisparityRaster)>,
{
    let mut err = 0u64;
    let mut total = 0u64;
    let mut any = false;
    for (pred, target) in pairs {
        let (e, t) = sums(pred, target, scope)?;
        err += e;
        total += t;
        any = true;
    }
    if !any {
        return Err(Error::EmptyDataset);
    }
    PixelErrorSummary::from_sums(err, total)
}

pub fn invalid_count(raster: &DisparityRaster) -> usize {
    raster.invalid_count()
}

pub fn average_invalid<'a, I>(dataset: I) -> Result<InvalidStats>
where
    I: IntoIterator<Item = &'a DisparityRaster>,
{
    let mut dims = None;
    let mut counts = Vec::new();
    for raster in dataset {
        match dims {
            None => dims = Some(raster.dims()),
            Some(d) if d != raster.dims() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: raster.dims(),
                })
            }
            _ => {}
        }
        counts.push(invalid_count(raster));
    }
    let (w, h) = dims.ok_or(Error::EmptyDataset)?;
    let average = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    Ok(InvalidStats {
        average_invalid: average,
        invalid_fraction_pct: invalid_fraction_pct(average, w * h),
        per_image_counts: counts,
    })
}

pub fn invalid_fraction_pct(average_invalid: f64, pixels_per_image: usize) -> f64 {
    average_invalid / pixels_per_image as f64 * 100.0
}

/// Pixels that were invalid in `before` and hold a valid code in `after`.
pub fn corrected_count(before: &DisparityRaster, after: &DisparityRaster) -> Result<usize> {
    before.ensure_same_dims(after)?;
    Ok(before
        .codes()
        .iter()
        .zip(after.codes())
        .filter(|(&b, &a)| b == INVALID_CODE && a != INVALID_CODE)
        .count())
}

pub fn corrected_pixels(before: &[DisparityRaster], after: &[DisparityRaster]) -> Result<CorrectionStats> {
    if before.len() != after.len() {
        return Err(Error::InvalidConfig(format!(
            "before/after datasets differ in length ({} vs {})",
            before.len(),
            after.len()
        )));
    }
    let invalid = average_invalid(before)?;
    let per_image = before
        .iter()
        .zip(after)
        .map(|(b, a)| corrected_count(b, a))
        .collect::<Result<Vec<_>>>()?;
    if invalid.average_invalid == 0.0 {
        return Err(Error::UndefinedMetric("no invalid pixels before correction"));
    }
    let average_corrected = per_image.iter().sum::<usize>() as f64 / per_image.len() as f64;
    Ok(CorrectionStats {
        average_corrected,
        average_invalid: invalid.average_invalid,
        corrected_pct: 100.0 * average_corrected / invalid.average_invalid,
        per_image_corrected: per_image,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raster(w: usize, h: usize, codes: &[u16]) -> DisparityRaster {
        DisparityRaster::new(w, h, codes.to_vec()).unwrap()
    }

    #[test]
    fn absolute_error_examples() {
        let t = raster(1, 1, &[10]);
        assert_eq!(absolute_error_sum(&t, &t).unwrap(), 0);
        assert_eq!(absolute_error_sum(&raster(1, 1, &[8]), &t).unwrap(), 2);
        assert_eq!(
            absolute_error_sum(&raster(2, 1, &[8, 5]), &raster(2, 1, &[10, 0])).unwrap(),
            7
        );
        assert!(matches!(
            absolute_error_sum(&raster(2, 1, &[8, 5]), &raster(1, 2, &[10, 0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn accuracy_examples() {
        let t = raster(1, 1, &[10]);
        assert_eq!(accuracy(&t, &t).unwrap().accuracy_pct, 100.0);
        let s = accuracy(&raster(1, 1, &[8]), &t).unwrap();
        assert!((s.error_ratio_pct - 20.0).abs() < 1e-12);
        assert!((s.accuracy_pct - 80.0).abs() < 1e-12);
        let zero = raster(2, 2, &[0; 4]);
        assert!(matches!(accuracy(&zero, &zero), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn masked_accuracy_skips_invalid_targets() {
        let target = raster(2, 1, &[10, 0]);
        let pred = raster(2, 1, &[10, 500]);
        assert_eq!(accuracy_masked(&pred, &target).unwrap().accuracy_pct, 100.0);
        assert!(accuracy(&pred, &target).unwrap().accuracy_pct < 0.0);
    }

    #[test]
    fn invalid_count_examples() {
        assert_eq!(invalid_count(&raster(4, 4, &[0; 16])), 16);
        assert_eq!(invalid_count(&raster(2, 1, &[3, 4])), 0);
        assert_eq!(invalid_count(&raster(2, 2, &[0, 5, 0, 9])), 2);
    }

    #[test]
    fn average_invalid_examples() {
        let a = raster(4, 2, &[0, 0, 0, 1, 1, 1, 1, 1]);
        let b = raster(4, 2, &[0, 0, 0, 0, 0, 1, 1, 1]);
        let stats = average_invalid([&a, &b]).unwrap();
        assert_eq!(stats.per_image_counts, vec![3, 5]);
        assert_eq!(stats.average_invalid, 4.0);
        assert_eq!(stats.invalid_fraction_pct, 50.0);

        let valid = raster(2, 1, &[7, 7]);
        assert_eq!(average_invalid([&valid, &valid]).unwrap().average_invalid, 0.0);
        assert!(matches!(average_invalid(std::iter::empty()), Err(Error::EmptyDataset)));
        assert!(average_invalid([&a, &valid]).is_err());
    }

    #[test]
    fn reference_dataset_fraction() {
        // 1,206,898 invalid pixels in a 2048x1024 frame.
        let pct = invalid_fraction_pct(1_206_898.0, 2048 * 1024);
        assert!((pct - 57.55).abs() < 0.005, "{pct}");
        assert!((pct - 57.5).abs() < 0.1);
    }

    #[test]
    fn corrected_examples() {
        let before = vec![raster(4, 1, &[0, 0, 0, 5])];
        let full = vec![raster(4, 1, &[1, 2, 3, 5])];
        assert_eq!(corrected_pixels(&before, &full).unwrap().corrected_pct, 100.0);
        assert_eq!(corrected_pixels(&before, &before).unwrap().corrected_pct, 0.0);

        let after = vec![raster(4, 1, &[7, 0, 9, 5])];
        let s = corrected_pixels(&before, &after).unwrap();
        assert_eq!(s.average_corrected, 2.0);
        assert_eq!(s.average_invalid, 3.0);
        assert!((s.corrected_pct - 200.0 / 3.0).abs() < 1e-12);

        let valid = vec![raster(1, 1, &[4])];
        assert!(matches!(
            corrected_pixels(&valid, &valid),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn corrected_ignores_valid_before_pixels() {
        let before = vec![raster(2, 1, &[0, 5])];
        let after = vec![raster(2, 1, &[0, 9])];
        assert_eq!(corrected_pixels(&before, &after).unwrap().average_corrected, 0.0);
    }

    #[test]
    fn pooled_accuracy() {
        let t1 = raster(1, 1, &[10]);
        let t2 = raster(1, 1, &[30]);
        let p1 = raster(1, 1, &[8]);
        let p2 = raster(1, 1, &[30]);
        let s = dataset_accuracy([(&p1, &t1), (&p2, &t2)], AccuracyScope::AllPixels).unwrap();
        assert_eq!(s.absolute_error_sum, 2);
        assert_eq!(s.target_sum, 40);
        assert!((s.accuracy_pct - 95.0).abs() < 1e-12);
    }
}
