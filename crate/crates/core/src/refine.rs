//! Iterative self-training over a depth dataset, and the second-stage corrector.
//!
//! Every refinement pass trains a freshly initialized predictor on the current
//! targets, predicts every image, fills the invalid target pixels with those
//! predictions and adopts the filled rasters as the next pass's targets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inpaint::fill_missing;
use crate::metrics::{self, AccuracyScope};
use crate::predictor::{
    init_model, raster_to_input, train, train_on_inputs, NetworkSpec, PredictorModel, TrainConfig, TrainOutcome,
};
use crate::raster::{DisparityRaster, RgbImage};

fn default_eval_split() -> f64 {
    0.2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub iterations: usize,
    pub predictor_spec: NetworkSpec,
    pub train_cfg: TrainConfig,
    #[serde(default = "default_eval_split")]
    pub eval_split_fraction: f64,
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if !(self.eval_split_fraction > 0.0 && self.eval_split_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "eval_split_fraction must lie in (0, 1), got {}",
                self.eval_split_fraction
            )));
        }
        self.predictor_spec.validate()?;
        self.train_cfg.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    /// Held-out accuracy against this pass's (pre-fill) targets.
    pub accuracy_pct: f64,
    /// Share of the originally invalid training pixels that are now valid.
    /// `None` when the original training targets had no invalid pixels.
    pub corrected_pct: Option<f64>,
    /// Mean invalid count per image after filling.
    pub remaining_invalid_avg: f64,
    /// Final-epoch training loss.
    pub train_loss: f64,
}

/// Everything produced by one pass, handed to the observer.
pub struct IterationArtifacts<'a> {
    pub report: &'a IterationReport,
    pub model: &'a PredictorModel,
    pub loss_trace: &'a [f64],
    /// Refined targets, same order as the input dataset.
    pub targets: &'a [DisparityRaster],
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub refined: Vec<DisparityRaster>,
    pub reports: Vec<IterationReport>,
    pub final_model: PredictorModel,
}

/// Deterministic train/eval split: the last `round(n * fraction)` images
/// (at least one, leaving at least one for training) are held out.
pub fn eval_mask(n: usize, fraction: f64) -> Result<Vec<bool>> {
    if n < 2 {
        return Err(Error::InvalidConfig(
            "refinement needs at least two images (one train, one eval)".into(),
        ));
    }
    let eval = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    Ok((0..n).map(|i| i >= n - eval).collect())
}

pub fn iterative_refine(dataset: &[(RgbImage, DisparityRaster)], cfg: &RefineConfig) -> Result<RefineOutcome> {
    let mask = eval_mask(dataset.len(), cfg.eval_split_fraction)?;
    iterative_refine_split(dataset, &mask, cfg, |_| Ok(()))
}

/// Refinement with an explicit eval mask and a per-pass observer.
pub fn iterative_refine_split<F>(
    dataset: &[(RgbImage, DisparityRaster)],
    is_eval: &[bool],
    cfg: &RefineConfig,
    mut observe: F,
) -> Result<RefineOutcome>
where
    F: FnMut(&IterationArtifacts<'_>) -> Result<()>,
{
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if is_eval.len() != dataset.len() {
        return Err(Error::InvalidConfig("eval mask length differs from dataset".into()));
    }
    let dims = dataset[0].1.dims();
    for (rgb, target) in dataset {
        if target.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: target.dims(),
            });
        }
        if rgb.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: rgb.dims(),
            });
        }
    }
    let train_idx: Vec<usize> = (0..dataset.len()).filter(|&i| !is_eval[i]).collect();
    let eval_idx: Vec<usize> = (0..dataset.len()).filter(|&i| is_eval[i]).collect();
    if train_idx.is_empty() || eval_idx.is_empty() {
        return Err(Error::InvalidConfig(
            "both train and eval splits must be non-empty".into(),
        ));
    }

    let original_train: Vec<DisparityRaster> = train_idx.iter().map(|&i| dataset[i].1.clone()).collect();
    let mut targets: Vec<DisparityRaster> = dataset.iter().map(|(_, t)| t.clone()).collect();
    let mut reports = Vec::with_capacity(cfg.iterations);
    let mut last_model = None;

    for iteration in 1..=cfg.iterations {
        let wrap = |e: Error| Error::Iteration {
            iteration,
            source: Box::new(e),
        };
        let spec = NetworkSpec {
            seed: cfg.predictor_spec.seed.wrapping_add(iteration as u64 - 1),
            ..cfg.predictor_spec
        };
        let fresh = init_model(&spec).map_err(wrap)?;
        let train_set: Vec<(RgbImage, DisparityRaster)> = train_idx
            .iter()
            .map(|&i| (dataset[i].0.clone(), targets[i].clone()))
            .collect();
        let TrainOutcome { model, loss_trace } = train(&fresh, &train_set, &cfg.train_cfg).map_err(wrap)?;

        let predictions: Vec<DisparityRaster> = dataset
            .par_iter()
            .map(|(rgb, _)| model.predict(rgb, dims))
            .collect::<Result<_>>()
            .map_err(wrap)?;

        let accuracy = metrics::dataset_accuracy(
            eval_idx.iter().map(|&i| (&predictions[i], &targets[i])),
            AccuracyScope::AllPixels,
        )
        .map_err(wrap)?;

        let filled: Vec<DisparityRaster> = targets
            .iter()
            .zip(&predictions)
            .map(|(t, p)| fill_missing(t, p).map(|o| o.filled))
            .collect::<Result<_>>()
            .map_err(wrap)?;

        let filled_train: Vec<DisparityRaster> = train_idx.iter().map(|&i| filled[i].clone()).collect();
        let corrected_pct = match metrics::corrected_pixels(&original_train, &filled_train) {
            Ok(stats) => Some(stats.corrected_pct),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(wrap(e)),
        };
        let remaining_invalid_avg =
            filled.iter().map(DisparityRaster::invalid_count).sum::<usize>() as f64 / filled.len() as f64;

        targets = filled;
        let report = IterationReport {
            iteration,
            accuracy_pct: accuracy.accuracy_pct,
            corrected_pct,
            remaining_invalid_avg,
            train_loss: *loss_trace.last().expect("at least one epoch"),
        };
        observe(&IterationArtifacts {
            report: &report,
            model: &model,
            loss_trace: &loss_trace,
            targets: &targets,
        })?;
        reports.push(report);
        last_model = Some(model);
    }

    Ok(RefineOutcome {
        refined: targets,
        reports,
        final_model: last_model.expect("at least one iteration"),
    })
}

/// Trains a raster-to-raster corrector: normalized holed rasters in,
/// refined rasters as targets.
pub fn train_corrector(
    pairs: &[(DisparityRaster, DisparityRaster)],
    spec: &NetworkSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (holed, refined) in pairs {
        holed.ensure_same_dims(refined)?;
    }
    let spec = spec.with_input_channels(1);
    let model = init_model(&spec)?;
    let (w, h) = spec.input_size;
    let samples: Vec<_> = pairs
        .iter()
        .map(|(holed, refined)| (raster_to_input(holed, w, h), refined.resize_nearest(w, h)))
        .collect();
    train_on_inputs(&model, &samples, cfg)
}

/// One forward pass of the corrector, applied only to the invalid pixels.
pub fn correct(model: &PredictorModel, holed: &DisparityRaster) -> Result<DisparityRaster> {
    let prediction = model.predict_from_raster(holed, holed.dims())?;
    Ok(fill_missing(holed, &prediction)?.filled)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_mask_shapes() {
        assert_eq!(eval_mask(5, 0.2).unwrap(), vec![false, false, false, false, true]);
        assert_eq!(eval_mask(2, 0.9).unwrap(), vec![false, true]);
        assert_eq!(eval_mask(10, 0.01).unwrap().iter().filter(|&&e| e).count(), 1);
        assert!(eval_mask(1, 0.5).is_err());
    }

    #[test]
    fn config_validation() {
        let cfg = RefineConfig {
            iterations: 1,
            predictor_spec: NetworkSpec {
                input_size: (8, 8),
                input_channels: 3,
                levels: 1,
                base_channels: 1,
                seed: 0,
            },
            train_cfg: TrainConfig {
                epochs: 1,
                learning_rate: 0.1,
                batch_size: 1,
                mask_invalid_targets: false,
                momentum: 0.0,
                optimizer: Default::default(),
                seed: 0,
            },
            eval_split_fraction: 0.2,
        };
        assert!(cfg.validate().is_ok());
        assert!(RefineConfig { iterations: 0, ..cfg }.validate().is_err());
        assert!(RefineConfig {
            eval_split_fraction: 1.0,
            ..cfg
        }
        .validate()
        .is_err());
        assert!(RefineConfig {
            eval_split_fraction: 0.0,
            ..cfg
        }
        .validate()
        .is_err());
    }
}
