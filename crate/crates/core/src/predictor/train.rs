use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{rgb_to_input, FeatureMap, PredictorModel, CODE_NORM};
use crate::error::{Error, Result};
use crate::raster::{DisparityRaster, RgbImage, INVALID_CODE};

fn default_momentum() -> f64 {
    0.0
}

/// Parameter update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Gradient descent, with heavy-ball momentum when `momentum > 0`.
    Sgd,
    /// Adam with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    #[default]
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Exclude target pixels with code 0 from the loss.
    #[serde(default)]
    pub mask_invalid_targets: bool,
    /// Heavy-ball momentum coefficient; 0 is plain gradient descent.
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    /// Seeds the per-epoch sample shuffle.
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// d loss / d prediction, one entry per output pixel.
    pub grad: Vec<f64>,
    pub included: usize,
}

/// Mean squared error between normalized predictions and `target / 65535`.
pub fn loss_mse(pred: &[f64], target: &DisparityRaster, mask_invalid: bool) -> Result<LossOutput> {
    if pred.len() != target.len() {
        return Err(Error::BufferLength {
            len: pred.len(),
            width: target.width(),
            height: target.height(),
            channels: 1,
        });
    }
    let included = if mask_invalid {
        target.len() - target.invalid_count()
    } else {
        target.len()
    };
    if included == 0 {
        return Err(Error::UndefinedMetric("loss mask excludes every pixel"));
    }
    let n = included as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for ((g, &p), &code) in grad.iter_mut().zip(pred).zip(target.codes()) {
        if mask_invalid && code == INVALID_CODE {
            continue;
        }
        let diff = p - f64::from(code) / CODE_NORM;
        loss += diff * diff;
        *g = 2.0 * diff / n;
    }
    Ok(LossOutput {
        loss: loss / n,
        grad,
        included,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PredictorModel,
    /// Mean per-sample loss of each epoch, measured as the epoch runs.
    pub loss_trace: Vec<f64>,
}

/// Mini-batch gradient descent on RGB/raster pairs. Images and targets are
/// resampled to the network size.
pub fn train(
    model: &PredictorModel,
    dataset: &[(RgbImage, DisparityRaster)],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let (w, h) = model.spec().input_size;
    if model.spec().input_channels != 3 {
        return Err(Error::InvalidConfig("train() expects an RGB model".into()));
    }
    let samples: Vec<(FeatureMap, DisparityRaster)> = dataset
        .iter()
        .map(|(rgb, target)| (rgb_to_input(rgb, w, h), target.resize_nearest(w, h)))
        .collect();
    train_on_inputs(model, &samples, cfg)
}

/// Training loop over pre-built network inputs and targets at network size.
///
/// Each epoch shuffles the sample order from a ChaCha8 stream seeded by
/// `cfg.seed`. Per-sample gradients inside a batch are computed in parallel
/// and summed in sample order, so results do not depend on thread count.
pub fn train_on_inputs(
    model: &PredictorModel,
    samples: &[(FeatureMap, DisparityRaster)],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut model = model.clone();
    let mut velocity = vec![0.0; model.parameters().len()];
    let mut second_moment = match cfg.optimizer {
        Optimizer::Adam => vec![0.0; velocity.len()],
        Optimizer::Sgd => Vec::new(),
    };
    let mut step = 0i32;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| {
                    let (input, target) = &samples[i];
                    model.forward_backward(input, |out| {
                        let l = loss_mse(out, target, cfg.mask_invalid_targets)?;
                        Ok((l.loss, l.grad))
                    })
                })
                .collect::<Result<_>>()?;

            let scale = 1.0 / batch.len() as f64;
            let mut grad = vec![0.0; velocity.len()];
            for (loss, g) in &results {
                epoch_loss += loss;
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += v * scale;
                }
            }
            if results.iter().any(|(l, _)| !l.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    loss: epoch_loss,
                });
            }
            step += 1;
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for ((p, v), g) in model.parameters_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                        *v = cfg.momentum * *v + g;
                        *p -= cfg.learning_rate * *v;
                    }
                }
                Optimizer::Adam => {
                    let c1 = 1.0 - ADAM_BETA1.powi(step);
                    let c2 = 1.0 - ADAM_BETA2.powi(step);
                    let params = model.parameters_mut().iter_mut();
                    for (((p, m), v), g) in params.zip(&mut velocity).zip(&mut second_moment).zip(&grad) {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        let mean = epoch_loss / samples.len() as f64;
        if !mean.is_finite() || model.parameters().iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        loss_trace.push(mean);
    }
    Ok(TrainOutcome { model, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        let t = DisparityRaster::new(2, 1, vec![65535, 0]).unwrap();
        let exact = loss_mse(&[1.0, 0.0], &t, false).unwrap();
        assert_eq!(exact.loss, 0.0);
        assert!(exact.grad.iter().all(|&g| g == 0.0));

        let one = DisparityRaster::new(1, 1, vec![65535]).unwrap();
        let l = loss_mse(&[0.5], &one, false).unwrap();
        assert!((l.loss - 0.25).abs() < 1e-15);
        assert!((l.grad[0] + 1.0).abs() < 1e-15);

        let zeros = DisparityRaster::filled(2, 2, 0);
        assert!(matches!(
            loss_mse(&[0.0; 4], &zeros, true),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn masked_loss_ignores_invalid_targets() {
        let t = DisparityRaster::new(2, 1, vec![65535, 0]).unwrap();
        let l = loss_mse(&[1.0, 0.7], &t, true).unwrap();
        assert_eq!(l.loss, 0.0);
        assert_eq!(l.grad, vec![0.0, 0.0]);
        assert_eq!(l.included, 1);
        let unmasked = loss_mse(&[1.0, 0.7], &t, false).unwrap();
        assert!((unmasked.loss - 0.49 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig {
            epochs: 1,
            learning_rate: 0.1,
            batch_size: 1,
            mask_invalid_targets: false,
            momentum: 0.0,
            optimizer: Optimizer::Sgd,
            seed: 0,
        };
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..ok }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..ok }.validate().is_err());
        assert!(TrainConfig {
            learning_rate: -1.0,
            ..ok
        }
        .validate()
        .is_err());
        assert!(TrainConfig { momentum: 1.0, ..ok }.validate().is_err());
    }
}
