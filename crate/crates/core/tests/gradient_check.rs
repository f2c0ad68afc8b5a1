//! Analytic backprop vs central finite differences on the full network loss.

use depthfill_core::predictor::{init_model, loss_mse, FeatureMap, NetworkSpec, PredictorModel};
use depthfill_core::DisparityRaster;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
/// Gradients below this magnitude are compared in absolute terms; central
/// differences carry ~1e-11 of rounding noise at this step size.
const GRAD_FLOOR: f64 = 1e-7;

fn loss(model: &PredictorModel, input: &FeatureMap, target: &DisparityRaster, mask: bool) -> f64 {
    let out = model.forward_map(input).unwrap();
    loss_mse(&out.values, target, mask).unwrap().loss
}

fn random_case(spec: &NetworkSpec, seed: u64) -> (FeatureMap, DisparityRaster) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = spec.input_size;
    let mut input = FeatureMap::zeros(spec.input_channels, h, w);
    for v in &mut input.data {
        *v = rng.random_range(0.0..1.0);
    }
    let codes = (0..w * h)
        .map(|_| {
            if rng.random_bool(0.3) {
                0
            } else {
                rng.random_range(1..=u16::MAX)
            }
        })
        .collect();
    (input, DisparityRaster::new(w, h, codes).unwrap())
}

/// Returns (worst relative error, number of sampled parameters whose
/// gradient is above the noise floor).
fn check(spec: NetworkSpec, samples: usize, mask: bool, seed: u64) -> (f64, usize) {
    let model = init_model(&spec).unwrap();
    let (input, target) = random_case(&spec, seed);
    let (_, analytic) = model
        .forward_backward(&input, |out| {
            let l = loss_mse(out, &target, mask)?;
            Ok((l.loss, l.grad))
        })
        .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let mut worst = 0.0f64;
    let mut nonzero = 0;
    for _ in 0..samples {
        let k = rng.random_range(0..model.parameters().len());
        let mut plus = model.clone();
        plus.parameters_mut()[k] += STEP;
        let mut minus = model.clone();
        minus.parameters_mut()[k] -= STEP;
        let numeric = (loss(&plus, &input, &target, mask) - loss(&minus, &input, &target, mask)) / (2.0 * STEP);
        let a = analytic[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
        worst = worst.max(rel);
        nonzero += usize::from(a.abs() > GRAD_FLOOR);
    }
    eprintln!(
        "levels {}: worst relative error {worst:.2e}, {nonzero}/{samples} non-negligible",
        spec.levels
    );
    (worst, nonzero)
}

#[test]
fn levels_one_8x8_matches_finite_differences() {
    let spec = NetworkSpec {
        input_size: (8, 8),
        input_channels: 3,
        levels: 1,
        base_channels: 2,
        seed: 3,
    };
    let (worst, live) = check(spec, 200, false, 1);
    assert!(live >= 50, "only {live} of 200 sampled gradients are non-negligible");
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn deeper_and_masked_networks_match() {
    for (levels, channels, mask, seed) in [(2, 1, true, 2), (2, 3, false, 2), (3, 1, false, 2)] {
        let spec = NetworkSpec {
            input_size: (16, 8),
            input_channels: channels,
            levels,
            base_channels: 4,
            seed,
        };
        let (worst, live) = check(spec, 120, mask, seed);
        assert!(worst < 1e-3, "levels {levels}: worst relative error {worst}");
        assert!(
            live >= 20,
            "levels {levels}: only {live} of 120 sampled gradients are non-negligible"
        );
    }
}

#[test]
fn backward_entry_point_agrees_with_forward_backward() {
    let spec = NetworkSpec {
        input_size: (8, 8),
        input_channels: 3,
        levels: 1,
        base_channels: 2,
        seed: 9,
    };
    let model = init_model(&spec).unwrap();
    let (input, target) = random_case(&spec, 2);
    let out = model.forward_map(&input).unwrap();
    let l = loss_mse(&out.values, &target, false).unwrap();
    let g1 = model.backward(&input, &l.grad).unwrap();
    let (_, g2) = model
        .forward_backward(&input, |o| {
            let l = loss_mse(o, &target, false)?;
            Ok((l.loss, l.grad))
        })
        .unwrap();
    assert_eq!(g1, g2);
}
