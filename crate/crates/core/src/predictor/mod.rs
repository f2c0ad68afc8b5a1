//! Encoder-decoder ("U-Net") regressor from an image to a dense disparity field.
//!
//! Each encoder level runs two 3x3 convolutions with ReLU and then a 2x2 max
//! pool; the bottleneck runs two more convolutions; each decoder level
//! upsamples 2x (nearest), concatenates the matching encoder output and runs
//! two 3x3 convolutions. A final 1x1 convolution produces a single linear
//! output channel. Channel width doubles per level from `base_channels`.
//!
//! Parameters live in one flat `Vec<f64>`, layer by layer in execution
//! order (encoder levels top-down, bottleneck, decoder levels bottom-up,
//! head), each layer as `[out][in][ky][kx]` weights followed by biases.

mod checkpoint;
pub mod tensor;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{encode_disparity, DisparityRaster, RgbImage, CODE_SCALE};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tensor::FeatureMap;
pub use train::{loss_mse, train, train_on_inputs, LossOutput, Optimizer, TrainConfig, TrainOutcome};

/// Codes are divided by this to normalize regression targets into `[0, 1]`.
pub const CODE_NORM: f64 = u16::MAX as f64;

fn default_input_channels() -> usize {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// `(width, height)` the network runs at.
    pub input_size: (usize, usize),
    /// 3 for RGB predictors, 1 for raster-to-raster correctors.
    #[serde(default = "default_input_channels")]
    pub input_channels: usize,
    pub levels: usize,
    pub base_channels: usize,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.input_size;
        if self.levels == 0 || self.base_channels == 0 || self.input_channels == 0 {
            return Err(Error::InvalidConfig(
                "levels, base_channels and input_channels must be at least 1".into(),
            ));
        }
        if self.levels > 16 {
            return Err(Error::InvalidConfig(format!("levels = {} is too deep", self.levels)));
        }
        let div = 1usize << self.levels;
        if w == 0 || h == 0 || w % div != 0 || h % div != 0 {
            return Err(Error::InvalidConfig(format!(
                "input size {w}x{h} must be non-zero and divisible by 2^{} = {div}",
                self.levels
            )));
        }
        Ok(())
    }

    pub fn with_input_channels(mut self, channels: usize) -> Self {
        self.input_channels = channels;
        self
    }

    fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Convolution shapes in parameter order.
    fn layout(&self) -> Vec<ConvShape> {
        let mut shapes = Vec::with_capacity(4 * self.levels + 3);
        let mut offset = 0;
        let mut push = |cin: usize, cout: usize, kernel: usize| {
            let s = ConvShape {
                cin,
                cout,
                kernel,
                offset,
            };
            offset += s.len();
            shapes.push(s);
        };
        let mut cin = self.input_channels;
        for l in 0..self.levels {
            let c = self.channels_at(l);
            push(cin, c, 3);
            push(c, c, 3);
            cin = c;
        }
        let cb = self.channels_at(self.levels);
        push(cin, cb, 3);
        push(cb, cb, 3);
        for l in (0..self.levels).rev() {
            let c = self.channels_at(l);
            push(self.channels_at(l + 1) + c, c, 3);
            push(c, c, 3);
        }
        push(self.channels_at(0), 1, 1);
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().iter().map(ConvShape::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvShape {
    cin: usize,
    cout: usize,
    kernel: usize,
    offset: usize,
}

impl ConvShape {
    fn weight_len(&self) -> usize {
        self.cout * self.cin * self.kernel * self.kernel
    }

    fn len(&self) -> usize {
        self.weight_len() + self.cout
    }

    fn fan_in(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.weight_len()]
    }

    fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset + self.weight_len()..self.offset + self.len()]
    }

    fn split_grad<'a>(&self, grad: &'a mut [f64]) -> (&'a mut [f64], &'a mut [f64]) {
        grad[self.offset..self.offset + self.len()].split_at_mut(self.weight_len())
    }
}

/// Dense per-pixel network output at network resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    spec: NetworkSpec,
    layout: Vec<ConvShape>,
    params: Vec<f64>,
}

/// Deterministic initialization: every weight and bias of a layer is drawn
/// uniformly from `±sqrt(1 / fan_in)` using a ChaCha8 stream seeded by `spec.seed`.
pub fn init_model(spec: &NetworkSpec) -> Result<PredictorModel> {
    spec.validate()?;
    let layout = spec.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut params = Vec::with_capacity(spec.parameter_count());
    for shape in &layout {
        let bound = (1.0 / shape.fan_in() as f64).sqrt();
        for _ in 0..shape.len() {
            params.push(rng.random_range(-bound..bound));
        }
    }
    Ok(PredictorModel {
        spec: *spec,
        layout,
        params,
    })
}

/// Intermediate activations kept for the backward pass.
struct Trace {
    /// Input to each convolution, by layer index.
    conv_in: Vec<FeatureMap>,
    /// Post-activation output of each convolution (head is linear).
    conv_out: Vec<FeatureMap>,
    pool_argmax: Vec<Vec<u32>>,
}

impl PredictorModel {
    pub fn from_parameters(spec: NetworkSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        let expected: usize = layout.iter().map(ConvShape::len).sum();
        if params.len() != expected {
            return Err(Error::InvalidConfig(format!(
                "expected {expected} parameters for this spec, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidConfig("non-finite parameter".into()));
        }
        Ok(Self { spec, layout, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, input: &FeatureMap) -> Result<()> {
        let (w, h) = self.spec.input_size;
        if input.channels != self.spec.input_channels || input.width != w || input.height != h {
            return Err(Error::DimensionMismatch {
                expected: (w, h),
                actual: (input.width, input.height),
            });
        }
        Ok(())
    }

    fn conv(&self, layer: usize, input: &FeatureMap, relu: bool) -> FeatureMap {
        let s = &self.layout[layer];
        let mut out = tensor::conv_forward(input, s.weights(&self.params), s.bias(&self.params), s.cout, s.kernel);
        if relu {
            tensor::relu_inplace(&mut out);
        }
        out
    }

    fn run(&self, input: &FeatureMap, mut trace: Option<&mut Trace>) -> FeatureMap {
        let levels = self.spec.levels;
        let mut layer = 0;
        let mut apply = |x: &FeatureMap, relu: bool, trace: &mut Option<&mut Trace>| {
            let y = self.conv(layer, x, relu);
            if let Some(t) = trace.as_deref_mut() {
                t.conv_in.push(x.clone());
                t.conv_out.push(y.clone());
            }
            layer += 1;
            y
        };

        let mut skips = Vec::with_capacity(levels);
        let mut x = input.clone();
        for _ in 0..levels {
            let a = apply(&x, true, &mut trace);
            let b = apply(&a, true, &mut trace);
            let (pooled, argmax) = tensor::max_pool2(&b);
            if let Some(t) = trace.as_deref_mut() {
                t.pool_argmax.push(argmax);
            }
            skips.push(b);
            x = pooled;
        }
        let a = apply(&x, true, &mut trace);
        x = apply(&a, true, &mut trace);
        for skip in skips.iter().rev() {
            let cat = tensor::concat_channels(&tensor::upsample2(&x), skip);
            let a = apply(&cat, true, &mut trace);
            x = apply(&a, true, &mut trace);
        }
        apply(&x, false, &mut trace)
    }

    /// Forward pass on an already-normalized input at network resolution.
    pub fn forward_map(&self, input: &FeatureMap) -> Result<ValueField> {
        self.check_input(input)?;
        let out = self.run(input, None);
        Ok(ValueField {
            width: out.width,
            height: out.height,
            values: out.data,
        })
    }

    /// Forward pass on an RGB image (resampled to the network size, scaled to `[0, 1]`).
    pub fn forward(&self, rgb: &RgbImage) -> Result<ValueField> {
        self.forward_map(&self.rgb_input(rgb)?)
    }

    pub fn rgb_input(&self, rgb: &RgbImage) -> Result<FeatureMap> {
        if self.spec.input_channels != 3 {
            return Err(Error::InvalidConfig(format!(
                "model expects {} input channel(s), not RGB",
                self.spec.input_channels
            )));
        }
        let (w, h) = self.spec.input_size;
        Ok(rgb_to_input(rgb, w, h))
    }

    pub fn raster_input(&self, raster: &DisparityRaster) -> Result<FeatureMap> {
        if self.spec.input_channels != 1 {
            return Err(Error::InvalidConfig(format!(
                "model expects {} input channel(s), not a raster",
                self.spec.input_channels
            )));
        }
        let (w, h) = self.spec.input_size;
        Ok(raster_to_input(raster, w, h))
    }

    /// Gradient of a scalar loss with respect to all parameters, given the
    /// loss gradient with respect to the network output.
    pub fn backward(&self, input: &FeatureMap, grad_output: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut trace = Trace {
            conv_in: Vec::with_capacity(self.layout.len()),
            conv_out: Vec::with_capacity(self.layout.len()),
            pool_argmax: Vec::with_capacity(self.spec.levels),
        };
        self.run(input, Some(&mut trace));
        Ok(self.backward_from_trace(&trace, grad_output))
    }

    /// Forward and backward in one call: returns the output and lets the caller
    /// turn it into a loss gradient before back-propagating.
    pub fn forward_backward<F>(&self, input: &FeatureMap, loss: F) -> Result<(f64, Vec<f64>)>
    where
        F: FnOnce(&[f64]) -> Result<(f64, Vec<f64>)>,
    {
        self.check_input(input)?;
        let mut trace = Trace {
            conv_in: Vec::with_capacity(self.layout.len()),
            conv_out: Vec::with_capacity(self.layout.len()),
            pool_argmax: Vec::with_capacity(self.spec.levels),
        };
        let out = self.run(input, Some(&mut trace));
        let (value, grad_out) = loss(&out.data)?;
        Ok((value, self.backward_from_trace(&trace, &grad_out)))
    }

    fn backward_from_trace(&self, trace: &Trace, grad_output: &[f64]) -> Vec<f64> {
        let levels = self.spec.levels;
        let mut grad = vec![0.0; self.params.len()];
        let mut layer = self.layout.len();

        // Backprop through one conv (+ReLU) layer; returns the input gradient.
        let mut back = |g: FeatureMap, grad: &mut [f64], relu: bool, need_input: bool| {
            layer -= 1;
            let s = &self.layout[layer];
            let mut g = g;
            if relu {
                tensor::relu_backward_inplace(&mut g, &trace.conv_out[layer]);
            }
            let (gw, gb) = s.split_grad(grad);
            tensor::conv_backward(
                &trace.conv_in[layer],
                s.weights(&self.params),
                &g,
                s.kernel,
                gw,
                gb,
                need_input,
            )
        };

        let (w, h) = self.spec.input_size;
        let g_out = FeatureMap {
            channels: 1,
            height: h,
            width: w,
            data: grad_output.to_vec(),
        };
        let mut g = back(g_out, &mut grad, false, true).expect("input grad");

        let mut skip_grads = Vec::with_capacity(levels);
        for l in 0..levels {
            let gb = back(g, &mut grad, true, true).expect("input grad");
            let gcat = back(gb, &mut grad, true, true).expect("input grad");
            let (g_up, g_skip) = tensor::split_channels(gcat, self.spec.channels_at(l + 1));
            skip_grads.push(g_skip);
            g = tensor::upsample2_backward(&g_up);
        }
        let gb = back(g, &mut grad, true, true).expect("input grad");
        g = back(gb, &mut grad, true, true).expect("input grad");

        for l in (0..levels).rev() {
            let skip_out = &trace.conv_out[2 * l + 1];
            let mut g_skip = tensor::max_pool2_backward(
                &g,
                &trace.pool_argmax[l],
                (skip_out.channels, skip_out.height, skip_out.width),
            );
            for (a, b) in g_skip.data.iter_mut().zip(&skip_grads[l].data) {
                *a += b;
            }
            let ga = back(g_skip, &mut grad, true, true).expect("input grad");
            match back(ga, &mut grad, true, l > 0) {
                Some(next) => g = next,
                None => break,
            }
        }
        debug_assert_eq!(layer, 0);
        grad
    }

    /// Forward pass turned into a disparity raster of size `out_size`: output
    /// values are denormalized to code space, quantized and resampled.
    pub fn predict(&self, rgb: &RgbImage, out_size: (usize, usize)) -> Result<DisparityRaster> {
        let field = self.forward(rgb)?;
        Ok(field_to_raster(&field, out_size))
    }

    /// Same as [`predict`](Self::predict) for single-channel raster inputs.
    pub fn predict_from_raster(&self, raster: &DisparityRaster, out_size: (usize, usize)) -> Result<DisparityRaster> {
        let field = self.forward_map(&self.raster_input(raster)?)?;
        Ok(field_to_raster(&field, out_size))
    }
}

/// Quantizes one normalized network output into a disparity code.
///
/// The value is scaled to code space, read as a disparity and encoded, so
/// anything at or below the minimum valid code lands on code 1 and non-finite
/// values become invalid.
pub fn quantize_output(value: f64) -> u16 {
    if !value.is_finite() {
        return encode_disparity(None);
    }
    let code = value * CODE_NORM;
    encode_disparity(Some(((code - 1.0) / CODE_SCALE).max(0.0)))
}

pub fn field_to_raster(field: &ValueField, out_size: (usize, usize)) -> DisparityRaster {
    let codes = field.values.iter().map(|&v| quantize_output(v)).collect();
    DisparityRaster::new(field.width, field.height, codes)
        .expect("field dimensions are consistent")
        .resize_nearest(out_size.0, out_size.1)
}

pub fn rgb_to_input(rgb: &RgbImage, width: usize, height: usize) -> FeatureMap {
    let rgb = rgb.resize_nearest(width, height);
    let mut map = FeatureMap::zeros(3, height, width);
    let n = width * height;
    for (i, px) in rgb.data().chunks_exact(3).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            map.data[c * n + i] = f64::from(v) / 255.0;
        }
    }
    map
}

pub fn raster_to_input(raster: &DisparityRaster, width: usize, height: usize) -> FeatureMap {
    let r = raster.resize_nearest(width, height);
    FeatureMap {
        channels: 1,
        height,
        width,
        data: r.codes().iter().map(|&c| f64::from(c) / CODE_NORM).collect(),
    }
}
