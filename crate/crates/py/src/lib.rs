//! Python bindings: codec, rasters, metrics, fill-in, synthetic scenes,
//! predictor training and refinement.

use std::path::PathBuf;

use depthfill_core as core;
use depthfill_core::predictor::Optimizer;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(err: core::Error) -> PyErr {
    match err {
        core::Error::Io(_) | core::Error::Image { .. } | core::Error::ImageFormat { .. } => {
            PyIOError::new_err(err.to_string())
        }
        core::Error::Diverged { .. } | core::Error::Iteration { .. } => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for core::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

// --- codec -----------------------------------------------------------------

/// Decodes a stored 16-bit code into disparity in pixels; `None` for code 0.
#[pyfunction]
fn decode_disparity(code: u16) -> Option<f64> {
    core::raster::decode_disparity(code)
}

/// Encodes disparity in pixels; `None` or NaN gives the invalid code 0.
#[pyfunction]
#[pyo3(signature = (disparity))]
fn encode_disparity(disparity: Option<f64>) -> u16 {
    core::raster::encode_disparity(disparity)
}

#[pyclass(name = "CameraRig", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyCameraRig(core::CameraRig);

#[pymethods]
impl PyCameraRig {
    #[new]
    #[pyo3(signature = (focal_px, baseline_m = core::raster::DEFAULT_BASELINE_M))]
    fn new(focal_px: f64, baseline_m: f64) -> PyResult<Self> {
        core::CameraRig::new(baseline_m, focal_px).map(Self).py_err()
    }

    #[getter]
    fn baseline_m(&self) -> f64 {
        self.0.baseline_m
    }

    #[getter]
    fn focal_px(&self) -> f64 {
        self.0.focal_px
    }

    /// Metric depth for a disparity in pixels; `None` when undefined.
    fn depth(&self, disparity: Option<f64>) -> Option<f64> {
        core::raster::disparity_to_depth(disparity, &self.0)
    }

    fn disparity(&self, depth_m: Option<f64>) -> Option<f64> {
        core::raster::depth_to_disparity(depth_m, &self.0)
    }

    fn __repr__(&self) -> String {
        format!(
            "CameraRig(focal_px={}, baseline_m={})",
            self.0.focal_px, self.0.baseline_m
        )
    }
}

// --- rasters ---------------------------------------------------------------

#[pyclass(name = "DisparityRaster", frozen, skip_from_py_object, eq)]
#[derive(Clone, PartialEq)]
struct PyRaster(core::DisparityRaster);

#[pymethods]
impl PyRaster {
    #[new]
    fn new(width: usize, height: usize, codes: Vec<u16>) -> PyResult<Self> {
        core::DisparityRaster::new(width, height, codes).map(Self).py_err()
    }

    #[staticmethod]
    fn filled(width: usize, height: usize, code: u16) -> Self {
        Self(core::DisparityRaster::filled(width, height, code))
    }

    #[staticmethod]
    fn read_png(path: PathBuf) -> PyResult<Self> {
        core::io::read_disparity_png(path).map(Self).py_err()
    }

    fn write_png(&self, path: PathBuf) -> PyResult<()> {
        core::io::write_disparity_png(&self.0, path).py_err()
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    /// Row-major copy of the codes.
    #[getter]
    fn codes(&self) -> Vec<u16> {
        self.0.codes().to_vec()
    }

    fn get(&self, x: usize, y: usize) -> PyResult<u16> {
        if x >= self.0.width() || y >= self.0.height() {
            return Err(PyValueError::new_err(format!("pixel ({x}, {y}) out of bounds")));
        }
        Ok(self.0.get(x, y))
    }

    fn invalid_count(&self) -> usize {
        self.0.invalid_count()
    }

    /// Metric depth per pixel, `None` where invalid.
    fn depth(&self, rig: &PyCameraRig) -> Vec<Option<f64>> {
        core::raster::raster_to_depth_map(&self.0, &rig.0).iter().collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "DisparityRaster({}x{}, {} invalid)",
            self.0.width(),
            self.0.height(),
            self.0.invalid_count()
        )
    }
}

#[pyclass(name = "RgbImage", frozen, skip_from_py_object, eq)]
#[derive(Clone, PartialEq)]
struct PyRgb(core::RgbImage);

#[pymethods]
impl PyRgb {
    /// `data` is interleaved 8-bit RGB, row-major.
    #[new]
    fn new(width: usize, height: usize, data: Vec<u8>) -> PyResult<Self> {
        core::RgbImage::new(width, height, data).map(Self).py_err()
    }

    #[staticmethod]
    fn read_png(path: PathBuf) -> PyResult<Self> {
        core::io::read_rgb_png(path).map(Self).py_err()
    }

    fn write_png(&self, path: PathBuf) -> PyResult<()> {
        core::io::write_rgb_png(&self.0, path).py_err()
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn data(&self) -> Vec<u8> {
        self.0.data().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("RgbImage({}x{})", self.0.width(), self.0.height())
    }
}

fn rasters(list: &[PyRef<'_, PyRaster>]) -> Vec<core::DisparityRaster> {
    list.iter().map(|r| r.0.clone()).collect()
}

// --- metrics and fill ------------------------------------------------------

/// Accuracy percentage `100 - 100 * sum|P - P_hat| / sum P`. With
/// `masked=True` only pixels with a valid target count.
#[pyfunction]
#[pyo3(signature = (pred, target, masked = false))]
fn accuracy(pred: &PyRaster, target: &PyRaster, masked: bool) -> PyResult<f64> {
    let scope = if masked {
        core::AccuracyScope::ValidTarget
    } else {
        core::AccuracyScope::AllPixels
    };
    core::metrics::accuracy_with(&pred.0, &target.0, scope)
        .map(|s| s.accuracy_pct)
        .py_err()
}

/// Mean number of invalid pixels per raster.
#[pyfunction]
fn average_invalid(rasters: Vec<PyRef<'_, PyRaster>>) -> PyResult<f64> {
    core::metrics::average_invalid(rasters.iter().map(|r| &r.0))
        .map(|s| s.average_invalid)
        .py_err()
}

#[pyfunction]
fn invalid_fraction_pct(average_invalid: f64, pixels_per_image: usize) -> f64 {
    core::metrics::invalid_fraction_pct(average_invalid, pixels_per_image)
}

/// Percentage of pixels invalid in `before` that are valid in `after`.
#[pyfunction]
fn corrected_pct(before: Vec<PyRef<'_, PyRaster>>, after: Vec<PyRef<'_, PyRaster>>) -> PyResult<f64> {
    core::metrics::corrected_pixels(&rasters(&before), &rasters(&after))
        .map(|s| s.corrected_pct)
        .py_err()
}

/// Returns `(filled, replaced_count, remaining_invalid)`.
#[pyfunction]
fn fill_missing(target: &PyRaster, predicted: &PyRaster) -> PyResult<(PyRaster, usize, usize)> {
    let out = core::fill_missing(&target.0, &predicted.0).py_err()?;
    Ok((PyRaster(out.filled), out.replaced_count, out.remaining_invalid))
}

#[pyfunction]
fn baseline_predict(target: &PyRaster) -> PyResult<PyRaster> {
    core::baseline_predict(&target.0).map(PyRaster).py_err()
}

// --- synthetic data --------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn scene_config(
    seed: u64,
    width: usize,
    height: usize,
    object_count: usize,
    hole_fraction: f64,
    depth_range_m: (f64, f64),
    rig: Option<&PyCameraRig>,
) -> PyResult<core::SceneConfig> {
    let rig = match rig {
        Some(r) => r.0,
        None => core::CameraRig::new(core::raster::DEFAULT_BASELINE_M, 2000.0).py_err()?,
    };
    let cfg = core::SceneConfig {
        seed,
        width,
        height,
        object_count,
        hole_fraction,
        depth_range_m,
        rig,
    };
    cfg.validate().py_err()?;
    Ok(cfg)
}

type Sample = (PyRgb, PyRaster, PyRaster);

fn sample(s: core::SyntheticSample) -> Sample {
    (PyRgb(s.rgb), PyRaster(s.truth), PyRaster(s.holed))
}

/// Returns `(rgb, truth, holed)`.
#[pyfunction]
#[pyo3(signature = (seed, width = 64, height = 48, object_count = 4, hole_fraction = 0.575,
                    depth_range_m = (2.0, 40.0), rig = None))]
fn generate_scene(
    seed: u64,
    width: usize,
    height: usize,
    object_count: usize,
    hole_fraction: f64,
    depth_range_m: (f64, f64),
    rig: Option<&PyCameraRig>,
) -> PyResult<Sample> {
    let cfg = scene_config(seed, width, height, object_count, hole_fraction, depth_range_m, rig)?;
    core::generate_scene(&cfg).map(sample).py_err()
}

/// `n` scenes with seeds `seed, seed + 1, ...`, each as `(rgb, truth, holed)`.
#[pyfunction]
#[pyo3(signature = (seed, n, width = 64, height = 48, object_count = 4, hole_fraction = 0.575,
                    depth_range_m = (2.0, 40.0), rig = None))]
#[allow(clippy::too_many_arguments)]
fn generate_dataset(
    seed: u64,
    n: usize,
    width: usize,
    height: usize,
    object_count: usize,
    hole_fraction: f64,
    depth_range_m: (f64, f64),
    rig: Option<&PyCameraRig>,
) -> PyResult<Vec<Sample>> {
    let cfg = scene_config(seed, width, height, object_count, hole_fraction, depth_range_m, rig)?;
    let samples = core::generate_dataset(&cfg, n).py_err()?;
    Ok(samples.into_iter().map(sample).collect())
}

// --- predictor -------------------------------------------------------------

#[pyclass(name = "NetworkSpec", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyNetworkSpec(core::NetworkSpec);

#[pymethods]
impl PyNetworkSpec {
    #[new]
    #[pyo3(signature = (width, height, levels = 1, base_channels = 8, seed = 0, input_channels = 3))]
    fn new(
        width: usize,
        height: usize,
        levels: usize,
        base_channels: usize,
        seed: u64,
        input_channels: usize,
    ) -> PyResult<Self> {
        let spec = core::NetworkSpec {
            input_size: (width, height),
            input_channels,
            levels,
            base_channels,
            seed,
        };
        spec.validate().py_err()?;
        Ok(Self(spec))
    }

    fn parameter_count(&self) -> usize {
        self.0.parameter_count()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

#[pyclass(name = "TrainConfig", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyTrainConfig(core::TrainConfig);

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (epochs = 20, learning_rate = 0.003, batch_size = 4, seed = 0, optimizer = "adam",
                        momentum = 0.0, mask_invalid_targets = false))]
    fn new(
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        seed: u64,
        optimizer: &str,
        momentum: f64,
        mask_invalid_targets: bool,
    ) -> PyResult<Self> {
        let optimizer = match optimizer {
            "adam" => Optimizer::Adam,
            "sgd" => Optimizer::Sgd,
            other => return Err(PyValueError::new_err(format!("unknown optimizer {other:?}"))),
        };
        let cfg = core::TrainConfig {
            epochs,
            learning_rate,
            batch_size,
            mask_invalid_targets,
            momentum,
            optimizer,
            seed,
        };
        cfg.validate().py_err()?;
        Ok(Self(cfg))
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

#[pyclass(name = "Predictor", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPredictor(core::PredictorModel);

#[pymethods]
impl PyPredictor {
    /// Freshly initialized network for `spec`.
    #[new]
    fn new(spec: &PyNetworkSpec) -> PyResult<Self> {
        core::init_model(&spec.0).map(Self).py_err()
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        core::PredictorModel::load(path).map(Self).py_err()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(path).py_err()
    }

    #[getter]
    fn spec(&self) -> PyNetworkSpec {
        PyNetworkSpec(*self.0.spec())
    }

    #[getter]
    fn parameters(&self) -> Vec<f64> {
        self.0.parameters().to_vec()
    }

    /// Trains a copy on `(rgb, target)` pairs; returns `(model, loss_trace)`.
    fn train(
        &self,
        py: Python<'_>,
        dataset: Vec<(PyRef<'_, PyRgb>, PyRef<'_, PyRaster>)>,
        config: &PyTrainConfig,
    ) -> PyResult<(PyPredictor, Vec<f64>)> {
        let data: Vec<_> = dataset.iter().map(|(i, t)| (i.0.clone(), t.0.clone())).collect();
        let cfg = config.0;
        let model = &self.0;
        let out = py.detach(|| core::predictor::train(model, &data, &cfg)).py_err()?;
        Ok((PyPredictor(out.model), out.loss_trace))
    }

    /// Prediction for an RGB image, at the image's size unless given.
    #[pyo3(signature = (rgb, size = None))]
    fn predict(&self, rgb: &PyRgb, size: Option<(usize, usize)>) -> PyResult<PyRaster> {
        self.0
            .predict(&rgb.0, size.unwrap_or(rgb.0.dims()))
            .map(PyRaster)
            .py_err()
    }

    fn __repr__(&self) -> String {
        format!("Predictor({:?})", self.0.spec())
    }
}

// --- refinement ------------------------------------------------------------

fn report_dict<'py>(py: Python<'py>, r: &core::IterationReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("iteration", r.iteration)?;
    d.set_item("accuracy_pct", r.accuracy_pct)?;
    d.set_item("corrected_pct", r.corrected_pct)?;
    d.set_item("remaining_invalid_avg", r.remaining_invalid_avg)?;
    d.set_item("train_loss", r.train_loss)?;
    Ok(d)
}

/// Runs iterative refinement. Returns `(refined_rasters, reports, final_model)`
/// where each report is a dict.
#[pyfunction]
#[pyo3(signature = (dataset, iterations, spec, config, eval_split_fraction = 0.2))]
fn iterative_refine<'py>(
    py: Python<'py>,
    dataset: Vec<(PyRef<'py, PyRgb>, PyRef<'py, PyRaster>)>,
    iterations: usize,
    spec: &PyNetworkSpec,
    config: &PyTrainConfig,
    eval_split_fraction: f64,
) -> PyResult<(Vec<PyRaster>, Vec<Bound<'py, PyDict>>, PyPredictor)> {
    let data: Vec<_> = dataset.iter().map(|(i, t)| (i.0.clone(), t.0.clone())).collect();
    let cfg = core::RefineConfig {
        iterations,
        predictor_spec: spec.0,
        train_cfg: config.0,
        eval_split_fraction,
    };
    let out = py.detach(|| core::iterative_refine(&data, &cfg)).py_err()?;
    let reports = out
        .reports
        .iter()
        .map(|r| report_dict(py, r))
        .collect::<PyResult<_>>()?;
    Ok((
        out.refined.into_iter().map(PyRaster).collect(),
        reports,
        PyPredictor(out.final_model),
    ))
}

/// Trains a raster-to-raster corrector on `(holed, refined)` pairs; returns
/// `(model, loss_trace)`. The spec's input channel count is forced to 1.
#[pyfunction]
fn train_corrector(
    py: Python<'_>,
    pairs: Vec<(PyRef<'_, PyRaster>, PyRef<'_, PyRaster>)>,
    spec: &PyNetworkSpec,
    config: &PyTrainConfig,
) -> PyResult<(PyPredictor, Vec<f64>)> {
    let pairs: Vec<_> = pairs.iter().map(|(a, b)| (a.0.clone(), b.0.clone())).collect();
    let (spec, cfg) = (spec.0, config.0);
    let out = py.detach(|| core::train_corrector(&pairs, &spec, &cfg)).py_err()?;
    Ok((PyPredictor(out.model), out.loss_trace))
}

/// Fills the invalid pixels of `holed` with the corrector's output.
#[pyfunction]
fn correct(model: &PyPredictor, holed: &PyRaster) -> PyResult<PyRaster> {
    core::correct(&model.0, &holed.0).map(PyRaster).py_err()
}

#[pymodule]
fn depthfill(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCameraRig>()?;
    m.add_class::<PyRaster>()?;
    m.add_class::<PyRgb>()?;
    m.add_class::<PyNetworkSpec>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyPredictor>()?;
    m.add_function(wrap_pyfunction!(decode_disparity, m)?)?;
    m.add_function(wrap_pyfunction!(encode_disparity, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(average_invalid, m)?)?;
    m.add_function(wrap_pyfunction!(invalid_fraction_pct, m)?)?;
    m.add_function(wrap_pyfunction!(corrected_pct, m)?)?;
    m.add_function(wrap_pyfunction!(fill_missing, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_predict, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(iterative_refine, m)?)?;
    m.add_function(wrap_pyfunction!(train_corrector, m)?)?;
    m.add_function(wrap_pyfunction!(correct, m)?)?;
    m.add("CODE_SCALE", core::raster::CODE_SCALE)?;
    m.add("DEFAULT_BASELINE_M", core::raster::DEFAULT_BASELINE_M)?;
    Ok(())
}
