//! Depth-map completion for stereo disparity datasets.
//!
//! - [`raster`]: 16-bit disparity codes, RGB images, metric depth.
//! - [`metrics`]: pixel-error accuracy, invalid/corrected pixel statistics.
//! - [`inpaint`]: fill invalid pixels from a prediction; diffusion baseline.
//! - [`predictor`]: small encoder-decoder regressor with explicit backprop.
//! - [`refine`]: iterative self-training and the second-stage corrector.
//! - [`synth`]: seeded synthetic scenes with exact ground truth.
//! - [`io`]: PNG persistence.

pub mod error;
pub mod inpaint;
pub mod io;
pub mod metrics;
pub mod predictor;
pub mod raster;
pub mod refine;
pub mod synth;

pub use error::{Error, Result};
pub use inpaint::{baseline_predict, fill_missing, FillOutcome};
pub use metrics::{AccuracyScope, CorrectionStats, InvalidStats, PixelErrorSummary};
pub use predictor::{init_model, NetworkSpec, PredictorModel, TrainConfig};
pub use raster::{CameraRig, DepthMap, DisparityRaster, RgbImage};
pub use refine::{correct, iterative_refine, train_corrector, IterationReport, RefineConfig};
pub use synth::{generate_dataset, generate_scene, SceneConfig, SyntheticSample};
