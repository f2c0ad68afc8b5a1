//! Batch front end for depthfill: synthetic data, dataset statistics,
//! iterative refinement, fill-in, correction and evaluation over JSON-lines
//! manifests.

pub mod commands;
pub mod config;
pub mod manifest;

pub use config::PipelineConfig;
pub use manifest::{Manifest, ManifestEntry, Split};
