//! Pipeline configuration file (TOML).

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use depthfill_core::{CameraRig, NetworkSpec, RefineConfig, SceneConfig, TrainConfig};
use serde::{Deserialize, Serialize};

fn default_eval_split() -> f64 {
    0.2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineSection {
    pub iterations: usize,
    #[serde(default = "default_eval_split")]
    pub eval_split_fraction: f64,
}

/// Scene generator settings; the rig comes from the top-level `[rig]` table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub object_count: usize,
    pub hole_fraction: f64,
    pub depth_range_m: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub rig: CameraRig,
    pub network: NetworkSpec,
    pub training: TrainConfig,
    pub refine: RefineSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneSection>,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.rig.validate()?;
        self.refine_config().validate()?;
        if let Some(scene) = self.scene_config() {
            scene.validate()?;
        }
        Ok(())
    }

    pub fn refine_config(&self) -> RefineConfig {
        RefineConfig {
            iterations: self.refine.iterations,
            predictor_spec: self.network,
            train_cfg: self.training,
            eval_split_fraction: self.refine.eval_split_fraction,
        }
    }

    pub fn scene_config(&self) -> Option<SceneConfig> {
        self.scene.map(|s| SceneConfig {
            seed: s.seed,
            width: s.width,
            height: s.height,
            object_count: s.object_count,
            hole_fraction: s.hole_fraction,
            depth_range_m: s.depth_range_m,
            rig: self.rig,
        })
    }

    /// Applies command-line overrides. `seed` replaces every seed in the file.
    pub fn with_overrides(mut self, iterations: Option<usize>, seed: Option<u64>, out: Option<&Path>) -> Result<Self> {
        if let Some(k) = iterations {
            self.refine.iterations = k;
        }
        if let Some(seed) = seed {
            self.network.seed = seed;
            self.training.seed = seed;
            if let Some(scene) = &mut self.scene {
                scene.seed = seed;
            }
        }
        if let Some(out) = out {
            self.output_dir = out.to_path_buf();
        }
        self.validate()?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const SAMPLE: &str = r#"
output_dir = "runs/desk"

[rig]
baseline_m = 0.22
focal_px = 2000.0

[network]
input_size = [64, 48]
levels = 1
base_channels = 8
seed = 1

[training]
epochs = 20
learning_rate = 0.003
batch_size = 4
seed = 2

[refine]
iterations = 3

[scene]
seed = 100
width = 64
height = 48
object_count = 4
hole_fraction = 0.575
depth_range_m = [2.0, 40.0]
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = PipelineConfig::parse(SAMPLE).unwrap();
        assert_eq!(cfg.refine.eval_split_fraction, 0.2);
        assert_eq!(cfg.network.input_channels, 3);
        let again = PipelineConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = SAMPLE.replace("levels = 1", "levels = 1\ndepth = 3");
        assert!(PipelineConfig::parse(&bad).is_err());
        let bad = format!("{SAMPLE}\nextra = 1\n");
        assert!(PipelineConfig::parse(&bad).is_err());
    }

    #[test]
    fn rejects_invalid_values() {
        assert!(PipelineConfig::parse(&SAMPLE.replace("iterations = 3", "iterations = 0")).is_err());
        assert!(PipelineConfig::parse(&SAMPLE.replace("input_size = [64, 48]", "input_size = [63, 48]")).is_err());
        assert!(PipelineConfig::parse(&SAMPLE.replace("baseline_m = 0.22", "baseline_m = -1.0")).is_err());
    }

    #[test]
    fn seed_override_reaches_every_seed() {
        let cfg = PipelineConfig::parse(SAMPLE)
            .unwrap()
            .with_overrides(Some(5), Some(77), None)
            .unwrap();
        assert_eq!(cfg.refine.iterations, 5);
        assert_eq!(
            (cfg.network.seed, cfg.training.seed, cfg.scene.unwrap().seed),
            (77, 77, 77)
        );
    }
}
