//! The TOML run config shared by `train`, `evaluate`, `ablate` and
//! `inspect`. Relative paths are resolved against the config file's
//! directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vrl_core::agent::PolicyVariant;
use vrl_core::features::FeatureConfig;
use vrl_core::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Semantic graph file.
    pub graph: PathBuf,
    /// Training scene set (JSON lines).
    pub scenes: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_variant")]
    pub variant: String,
    /// Where train writes metrics.csv, model.ckpt and manifest.json.
    pub out_dir: PathBuf,
    /// Keep only the N highest-objectness instances per scene.
    #[serde(default)]
    pub instance_cap: Option<usize>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub features: FeatureConfigToml,
}

fn default_variant() -> String {
    "vrl".to_string()
}

/// [`FeatureConfig`] with per-field TOML defaults.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfigToml {
    pub d_image: usize,
    pub d_instance: usize,
    pub d_phrase: usize,
}

impl Default for FeatureConfigToml {
    fn default() -> Self {
        let f = FeatureConfig::default();
        FeatureConfigToml {
            d_image: f.d_image,
            d_instance: f.d_instance,
            d_phrase: f.d_phrase,
        }
    }
}

impl From<FeatureConfigToml> for FeatureConfig {
    fn from(f: FeatureConfigToml) -> FeatureConfig {
        FeatureConfig {
            d_image: f.d_image,
            d_instance: f.d_instance,
            d_phrase: f.d_phrase,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.train
            .validate()
            .map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.graph);
        resolve(&mut cfg.scenes);
        resolve(&mut cfg.out_dir);
        Ok(cfg)
    }

    pub fn variant(&self) -> Result<PolicyVariant, String> {
        self.variant.parse()
    }

    pub fn feature_config(&self) -> FeatureConfig {
        self.features.into()
    }
}
