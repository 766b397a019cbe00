//! Application configuration file.
//!
//! A TOML document with optional `[network]`, `[augment]`, `[synth]`,
//! `[adam]` and `[train]` tables; omitted keys take their defaults.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{AugmentConfig, SynthConfig};
use crate::error::ConfigError;
use crate::net::NetworkConfig;
use crate::nn::AdamConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    /// A checkpoint is written every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    pub augment: bool,
    /// Number of generated scenes when training on synthetic data.
    pub synthetic_scenes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            iterations: 2000,
            checkpoint_every: 500,
            augment: true,
            synthetic_scenes: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub network: NetworkConfig,
    pub augment: AugmentConfig,
    pub synth: SynthConfig,
    pub adam: AdamConfig,
    pub train: TrainConfig,
}

impl AppConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let cfg: AppConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.network
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.augment.validate()?;
        self.synth.validate()?;
        self.adam
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("adam: {e}")))?;
        if self.train.batch_size == 0 {
            return Err(ConfigError::Invalid("train: batch_size must be at least 1".into()));
        }
        Ok(())
    }
}
