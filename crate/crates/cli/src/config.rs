//! Experiment configuration: one TOML file with a block per subsystem.

use std::path::{Path, PathBuf};

use kbnet_core::kernel::{DEFAULT_EMBED_DIM, DEFAULT_PCA_CORPUS, DEFAULT_PCA_SEED, TRAIN_WIDTH_RANGE};
use kbnet_core::raw::IspConfig;
use kbnet_core::synth::SynthConfig;
use kbnet_model::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Kernel corpus used to fit the embedding basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcaConfig {
    pub t: usize,
    pub corpus_size: usize,
    pub seed: u64,
    pub width_range: (f64, f64),
}

impl Default for PcaConfig {
    fn default() -> Self {
        Self {
            t: DEFAULT_EMBED_DIM,
            corpus_size: DEFAULT_PCA_CORPUS,
            seed: DEFAULT_PCA_SEED,
            width_range: TRAIN_WIDTH_RANGE,
        }
    }
}

/// Default locations; command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub hr_dir: Option<PathBuf>,
    pub data: Option<PathBuf>,
    /// Separate validation dataset; otherwise `train.val_fraction` is held out.
    pub val_data: Option<PathBuf>,
    pub pca: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub isp: IspConfig,
    pub pca: PcaConfig,
    pub paths: PathsConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates `path`; `None` gives the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&text)
            }
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.isp.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.scale != self.synth.scale {
            return Err(CliError::Validation(format!(
                "model.scale ({}) differs from synth.scale ({})",
                self.model.scale, self.synth.scale
            )));
        }
        if self.model.embed_t != self.pca.t {
            return Err(CliError::Validation(format!(
                "model.embed_t ({}) differs from pca.t ({})",
                self.model.embed_t, self.pca.t
            )));
        }
        let (lo, hi) = self.pca.width_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(CliError::Validation(format!(
                "pca.width_range ({lo}, {hi}) is not a valid range"
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable in TOML")
    }

    /// Short stable hash of the resolved configuration.
    pub fn hash(&self) -> String {
        hex::encode(&Sha256::digest(self.to_toml().as_bytes())[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml("[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(matches!(err, CliError::Validation(_)), "{err}");
        assert!(ExperimentConfig::from_toml("[bogus]\n").is_err());
    }

    #[test]
    fn partial_blocks_fill_defaults() {
        let cfg = ExperimentConfig::from_toml("[train]\nlr = 0.001\nepochs = 3\n").unwrap();
        assert_eq!(cfg.train.lr, 0.001);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn mismatched_scale_is_a_validation_error() {
        let err = ExperimentConfig::from_toml("[model]\nscale = 2\n").unwrap_err();
        assert!(err.to_string().contains("scale"));
    }
}
