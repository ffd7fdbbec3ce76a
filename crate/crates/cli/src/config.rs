//! Run configuration file (TOML).
//!
//! ```toml
//! [model]
//! input_dim = 4
//! seq_len = 20
//! classes = 2
//! codewords = 8
//! attention = "2da-temporal"
//!
//! [train]
//! epochs = 40
//! learning_rate = 0.01
//!
//! [protocol]
//! kind = "holdout"
//! test_fraction = 0.2
//! ```

use std::path::Path;

use anyhow::{Context, Result};
use nbof_core::model::ModelConfig;
use nbof_core::train::TrainConfig;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub protocol: Protocol,
}

/// How `train` estimates generalization before writing the final model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Protocol {
    /// `train.folds`-fold cross-validation.
    #[default]
    Kfold,
    Holdout {
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    /// Fit on everything and report training-set metrics.
    Full,
}

fn default_test_fraction() -> f64 {
    0.2
}

impl RunConfig {
    pub fn load(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        if let Some(seed) = seed {
            cfg.model.seed = seed;
            cfg.train.seed = seed;
        }
        cfg.validate().with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        match self.protocol {
            Protocol::Kfold => self.train.validate_for_cv()?,
            Protocol::Holdout { test_fraction } => {
                self.train.validate()?;
                anyhow::ensure!(
                    test_fraction > 0.0 && test_fraction < 1.0,
                    "protocol.test_fraction must lie in (0, 1), got {test_fraction}"
                );
            }
            Protocol::Full => self.train.validate()?,
        }
        Ok(())
    }
}
