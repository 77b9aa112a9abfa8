//! TOML configuration files with `[model]` and `[train]` sections.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use ictasnet::model::preset;
use ictasnet::train::TrainConfig;
use ictasnet::ModelConfig;
use serde::{Deserialize, Serialize};

/// Missing keys take the defaults of [`ModelConfig`] and [`TrainConfig`];
/// unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Defaults for `train`, the named preset for `model`.
    pub fn from_preset(name: &str) -> Result<Self> {
        let p = preset(name).with_context(|| format!("unknown preset {name:?}"))?;
        Ok(Self {
            model: p.config,
            train: TrainConfig::default(),
        })
    }

    /// `--config` wins over `--preset`; neither gives the defaults.
    pub fn resolve(config: Option<&Path>, preset: Option<&str>) -> Result<Self> {
        match (config, preset) {
            (Some(path), _) => Self::load(path),
            (None, Some(name)) => Self::from_preset(name),
            (None, None) => Ok(Self::default()),
        }
    }
}
