//! Run configuration read from a TOML file. Every field has a default, so an
//! empty file is valid; unknown keys are rejected. Command-line flags
//! override file values.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use portrait_core::training::{LatentPolicy, TrainConfig};
use portrait_core::types::DriveMode;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    L1,
    Perceptual,
    Fid,
    Csim,
    AedApd,
}

impl MetricKind {
    pub fn all() -> Vec<MetricKind> {
        vec![MetricKind::L1, MetricKind::Perceptual, MetricKind::Fid, MetricKind::Csim, MetricKind::AedApd]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Manifest of the performing video.
    pub performing: Option<PathBuf>,
    /// Manifests of the auxiliary pool.
    pub auxiliary: Vec<PathBuf>,
    /// Manifest of the driven video.
    pub driven: Option<PathBuf>,
    /// Parameter estimator checkpoint used by stage two.
    pub estimator: Option<PathBuf>,
    /// Output directory for checkpoints and logs.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub paths: Paths,
    pub metrics: Vec<MetricKind>,
    pub latent_policy: LatentPolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::desk(DriveMode::VideoDriven),
            paths: Paths::default(),
            metrics: MetricKind::all(),
            latent_policy: LatentPolicy::Zero,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| crate::Failure::config(format!("{}: {e}", path.display())))?;
        cfg.train.validate().map_err(crate::Failure::from)?;
        Ok(cfg)
    }

    /// Write the resolved configuration as TOML.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).context("serializing config")?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}
