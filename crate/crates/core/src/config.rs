//! Experiment configuration: one TOML file merged over the embedded defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crossseg::{CrossSegConfig, EnsemblePer, SplitVariant, StreamMode};
use crate::data::{AlignPolicy, SplitSet, SynthConfig};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::eval::SearchSpace;
use crate::features::FeatureSpec;
use crate::ppo::{PolicyConfig, PpoHyper};
use crate::predictor::PredictorConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// The committed defaults file.
pub const DEFAULTS_TOML: &str = include_str!("../defaults.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSourceKind {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSourceKind,
    pub csv_dir: PathBuf,
    pub align: AlignPolicy,
    pub synthetic: SynthConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationConfig {
    pub variant: SplitVariant,
    pub ensemble_per: EnsemblePer,
    pub streams: StreamMode,
}

impl SegmentationConfig {
    pub fn cross(&self) -> CrossSegConfig {
        CrossSegConfig {
            ensemble_per: self.ensemble_per,
            streams: self.streams,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub thresholds: Vec<f64>,
    pub tc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub window_days: usize,
    pub data: DataConfig,
    pub splits: SplitSet,
    pub features: FeatureSpec,
    pub predictor: PredictorConfig,
    pub segmentation: SegmentationConfig,
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub ppo: PpoHyper,
    pub search: SearchSpace,
    pub baseline: BaselineConfig,
}

/// Recursively overlays `overlay` onto `base`. Tables merge; everything else replaces.
fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn parse_toml(text: &str, what: &str) -> Result<toml::Value> {
    text.parse::<toml::Table>()
        .map(toml::Value::Table)
        .map_err(|e| Error::config(format!("{what}: {e}")))
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_toml_str("").expect("embedded defaults are valid")
    }
}

impl ExperimentConfig {
    /// Parses a user config and merges it over the defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut value = parse_toml(DEFAULTS_TOML, "defaults")?;
        merge(&mut value, parse_toml(text, "config")?);
        let cfg: Self = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.window_days == 0 {
            return Err(Error::config("window_days must be positive"));
        }
        if self.data.source == DataSourceKind::Synthetic {
            self.data.synthetic.validate()?;
        }
        for s in self.splits.as_vec() {
            if s.start > s.end {
                return Err(Error::config(format!(
                    "split '{}' starts after it ends",
                    s.name
                )));
            }
        }
        if self.splits.train.end >= self.splits.validation.start {
            log::warn!("training and validation ranges overlap");
        }
        self.predictor.validate()?;
        self.env.validate()?;
        self.ppo.validate()?;
        self.search.validate()?;
        if self
            .baseline
            .thresholds
            .iter()
            .any(|t| !(0.0..=1.0).contains(t))
        {
            return Err(Error::config("baseline thresholds must lie in [0, 1]"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, excluding `output_dir`.
    ///
    /// Keys are sorted and numbers are printed in shortest round-trip form, so
    /// formatting or key order in the source file never changes the hash.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        let canonical = serde_json::to_string(&value).expect("json serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
