use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use upda_core::dataset::{DomainConfig, DomainTag};
use upda_core::eval::Scenario;
use upda_core::train::{Method, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// A problem with the experiment configuration or the command line
/// (exit status 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Everything needed to reproduce an experiment, in one JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub source: DomainConfig,
    pub target: DomainConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub scenario: Scenario,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub folds: usize,
    /// Seed of the synthetic datasets.
    #[serde(default)]
    pub data_seed: u64,
    /// Default output directory for runs and reports.
    #[serde(default)]
    pub output_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| ConfigError(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Full validation, run before any work starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| ConfigError(m);
        if self.schema_version != SCHEMA_VERSION {
            return Err(err(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.source.domain_tag != DomainTag::Source || self.target.domain_tag != DomainTag::Target {
            return Err(err(
                "`source` and `target` must carry the source and target domain tags".into(),
            ));
        }
        self.source.validate().map_err(|e| err(format!("source: {e}")))?;
        self.target.validate().map_err(|e| err(format!("target: {e}")))?;
        self.train.validate().map_err(|e| err(format!("train: {e}")))?;
        if self.methods.is_empty() {
            return Err(err("method list is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(err("seed list is empty".into()));
        }
        if self.folds < 2 || self.folds > self.target.groups {
            return Err(err(format!(
                "folds must be between 2 and the {} target groups, got {}",
                self.target.groups, self.folds
            )));
        }
        let src: Vec<u32> = (0..self.source.groups as u32)
            .map(|g| self.source.content_offset + g)
            .collect();
        let tgt_lo = self.target.content_offset;
        let tgt_hi = tgt_lo + self.target.groups as u32;
        if src.iter().any(|c| (tgt_lo..tgt_hi).contains(c)) {
            return Err(err(
                "source and target content ids overlap; set distinct content_offset values".into(),
            ));
        }
        match self.scenario {
            Scenario::CrossDistortion => {
                if self
                    .source
                    .distortions
                    .iter()
                    .any(|d| self.target.distortions.contains(d))
                {
                    return Err(err(
                        "cross_distortion needs disjoint source and target distortion kinds".into(),
                    ));
                }
            }
            Scenario::CrossDataset => {
                if self
                    .source
                    .shape_families
                    .iter()
                    .any(|f| self.target.shape_families.contains(f))
                {
                    return Err(err(
                        "cross_dataset needs disjoint source and target shape families".into()
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn example() -> &'static str {
        include_str!("../../../configs/cross_distortion.json")
    }

    #[test]
    fn bundled_config_is_valid() {
        let cfg: ExperimentConfig = serde_json::from_str(example()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.methods.len(), 3);
    }

    #[test]
    fn overlap_rejected() {
        let mut cfg: ExperimentConfig = serde_json::from_str(example()).unwrap();
        cfg.target.distortions = cfg.source.distortions.clone();
        assert!(cfg.validate().is_err());
        let mut cfg: ExperimentConfig = serde_json::from_str(example()).unwrap();
        cfg.target.content_offset = 0;
        assert!(cfg.validate().is_err());
        let mut cfg: ExperimentConfig = serde_json::from_str(example()).unwrap();
        cfg.schema_version = 9;
        assert!(cfg.validate().is_err());
    }
}
