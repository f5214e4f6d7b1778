//! TOML run configuration. Every section is optional; missing keys take
//! their defaults so a config file only needs to list what it overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VamError};
use crate::simulation::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub n_prior_bands: usize,
    pub n_early_bands: usize,
    /// Explicit, strictly increasing cut points for prior achievement.
    pub prior_cuts: Option<Vec<f64>>,
    pub early_cuts: Option<Vec<f64>>,
    pub n_composition_ventiles: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            n_prior_bands: 34,
            n_early_bands: 20,
            prior_cuts: None,
            early_cuts: None,
            n_composition_ventiles: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub threads: usize,
    /// Compute empirical-Bayes shrunk effects alongside the raw ones.
    pub shrinkage: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            threads: 1,
            shrinkage: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VamConfig {
    pub ingest: IngestConfig,
    pub simulation: SimConfig,
    pub run: RunSettings,
}

impl VamConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| VamError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| VamError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Canonical TOML of the effective configuration, used for hashing.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| VamError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = VamConfig::from_toml_str("").unwrap();
        assert_eq!(cfg.ingest.n_prior_bands, 34);
        assert_eq!(cfg.ingest.n_early_bands, 20);
        assert_eq!(cfg.ingest.n_composition_ventiles, 20);
        assert!(cfg.ingest.prior_cuts.is_none());
    }

    #[test]
    fn partial_override() {
        let cfg = VamConfig::from_toml_str(
            "[ingest]\nn_prior_bands = 10\nearly_cuts = [1.0, 2.0]\n[run]\nthreads = 4\n",
        )
        .unwrap();
        assert_eq!(cfg.ingest.n_prior_bands, 10);
        assert_eq!(cfg.ingest.early_cuts, Some(vec![1.0, 2.0]));
        assert_eq!(cfg.ingest.n_early_bands, 20);
        assert_eq!(cfg.run.threads, 4);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = VamConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(VamConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = VamConfig::from_toml_str("[ingest]\nn_bands = 3\n").unwrap_err();
        assert!(matches!(err, VamError::Config(_)));
    }
}
