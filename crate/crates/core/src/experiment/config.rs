//! Experiment configuration file.
//!
//! TOML with a mandatory `format` key naming the schema version. Every key
//! except `format` is optional and falls back to the defaults below.
//!
//! ```toml
//! format = "dpcandle-config-1"
//! seed = 2024
//! seeds_per_cell = 3
//!
//! [dataset]
//! per_class_train = 300
//! per_class_test = 100
//! normalization = "joint"      # or "per_series"
//! # csv = "bars.csv"           # label windows of real bars instead
//! # test_fraction = 0.25       # used with `csv`
//!
//! [generator]
//! window_len = 10
//!
//! [model]
//! learning_rate = 0.006
//! momentum = 0.9
//! batch_size = 100
//! epochs = 100
//!
//! [dpsgd]
//! clip_bounds = [1.0, 1.5]
//! noise_multipliers = [0.1, 0.3, 0.5, 0.7, 1.0]
//! group_size = 50
//! learning_rate = 0.1
//! epochs = 120
//! delta = 1e-5
//! eval_every = 1
//!
//! [pate]
//! teacher_counts = [10, 20, 50]
//! laplace_scales = [1.0, 10.0, 30.0, 50.0, 100.0]
//! public_fraction = 0.2
//! # query_budget = 480
//! delta = 1e-5
//! teacher_eval_every = 5
//! teacher_eval_samples = 200
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gaf::Normalization;
use crate::market::GeneratorConfig;
use crate::nn::TrainConfig;

pub const CONFIG_FORMAT: &str = "dpcandle-config-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format: String,
    pub seed: u64,
    pub seeds_per_cell: usize,
    pub dataset: DatasetSection,
    pub generator: GeneratorConfig,
    pub model: TrainConfig,
    pub dpsgd: DpSgdSection,
    pub pate: PateSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub normalization: Normalization,
    pub csv: Option<PathBuf>,
    pub test_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpSgdSection {
    pub clip_bounds: Vec<f64>,
    pub noise_multipliers: Vec<f64>,
    pub group_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub delta: f64,
    pub eval_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PateSection {
    pub teacher_counts: Vec<usize>,
    /// Laplace scales b = 1/γ.
    pub laplace_scales: Vec<f64>,
    pub public_fraction: f64,
    pub query_budget: Option<usize>,
    pub delta: f64,
    pub teacher_eval_every: usize,
    pub teacher_eval_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            format: CONFIG_FORMAT.into(),
            seed: 2024,
            seeds_per_cell: 3,
            dataset: DatasetSection::default(),
            generator: GeneratorConfig::default(),
            model: TrainConfig::default(),
            dpsgd: DpSgdSection::default(),
            pate: PateSection::default(),
        }
    }
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            per_class_train: 300,
            per_class_test: 100,
            normalization: Normalization::Joint,
            csv: None,
            test_fraction: 0.25,
        }
    }
}

impl Default for DpSgdSection {
    fn default() -> Self {
        DpSgdSection {
            clip_bounds: vec![1.0, 1.5],
            noise_multipliers: vec![0.1, 0.3, 0.5, 0.7, 1.0],
            group_size: 50,
            learning_rate: 0.1,
            epochs: 120,
            delta: 1e-5,
            eval_every: 1,
        }
    }
}

impl Default for PateSection {
    fn default() -> Self {
        PateSection {
            teacher_counts: vec![10, 20, 50],
            laplace_scales: vec![1.0, 10.0, 30.0, 50.0, 100.0],
            public_fraction: 0.2,
            query_budget: None,
            delta: 1e-5,
            teacher_eval_every: 5,
            teacher_eval_samples: 200,
        }
    }
}

fn invalid<T>(msg: String) -> Result<T> {
    Err(Error::ConfigInvalid(msg))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::ConfigInvalid(e.to_string()))?;
        if !table.contains_key("format") {
            return invalid(format!("config must declare format = {CONFIG_FORMAT:?}"));
        }
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        if cfg.format != CONFIG_FORMAT {
            return invalid(format!(
                "unsupported config format {:?}, expected {CONFIG_FORMAT:?}",
                cfg.format
            ));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 prefix of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Training-set size of the synthetic dataset.
    pub fn train_size(&self) -> usize {
        self.dataset.per_class_train * crate::market::NUM_CLASSES
    }

    /// Rejects every out-of-domain value.
    pub fn validate(&self) -> Result<()> {
        if self.seeds_per_cell == 0 {
            return invalid("seeds_per_cell must be at least 1".into());
        }
        self.generator.validate()?;
        self.model.validate()?;
        let d = &self.dataset;
        if d.csv.is_none() && (d.per_class_train == 0 || d.per_class_test == 0) {
            return invalid("per_class_train and per_class_test must be positive".into());
        }
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return invalid(format!("test_fraction must lie in (0, 1), got {}", d.test_fraction));
        }

        let s = &self.dpsgd;
        if s.clip_bounds.is_empty() || s.noise_multipliers.is_empty() {
            return invalid("dpsgd sweep lists must be non-empty".into());
        }
        for &c in &s.clip_bounds {
            for &sigma in &s.noise_multipliers {
                let bad_c = !(c > 0.0) || (c.is_infinite() && sigma > 0.0);
                let bad_s = !(sigma >= 0.0 && sigma.is_finite());
                if bad_c || bad_s {
                    return invalid(format!(
                        "dpsgd cell (C={c}, sigma={sigma}) is out of domain: need C > 0, sigma >= 0, and finite C when sigma > 0"
                    ));
                }
            }
        }
        if s.group_size == 0 || (d.csv.is_none() && s.group_size > self.train_size()) {
            return invalid(format!(
                "dpsgd group_size {} must lie in [1, {}]",
                s.group_size,
                self.train_size()
            ));
        }
        if !(s.learning_rate > 0.0 && s.learning_rate.is_finite()) {
            return invalid(format!("dpsgd learning_rate must be positive, got {}", s.learning_rate));
        }
        if !(s.delta > 0.0 && s.delta < 1.0) {
            return invalid(format!("dpsgd delta must lie in (0, 1), got {}", s.delta));
        }

        let p = &self.pate;
        if p.teacher_counts.is_empty() || p.laplace_scales.is_empty() {
            return invalid("pate sweep lists must be non-empty".into());
        }
        if let Some(&b) = p.laplace_scales.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return invalid(format!("pate laplace scale must be positive and finite, got {b}"));
        }
        if !(p.public_fraction > 0.0 && p.public_fraction < 1.0) {
            return invalid(format!(
                "pate public_fraction must lie in (0, 1), got {}",
                p.public_fraction
            ));
        }
        if p.query_budget == Some(0) {
            return invalid("pate query_budget must be at least 1".into());
        }
        if !(p.delta > 0.0 && p.delta < 1.0) {
            return invalid(format!("pate delta must lie in (0, 1), got {}", p.delta));
        }
        if d.csv.is_none() {
            let per_class_private = d.per_class_train
                - (p.public_fraction * d.per_class_train as f64).round() as usize;
            let private = per_class_private * crate::market::NUM_CLASSES;
            if let Some(&n) = p.teacher_counts.iter().find(|&&n| n < 2 || n > private) {
                return invalid(format!(
                    "pate teacher count {n} must lie in [2, {private}] (private set size)"
                ));
            }
            let public = self.train_size() - private;
            if let Some(q) = p.query_budget.filter(|&q| q > public) {
                return invalid(format!(
                    "pate query_budget {q} exceeds the public pool of {public}"
                ));
            }
        }
        Ok(())
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
        assert_eq!(cfg.hash().len(), 16);
    }

    #[test]
    fn missing_keys_take_defaults() {
        let cfg = ExperimentConfig::from_toml("format = \"dpcandle-config-1\"\nseed = 5\n").unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.dpsgd.noise_multipliers.len(), 5);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml("seed = 5\n").is_err());
        let text = "format = \"dpcandle-config-1\"\n[dpsgd]\nclip_bounds = [1.0, -1.0]\n";
        let err = ExperimentConfig::from_toml(text).unwrap_err().to_string();
        assert!(err.contains("C=-1"), "{err}");
        let text = "format = \"dpcandle-config-1\"\n[pate]\nteacher_counts = [1]\n";
        assert!(ExperimentConfig::from_toml(text).is_err());
        let text = "format = \"dpcandle-config-1\"\nbogus = 1\n";
        assert!(ExperimentConfig::from_toml(text).is_err());
    }
}
