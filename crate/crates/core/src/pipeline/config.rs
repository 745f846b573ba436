use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregator::SimulationConfig;
use crate::backend::GenerativeBackend;
use crate::error::{Error, Result};
use crate::fitting::BoostingConfig;
use crate::io::content_hash;
use crate::miner::MiningConfig;

/// Input and artifact locations. Relative paths resolve against the
/// config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub trajectories: PathBuf,
    /// Per-merchant visitor logs; defaults to the test-set visitors.
    #[serde(default)]
    pub visitors: Option<PathBuf>,
    /// Synthetic-world truth, enabling oracle scores.
    #[serde(default)]
    pub latent_truth: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub registry: Option<PathBuf>,
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default = "default_fraction")]
    pub mining_fraction: f64,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    /// Merchants with fewer test trajectories on their evaluation scene are skipped.
    pub min_test_trajectories: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            min_test_trajectories: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub mining: MiningConfig,
    #[serde(default)]
    pub fitting: BoostingConfig,
    #[serde(default)]
    pub aggregation: SimulationConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub backend: GenerativeBackend,
    /// When set, overrides every section seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn new(data: DataConfig) -> Self {
        ExperimentConfig {
            data,
            mining: MiningConfig::default(),
            fitting: BoostingConfig::default(),
            aggregation: SimulationConfig::default(),
            evaluation: EvaluationConfig::default(),
            backend: GenerativeBackend::default(),
            seed: None,
        }
    }

    /// Pushes the top-level seed into every section.
    pub fn resolved(mut self) -> Self {
        if let Some(seed) = self.seed {
            self.mining.seed = seed;
            self.fitting.seed = seed;
            self.aggregation.seed = seed;
            self.backend.seed = seed;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.data.mining_fraction > 0.0 && self.data.mining_fraction < 1.0) {
            return Err(Error::InvariantViolation("mining_fraction must be in (0, 1)".into()));
        }
        self.mining.validate()?;
        self.fitting.validate()?;
        self.aggregation.validate()
    }

    /// Hash of everything but file locations, so moved inputs keep their hash.
    pub fn hash(&self) -> String {
        content_hash(&(
            self.data.mining_fraction,
            &self.mining,
            &self.fitting,
            &self.aggregation,
            &self.evaluation,
            &self.backend,
        ))
    }

    pub fn resolve(&self, base: &Path, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            base.join(path)
        }
    }
}
