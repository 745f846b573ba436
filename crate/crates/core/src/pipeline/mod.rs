//! End-to-end orchestration: chronological split, mining, training,
//! simulation, evaluation and the ablation grid. Stages exchange data only
//! through files in the output directory.

mod ablation;
mod config;
mod stages;

pub use ablation::{AblationRow, AblationTable, Branch};
pub use config::{DataConfig, EvaluationConfig, ExperimentConfig};
pub use stages::{
    evaluation_scenes, BranchScores, EvaluationReport, Experiment, MerchantEstimate, MerchantRow, ModelArtifact,
    TargetScores,
};

use std::path::Path;

use crate::domain::Trajectory;
use crate::error::{Error, Result};

/// Size of the mining set: `⌈fraction·n⌉`, ignoring float noise below 1e-9.
pub fn mining_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Sorts by timestamp (stable, so ties keep input order) and puts the first
/// `⌈fraction·n⌉` trajectories in the mining set.
pub fn chrono_split(trajectories: &[Trajectory], fraction: f64) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Precondition(format!("split fraction {fraction} outside (0, 1)")));
    }
    if trajectories.is_empty() {
        return Err(Error::EmptyInput("trajectories"));
    }
    let mut sorted = trajectories.to_vec();
    sorted.sort_by_key(|t| t.timestamp);
    let test = sorted.split_off(mining_count(trajectories.len(), fraction));
    Ok((sorted, test))
}

/// Loads a config file and runs every stage.
pub fn run_experiment(config_path: &Path) -> Result<EvaluationReport> {
    Experiment::load(config_path)?.run()
}

/// Loads a config file and runs the ablation grid.
pub fn ablate(config_path: &Path) -> Result<AblationTable> {
    Experiment::load(config_path)?.ablate()
}
