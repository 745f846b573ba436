use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stages::{pairs, scores, Experiment, MerchantEstimate};
use crate::aggregator::PolicySignal;
use crate::domain::GroupEstimate;
use crate::error::{Error, Result, Stage, StageExt};
use crate::io;
use crate::miner::MiningVariant;
use crate::synthworld::LatentTruth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Reason,
    Fit,
    Fusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub mining: MiningVariant,
    pub policy: PolicySignal,
    pub branch: Branch,
    pub gse_oracle: Option<f64>,
    pub gse_empirical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["name", "mining", "policy", "branch", "gse_oracle", "gse_empirical"])?;
        for r in &self.rows {
            w.write_record([
                r.name.clone(),
                format!("{:?}", r.mining),
                format!("{:?}", r.policy),
                format!("{:?}", r.branch),
                r.gse_oracle.map(|g| g.to_string()).unwrap_or_default(),
                r.gse_empirical.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(format!("write {}", path.display()), e))
    }
}

fn row(
    name: &str,
    mining: MiningVariant,
    policy: PolicySignal,
    branch: Branch,
    estimates: &[MerchantEstimate],
    truth: Option<&LatentTruth>,
) -> Result<AblationRow> {
    let pick = |e: &GroupEstimate| match branch {
        Branch::Reason => e.reason_mean,
        Branch::Fit => e.fit_mean,
        Branch::Fusion => e.hybrid_rate,
    };
    let empirical: Vec<f64> = estimates.iter().map(|e| e.empirical_rate).collect();
    let gse_oracle = match truth {
        Some(t) => {
            let oracle: Vec<f64> = estimates.iter().map(|e| t.visitor_rate(&e.scene, &e.visitor_ids)).collect::<Result<_>>()?;
            Some(scores(&pairs(estimates, &oracle, pick))?.gse)
        }
        None => None,
    };
    Ok(AblationRow {
        name: name.into(),
        mining,
        policy,
        branch,
        gse_oracle,
        gse_empirical: scores(&pairs(estimates, &empirical, pick))?.gse,
    })
}

impl Experiment {
    fn variant_estimates(&self, variant: MiningVariant, signal: PolicySignal) -> Result<Vec<MerchantEstimate>> {
        let (mining_set, test_set) = self.split()?;
        let (registry, _) = self.mine_variant(&mining_set, variant)?;
        let artifact = self.fit(&registry, &mining_set, signal)?;
        self.simulate_with(&registry, &artifact, &test_set, &self.cfg.aggregation)
    }

    /// Branch-by-policy grid on the configured mining variant, then one
    /// fused row per mining variant. Writes `ablation.json` and `ablation.csv`.
    pub fn ablate(&self) -> Result<AblationTable> {
        let truth = self.latent_truth()?;
        let truth = truth.as_ref();
        let base = self.cfg.mining.variant;
        let with = self.variant_estimates(base, PolicySignal::Mined)?;
        let without = self.variant_estimates(base, PolicySignal::Withheld)?;
        let mut rows = Vec::new();
        for (name, signal, branch, est) in [
            ("LLM w/ policy", PolicySignal::Mined, Branch::Reason, &with),
            ("LLM w/o policy", PolicySignal::Withheld, Branch::Reason, &without),
            ("ML w/ policy", PolicySignal::Mined, Branch::Fit, &with),
            ("ML w/o policy", PolicySignal::Withheld, Branch::Fit, &without),
            ("fusion w/o policy", PolicySignal::Withheld, Branch::Fusion, &without),
            ("fusion", PolicySignal::Mined, Branch::Fusion, &with),
        ] {
            rows.push(row(name, base, signal, branch, est, truth).stage(Stage::Evaluate)?);
        }
        for (name, variant) in [
            ("mining: no clustering", MiningVariant::NoClustering),
            ("mining: k-means only", MiningVariant::KMeansOnly),
            ("mining: full", MiningVariant::Full),
        ] {
            let est = if variant == base {
                with.clone()
            } else {
                self.variant_estimates(variant, PolicySignal::Mined)?
            };
            rows.push(row(name, variant, PolicySignal::Mined, Branch::Fusion, &est, truth).stage(Stage::Evaluate)?);
        }
        let table = AblationTable {
            config_hash: self.cfg.hash(),
            seed: self.cfg.aggregation.seed,
            rows,
        };
        io::write_json(&self.artifact("ablation.json"), &table).stage(Stage::Evaluate)?;
        table.write_csv(&self.artifact("ablation.csv")).stage(Stage::Evaluate)?;
        Ok(table)
    }
}
