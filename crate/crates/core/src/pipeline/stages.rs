use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::chrono_split;
use crate::aggregator::{PolicySignal, ProfileSource, SimulationConfig, Simulator, VisitorPool};
use crate::backend::Backend;
use crate::domain::{
    select_high_intent, Category, GroupEstimate, Intervention, PolicyMixture, PolicyRegistry, Scene, Tier, Trajectory,
    UserProfile,
};
use crate::encoder::{HashedNgramEncoder, TextEncoder};
use crate::error::{Error, Result, Stage, StageExt};
use crate::fitting::{featurize, train, BoostedModel, Dataset, FeatureLayout};
use crate::io;
use crate::metrics::{breakdown, gse, gse_sd, write_breakdown_csv, BreakdownRow, MerchantRatePair};
use crate::miner::{mine, MiningReport, MiningVariant, PolicyAssigner};
use crate::rng;
use crate::synthworld::{LatentTruth, VisitorLog};

/// Trained fitting branch plus the layout it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub config_hash: String,
    pub seed: u64,
    pub policy_signal: PolicySignal,
    pub layout: FeatureLayout,
    pub model: BoostedModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MerchantEstimate {
    pub merchant_id: String,
    pub tier: Tier,
    pub category: Category,
    pub scene: Scene,
    /// Test trajectories observed on `scene`.
    pub test_trajectories: usize,
    pub empirical_rate: f64,
    /// User ids of the visitor log the mixture was estimated from.
    pub visitor_ids: Vec<String>,
    pub mixture: PolicyMixture,
    pub estimate: GroupEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchScores {
    pub gse: f64,
    /// Absent with fewer than two merchants.
    pub gse_sd: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScores {
    pub fused: BranchScores,
    pub reason: BranchScores,
    pub fit: BranchScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MerchantRow {
    pub merchant_id: String,
    pub tier: Tier,
    pub category: Category,
    pub test_trajectories: usize,
    pub hybrid_rate: f64,
    pub reason_mean: f64,
    pub fit_mean: f64,
    pub empirical_rate: f64,
    pub oracle_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config_hash: String,
    pub seed: u64,
    pub lambda: f64,
    pub samples: usize,
    pub merchant_count: usize,
    pub vs_oracle: Option<TargetScores>,
    pub vs_empirical: TargetScores,
    /// Fused-rate GSE by tier and category, against the oracle when known.
    pub breakdown: Vec<BreakdownRow>,
    pub merchants: Vec<MerchantRow>,
}

/// Per merchant, its latest test scene with the count and purchase rate of
/// test trajectories on exactly that scene. Ordered by merchant id.
pub fn evaluation_scenes(test_set: &[Trajectory]) -> Vec<(Scene, usize, f64)> {
    let mut latest: BTreeMap<&str, &Trajectory> = BTreeMap::new();
    for t in test_set {
        let e = latest.entry(t.scene.merchant_id.as_str()).or_insert(t);
        if t.timestamp >= e.timestamp {
            *e = t;
        }
    }
    latest
        .into_values()
        .map(|last| {
            let on_scene: Vec<&Trajectory> = test_set.iter().filter(|t| t.scene == last.scene).collect();
            let bought = on_scene.iter().filter(|t| t.outcome == 1).count();
            (last.scene.clone(), on_scene.len(), bought as f64 / on_scene.len() as f64)
        })
        .collect()
}

pub struct Experiment {
    pub cfg: ExperimentConfig,
    base: PathBuf,
    backend: Arc<dyn Backend>,
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = io::read_json(path).stage(Stage::Config)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Experiment::new(cfg, base)
    }

    /// `base` anchors relative paths in the config.
    pub fn new(cfg: ExperimentConfig, base: impl Into<PathBuf>) -> Result<Self> {
        let cfg = cfg.resolved();
        cfg.validate().stage(Stage::Config)?;
        let backend = cfg.backend.build().stage(Stage::Config)?;
        Ok(Experiment {
            cfg,
            base: base.into(),
            backend,
        })
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend.as_ref()
    }

    pub fn output_dir(&self) -> PathBuf {
        self.cfg.resolve(&self.base, &self.cfg.data.output_dir)
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.output_dir().join(name)
    }

    pub fn registry_path(&self) -> PathBuf {
        match &self.cfg.data.registry {
            Some(p) => self.cfg.resolve(&self.base, p),
            None => self.artifact("registry.json"),
        }
    }

    pub fn model_path(&self) -> PathBuf {
        match &self.cfg.data.model {
            Some(p) => self.cfg.resolve(&self.base, p),
            None => self.artifact("model.json"),
        }
    }

    fn seed(&self) -> u64 {
        self.cfg.aggregation.seed
    }

    pub fn split(&self) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
        let path = self.cfg.resolve(&self.base, &self.cfg.data.trajectories);
        let all: Vec<Trajectory> = io::read_jsonl(&path).stage(Stage::Load)?;
        chrono_split(&all, self.cfg.data.mining_fraction).stage(Stage::Split)
    }

    pub fn latent_truth(&self) -> Result<Option<LatentTruth>> {
        self.cfg
            .data
            .latent_truth
            .as_ref()
            .map(|p| io::read_json(&self.cfg.resolve(&self.base, p)))
            .transpose()
            .stage(Stage::Load)
    }

    /// Mines the registry; writes `registry.json` and `mining_report.json`.
    pub fn mine(&self) -> Result<(PolicyRegistry, MiningReport)> {
        let (mining_set, _) = self.split()?;
        let (registry, report) = self.mine_variant(&mining_set, self.cfg.mining.variant)?;
        io::write_json(&self.registry_path(), &registry).stage(Stage::Mine)?;
        io::write_json(&self.artifact("mining_report.json"), &report).stage(Stage::Mine)?;
        Ok((registry, report))
    }

    pub fn mine_variant(&self, mining_set: &[Trajectory], variant: MiningVariant) -> Result<(PolicyRegistry, MiningReport)> {
        let high_intent = select_high_intent(mining_set, self.cfg.mining.min_compared, self.cfg.mining.require_terminal).stage(Stage::Mine)?;
        let cfg = crate::miner::MiningConfig {
            variant,
            ..self.cfg.mining.clone()
        };
        let (mut registry, report) = mine(&high_intent, &cfg, self.backend()).stage(Stage::Mine)?;
        registry.config_hash = self.cfg.hash();
        Ok((registry, report))
    }

    /// Trains the fitting branch; reads the registry, writes `model.json`.
    pub fn train(&self) -> Result<ModelArtifact> {
        let registry: PolicyRegistry = io::read_json(&self.registry_path()).stage(Stage::Train)?;
        registry.validate().stage(Stage::Train)?;
        let (mining_set, _) = self.split()?;
        let artifact = self.fit(&registry, &mining_set, PolicySignal::Mined)?;
        io::write_json(&self.model_path(), &artifact).stage(Stage::Train)?;
        Ok(artifact)
    }

    /// Training rows use each user's own profile and the policy assigned to it.
    pub fn fit(&self, registry: &PolicyRegistry, mining_set: &[Trajectory], signal: PolicySignal) -> Result<ModelArtifact> {
        let d = registry.encoder.dimension();
        let layout = FeatureLayout::from_scenes(mining_set.iter().map(|t| &t.scene), d);
        let assigner = PolicyAssigner::new(registry).stage(Stage::Train)?;
        let encoder = HashedNgramEncoder::new(registry.encoder.clone());
        let zero = vec![0.0; d];
        let rows: Vec<Vec<f64>> = mining_set
            .par_iter()
            .map(|t| {
                let e = encoder.encode(t.user.serialized_text());
                let v = match signal {
                    PolicySignal::Mined => &registry.policies[assigner.assign(&e)?].vector,
                    PolicySignal::Withheld => &zero,
                };
                Ok(featurize(&layout, &t.scene, &e, v)?.values)
            })
            .collect::<Result<_>>()
            .stage(Stage::Train)?;
        let labels = mining_set.iter().map(|t| t.outcome).collect();
        let data = Dataset::from_rows(layout.fingerprint.clone(), rows, labels).stage(Stage::Train)?;
        let model = train(&data, &self.cfg.fitting).stage(Stage::Train)?;
        Ok(ModelArtifact {
            config_hash: self.cfg.hash(),
            seed: self.cfg.fitting.seed,
            policy_signal: signal,
            layout,
            model,
        })
    }

    /// Simulates every merchant's evaluation scene; writes `estimates.json`.
    pub fn simulate(&self) -> Result<Vec<MerchantEstimate>> {
        let registry: PolicyRegistry = io::read_json(&self.registry_path()).stage(Stage::Simulate)?;
        registry.validate().stage(Stage::Simulate)?;
        let artifact: ModelArtifact = io::read_json(&self.model_path()).stage(Stage::Simulate)?;
        let (_, test_set) = self.split()?;
        let estimates = self.simulate_with(&registry, &artifact, &test_set, &self.cfg.aggregation)?;
        io::write_json(&self.artifact("estimates.json"), &estimates).stage(Stage::Simulate)?;
        Ok(estimates)
    }

    /// Without the policy signal the mixture is uniform and profiles come
    /// from all visitors.
    pub fn simulate_with(
        &self,
        registry: &PolicyRegistry,
        artifact: &ModelArtifact,
        test_set: &[Trajectory],
        sim: &SimulationConfig,
    ) -> Result<Vec<MerchantEstimate>> {
        let visitors = self.visitors(test_set)?;
        let simulator = Simulator {
            registry,
            model: &artifact.model,
            layout: &artifact.layout,
            backend: self.backend(),
        };
        let mut sim = sim.clone();
        sim.policy_signal = artifact.policy_signal;
        if artifact.policy_signal == PolicySignal::Withheld {
            sim.profile_source = ProfileSource::AllVisitors;
        }
        evaluation_scenes(test_set)
            .into_iter()
            .filter(|(_, n, _)| *n >= self.cfg.evaluation.min_test_trajectories)
            .enumerate()
            .map(|(i, (scene, count, empirical))| {
                let id = scene.merchant_id.clone();
                let profiles = visitors.get(&id).map(Vec::as_slice).unwrap_or(&[]);
                let pool = VisitorPool::build(registry, profiles, &id)?;
                let mixture = match artifact.policy_signal {
                    PolicySignal::Mined => pool.mixture(&id, registry.len()),
                    PolicySignal::Withheld => PolicyMixture::uniform(&id, registry.len()),
                };
                let cfg = SimulationConfig {
                    seed: rng::derive(sim.seed, i as u64),
                    ..sim.clone()
                };
                let estimate = simulator.simulate(&mixture, &pool, &scene, &Intervention::identity(), &cfg)?;
                Ok(MerchantEstimate {
                    merchant_id: id,
                    tier: scene.tier,
                    category: scene.category,
                    scene,
                    test_trajectories: count,
                    empirical_rate: empirical,
                    visitor_ids: profiles.iter().map(|u| u.user_id().to_owned()).collect(),
                    mixture,
                    estimate,
                })
            })
            .collect::<Result<Vec<_>>>()
            .stage(Stage::Simulate)
    }

    /// Visitor profiles per merchant: the configured visitor log, else the
    /// users of each merchant's test trajectories.
    pub fn visitors(&self, test_set: &[Trajectory]) -> Result<BTreeMap<String, Vec<UserProfile>>> {
        let mut out: BTreeMap<String, Vec<UserProfile>> = BTreeMap::new();
        match &self.cfg.data.visitors {
            Some(p) => {
                let logs: Vec<VisitorLog> = io::read_jsonl(&self.cfg.resolve(&self.base, p)).stage(Stage::Load)?;
                for log in logs {
                    out.entry(log.merchant_id).or_default().extend(log.visitors);
                }
            }
            None => {
                for t in test_set {
                    out.entry(t.scene.merchant_id.clone()).or_default().push(t.user.clone());
                }
            }
        }
        Ok(out)
    }

    /// Scores `estimates.json`; writes `report.json` and `breakdown.csv`.
    pub fn evaluate(&self) -> Result<EvaluationReport> {
        let estimates: Vec<MerchantEstimate> = io::read_json(&self.artifact("estimates.json")).stage(Stage::Evaluate)?;
        let truth = self.latent_truth()?;
        let report = self.score(&estimates, truth.as_ref()).stage(Stage::Evaluate)?;
        io::write_json(&self.artifact("report.json"), &report).stage(Stage::Evaluate)?;
        write_breakdown_csv(&self.artifact("breakdown.csv"), &report.breakdown).stage(Stage::Evaluate)?;
        Ok(report)
    }

    pub fn score(&self, estimates: &[MerchantEstimate], truth: Option<&LatentTruth>) -> Result<EvaluationReport> {
        if estimates.is_empty() {
            return Err(Error::EmptyInput("merchant estimates"));
        }
        let oracle: Option<Vec<f64>> = truth
            .map(|t| estimates.iter().map(|e| t.visitor_rate(&e.scene, &e.visitor_ids)).collect())
            .transpose()?;
        let empirical: Vec<f64> = estimates.iter().map(|e| e.empirical_rate).collect();
        let vs_empirical = target_scores(estimates, &empirical)?;
        let vs_oracle = oracle.as_ref().map(|o| target_scores(estimates, o)).transpose()?;
        let reference = oracle.as_ref().unwrap_or(&empirical);
        let fused = pairs(estimates, reference, |e| e.hybrid_rate);
        let merchants = estimates
            .iter()
            .enumerate()
            .map(|(i, e)| MerchantRow {
                merchant_id: e.merchant_id.clone(),
                tier: e.tier,
                category: e.category,
                test_trajectories: e.test_trajectories,
                hybrid_rate: e.estimate.hybrid_rate,
                reason_mean: e.estimate.reason_mean,
                fit_mean: e.estimate.fit_mean,
                empirical_rate: e.empirical_rate,
                oracle_rate: oracle.as_ref().map(|o| o[i]),
            })
            .collect();
        Ok(EvaluationReport {
            config_hash: self.cfg.hash(),
            seed: self.seed(),
            lambda: self.cfg.aggregation.lambda,
            samples: self.cfg.aggregation.samples,
            merchant_count: estimates.len(),
            vs_oracle,
            vs_empirical,
            breakdown: breakdown(&fused),
            merchants,
        })
    }

    /// Mine, train, simulate and evaluate, each stage reading the previous
    /// stage's files.
    pub fn run(&self) -> Result<EvaluationReport> {
        self.mine()?;
        self.train()?;
        self.simulate()?;
        self.evaluate()
    }
}

pub(super) fn pairs(estimates: &[MerchantEstimate], truth: &[f64], pick: impl Fn(&GroupEstimate) -> f64) -> Vec<MerchantRatePair> {
    estimates
        .iter()
        .zip(truth)
        .map(|(e, &t)| MerchantRatePair {
            merchant_id: e.merchant_id.clone(),
            predicted_rate: pick(&e.estimate),
            true_rate: t,
            tier: e.tier,
            category: e.category,
        })
        .collect()
}

pub(super) fn scores(p: &[MerchantRatePair]) -> Result<BranchScores> {
    Ok(BranchScores {
        gse: gse(p)?,
        gse_sd: if p.len() >= 2 { Some(gse_sd(p)?) } else { None },
    })
}

fn target_scores(estimates: &[MerchantEstimate], truth: &[f64]) -> Result<TargetScores> {
    Ok(TargetScores {
        fused: scores(&pairs(estimates, truth, |e| e.hybrid_rate))?,
        reason: scores(&pairs(estimates, truth, |e| e.reason_mean))?,
        fit: scores(&pairs(estimates, truth, |e| e.fit_mean))?,
    })
}
