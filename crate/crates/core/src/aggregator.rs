//! Per-scene policy mixtures and Monte Carlo fusion of the two branches.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::domain::{apply_intervention, GroupEstimate, Intervention, MixtureWeight, PolicyBreakdown, PolicyMixture, PolicyRegistry, Scene, UserProfile};
use crate::encoder::{Embedding, HashedNgramEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::fitting::{featurize, BoostedModel, FeatureLayout};
use crate::miner::PolicyAssigner;
use crate::reasoning::{generic_instruction, reason};
use crate::{backend, rng};

/// Assigns every visitor to its nearest policy and normalizes the counts.
pub fn estimate_mixture(registry: &PolicyRegistry, visitors: &[UserProfile], scene_id: &str) -> Result<PolicyMixture> {
    let pool = VisitorPool::build(registry, visitors, scene_id)?;
    Ok(pool.mixture(scene_id, registry.len()))
}

/// Where each draw takes its profile embedding from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ProfileSource {
    /// A visitor assigned to the drawn policy; any visitor if none is.
    #[default]
    ByPolicy,
    AllVisitors,
}

/// Whether the branches see the mined policy or a policy-free stand-in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PolicySignal {
    #[default]
    Mined,
    /// Generic instruction for reasoning and a zero policy vector for fitting.
    Withheld,
}

/// Embedded visitor log of one scene, grouped by assigned policy.
#[derive(Debug, Clone)]
pub struct VisitorPool {
    embeddings: Vec<Embedding>,
    by_policy: Vec<Vec<usize>>,
}

impl VisitorPool {
    pub fn build(registry: &PolicyRegistry, visitors: &[UserProfile], scene_id: &str) -> Result<Self> {
        if visitors.is_empty() {
            return Err(Error::EmptyVisitorLog(scene_id.to_owned()));
        }
        let assigner = PolicyAssigner::new(registry)?;
        let encoder = HashedNgramEncoder::new(registry.encoder.clone());
        let embeddings: Vec<Embedding> = visitors.par_iter().map(|v| encoder.encode(v.serialized_text())).collect();
        let assigned: Vec<usize> = embeddings
            .par_iter()
            .map(|e| assigner.assign(e))
            .collect::<Result<_>>()?;
        let mut by_policy = vec![Vec::new(); registry.len()];
        for (i, &p) in assigned.iter().enumerate() {
            by_policy[p].push(i);
        }
        Ok(VisitorPool { embeddings, by_policy })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    /// Normalized assignment counts; policies with no visitors are omitted.
    pub fn mixture(&self, scene_id: &str, registry_len: usize) -> PolicyMixture {
        let total = self.embeddings.len() as f64;
        PolicyMixture {
            scene_id: scene_id.to_owned(),
            weights: self.by_policy[..registry_len]
                .iter()
                .enumerate()
                .filter(|(_, m)| !m.is_empty())
                .map(|(policy, m)| MixtureWeight {
                    policy,
                    probability: m.len() as f64 / total,
                })
                .collect(),
        }
    }

    fn sample(&self, policy: usize, source: ProfileSource, rng: &mut impl Rng) -> &Embedding {
        let group = match source {
            ProfileSource::ByPolicy => self.by_policy.get(policy).filter(|g| !g.is_empty()),
            ProfileSource::AllVisitors => None,
        };
        match group {
            Some(g) => &self.embeddings[g[rng.random_range(0..g.len())]],
            None => &self.embeddings[rng.random_range(0..self.embeddings.len())],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub samples: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Allocate draws to policies by largest remainder instead of sampling.
    pub stratified: bool,
    /// Extra policy draws allowed per sample after an unparseable decision.
    pub retry_budget: usize,
    pub profile_source: ProfileSource,
    pub policy_signal: PolicySignal,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            samples: 1000,
            lambda: 0.5,
            seed: 0,
            stratified: false,
            retry_budget: 8,
            profile_source: ProfileSource::ByPolicy,
            policy_signal: PolicySignal::Mined,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::InvariantViolation("sample count N must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvariantViolation(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        Ok(())
    }
}

/// Trained artifacts shared by every simulated scene.
#[derive(Clone, Copy)]
pub struct Simulator<'a> {
    pub registry: &'a PolicyRegistry,
    pub model: &'a BoostedModel,
    pub layout: &'a FeatureLayout,
    pub backend: &'a dyn Backend,
}

struct Draw {
    policy: usize,
    reason: u8,
    fit: f64,
}

impl Simulator<'_> {
    fn check(&self) -> Result<()> {
        if self.model.feature_fingerprint != self.layout.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.model.feature_fingerprint.clone(),
                actual: self.layout.fingerprint.clone(),
            });
        }
        if self.layout.embedding_dimension != self.registry.encoder.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.registry.encoder.dimension(),
                actual: self.layout.embedding_dimension,
            });
        }
        Ok(())
    }

    /// Monte Carlo estimate of the purchase rate on the intervened scene.
    pub fn simulate(
        &self,
        mixture: &PolicyMixture,
        pool: &VisitorPool,
        scene: &Scene,
        intervention: &Intervention,
        cfg: &SimulationConfig,
    ) -> Result<GroupEstimate> {
        cfg.validate()?;
        self.check()?;
        mixture.validate(self.registry.len())?;
        if pool.is_empty() {
            return Err(Error::EmptyVisitorLog(mixture.scene_id.clone()));
        }
        let scene = apply_intervention(scene, intervention)?;
        let cumulative = cumulative(mixture);
        let allocation = cfg.stratified.then(|| allocate(mixture, cfg.samples));
        let zero_policy = vec![0.0; self.layout.embedding_dimension];
        let generic = generic_instruction();

        let draws: Vec<Draw> = (0..cfg.samples)
            .into_par_iter()
            .map(|i| {
                let mut r = rng::stream(cfg.seed, i as u64);
                let mut policy = match &allocation {
                    Some(a) => a[i],
                    None => pick(&cumulative, r.random::<f64>()),
                };
                let mut attempt = 0;
                let reason = loop {
                    let decision_seed = rng::derive(cfg.seed, ((i as u64) << 8) | attempt as u64);
                    let outcome = match cfg.policy_signal {
                        PolicySignal::Mined => {
                            reason(self.backend, self.registry, policy, &scene, decision_seed).map(|s| s.decision)
                        }
                        PolicySignal::Withheld => backend::decide(self.backend, &scene, &generic, decision_seed),
                    };
                    match outcome {
                        Err(Error::UnparseableDecision(_)) if attempt < cfg.retry_budget => {
                            attempt += 1;
                            policy = pick(&cumulative, r.random::<f64>());
                        }
                        other => break other?,
                    }
                };
                let profile = pool.sample(policy, cfg.profile_source, &mut r);
                let vector = match cfg.policy_signal {
                    PolicySignal::Mined => &self.registry.policies[policy].vector,
                    PolicySignal::Withheld => &zero_policy,
                };
                let x = featurize(self.layout, &scene, profile, vector)?;
                Ok(Draw {
                    policy,
                    reason,
                    fit: self.model.predict_values(&x.values),
                })
            })
            .collect::<Result<_>>()?;

        let n = draws.len() as f64;
        let mut per_policy: Vec<(usize, f64, f64)> = vec![(0, 0.0, 0.0); self.registry.len()];
        let (mut reason_sum, mut fit_sum) = (0.0, 0.0);
        for d in &draws {
            reason_sum += f64::from(d.reason);
            fit_sum += d.fit;
            let e = &mut per_policy[d.policy];
            e.0 += 1;
            e.1 += f64::from(d.reason);
            e.2 += d.fit;
        }
        let reason_mean = reason_sum / n;
        let fit_mean = fit_sum / n;
        let estimate = GroupEstimate {
            scene_id: scene.merchant_id.clone(),
            intervention: intervention.label.clone(),
            hybrid_rate: cfg.lambda * reason_mean + (1.0 - cfg.lambda) * fit_mean,
            reason_mean,
            fit_mean,
            lambda: cfg.lambda,
            samples: cfg.samples,
            seed: cfg.seed,
            per_policy: per_policy
                .into_iter()
                .enumerate()
                .filter(|(_, e)| e.0 > 0)
                .map(|(policy, (draws, r, f))| PolicyBreakdown {
                    policy,
                    draws,
                    reason_mean: r / draws as f64,
                    fit_mean: f / draws as f64,
                })
                .collect(),
        };
        estimate.validate()?;
        Ok(estimate)
    }
}

fn cumulative(mixture: &PolicyMixture) -> Vec<(f64, usize)> {
    let mut acc = 0.0;
    mixture
        .weights
        .iter()
        .filter(|w| w.probability > 0.0)
        .map(|w| {
            acc += w.probability;
            (acc, w.policy)
        })
        .collect()
}

fn pick(cumulative: &[(f64, usize)], u: f64) -> usize {
    let total = cumulative.last().map_or(1.0, |c| c.0);
    let target = u * total;
    cumulative
        .iter()
        .find(|(c, _)| target < *c)
        .or(cumulative.last())
        .map(|c| c.1)
        .unwrap_or(0)
}

/// Largest-remainder allocation of `n` draws, expanded in mixture order.
fn allocate(mixture: &PolicyMixture, n: usize) -> Vec<usize> {
    let quotas: Vec<f64> = mixture.weights.iter().map(|w| w.probability * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut rest: Vec<usize> = (0..quotas.len()).collect();
    rest.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let assigned: usize = counts.iter().sum();
    for &i in rest.iter().take(n - assigned) {
        counts[i] += 1;
    }
    mixture
        .weights
        .iter()
        .zip(counts)
        .flat_map(|(w, c)| std::iter::repeat_n(w.policy, c))
        .collect()
}
