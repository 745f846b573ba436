//! Policy mining: persona clustering over profile embeddings, one
//! explanation per high-intent choice, density refinement of explanation
//! embeddings within each persona, and one summarized policy per refined
//! group.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{self, Backend, Rationale};
use crate::clustering::{hdbscan, kmeans, KMeansResult};
use crate::domain::{DecisionPolicy, PolicyRegistry, Trajectory, UserProfile};
use crate::encoder::{l2_norm, EncoderConfig, Embedding, HashedNgramEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::io::content_hash;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MiningVariant {
    /// K-Means personas refined by HDBSCAN.
    Full,
    /// One policy per K-Means persona.
    KMeansOnly,
    /// One policy per distinct user.
    NoClustering,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningConfig {
    pub k: usize,
    pub min_cluster_size: usize,
    /// Defaults to `min_cluster_size`.
    pub min_samples: Option<usize>,
    pub variant: MiningVariant,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub min_compared: u32,
    /// Mine only sessions that ended in a purchase or an exit.
    pub require_terminal: bool,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    /// Independently seeded k-means runs; the lowest inertia wins, the
    /// earliest run on ties.
    pub kmeans_restarts: usize,
    /// Cap on distinct users for [`MiningVariant::NoClustering`].
    pub max_user_policies: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            k: 8,
            min_cluster_size: 5,
            min_samples: None,
            variant: MiningVariant::Full,
            seed: 0,
            encoder: EncoderConfig::default(),
            min_compared: 2,
            require_terminal: true,
            kmeans_max_iter: 300,
            kmeans_tol: 1e-6,
            kmeans_restarts: 4,
            max_user_policies: 5000,
        }
    }
}

impl MiningConfig {
    pub fn min_samples(&self) -> usize {
        self.min_samples.unwrap_or(self.min_cluster_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvariantViolation("k must be at least 1".into()));
        }
        if self.min_cluster_size < 2 {
            return Err(Error::InvariantViolation("min_cluster_size must be at least 2".into()));
        }
        if self.min_samples() == 0 {
            return Err(Error::InvariantViolation("min_samples must be at least 1".into()));
        }
        if self.min_compared < 2 {
            return Err(Error::InvariantViolation("min_compared must be at least 2".into()));
        }
        if self.kmeans_restarts == 0 {
            return Err(Error::InvariantViolation("kmeans_restarts must be at least 1".into()));
        }
        if self.max_user_policies == 0 {
            return Err(Error::InvariantViolation("max_user_policies must be positive".into()));
        }
        Ok(())
    }
}

fn best_kmeans(points: &[Vec<f64>], cfg: &MiningConfig) -> Result<KMeansResult> {
    let mut best: Option<KMeansResult> = None;
    for r in 0..cfg.kmeans_restarts as u64 {
        let seed = if r == 0 { cfg.seed } else { rng::derive(cfg.seed, 0x6b6d_0000 | r) };
        let run = kmeans(points, cfg.k, seed, cfg.kmeans_max_iter, cfg.kmeans_tol)?;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningReport {
    pub variant: MiningVariant,
    /// Instances per persona; for `NoClustering` every user is a persona and
    /// users beyond the cap are pooled into one trailing entry.
    pub persona_sizes: Vec<usize>,
    pub policies_per_persona: Vec<usize>,
    pub noise_counts: Vec<usize>,
    pub discarded_fraction: f64,
    pub warnings: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
}

impl MiningReport {
    /// Checks instance conservation against the per-policy supports.
    pub fn check(&self, registry: &PolicyRegistry) -> Result<()> {
        for (k, &size) in self.persona_sizes.iter().enumerate() {
            let supported: usize = registry
                .policies
                .iter()
                .filter(|p| p.persona_id == k)
                .map(|p| p.support)
                .sum();
            if supported + self.noise_counts[k] != size {
                return Err(Error::InvariantViolation(format!(
                    "persona {k}: {supported} supported + {} noise != {size}",
                    self.noise_counts[k]
                )));
            }
        }
        Ok(())
    }
}

struct Group {
    persona: usize,
    instances: Vec<usize>,
}

/// Mines a policy registry from high-intent trajectories.
pub fn mine(
    trajectories: &[Trajectory],
    cfg: &MiningConfig,
    backend: &dyn Backend,
) -> Result<(PolicyRegistry, MiningReport)> {
    cfg.validate()?;
    if trajectories.is_empty() {
        return Err(Error::EmptyInput("trajectories"));
    }
    if let Some(t) = trajectories.iter().find(|t| !t.is_high_intent(cfg.min_compared, cfg.require_terminal)) {
        return Err(Error::Precondition(format!(
            "trajectory of user `{}` at {} is not high-intent",
            t.user.user_id(),
            t.timestamp
        )));
    }
    let encoder = HashedNgramEncoder::new(cfg.encoder.clone());

    let (users, user_of) = distinct_users(trajectories);

    let rationales: Vec<Rationale> = trajectories
        .par_iter()
        .enumerate()
        .map(|(i, t)| backend::explain(backend, &t.user, &t.scene, t.outcome, i))
        .collect::<Result<_>>()?;

    let mut warnings = Vec::new();
    let mut persona_sizes = Vec::new();
    let mut noise_counts = Vec::new();
    let mut groups: Vec<Group> = Vec::new();

    match cfg.variant {
        MiningVariant::Full | MiningVariant::KMeansOnly => {
            let profile_points: Vec<Vec<f64>> = users
                .par_iter()
                .map(|u| encoder.encode(u.serialized_text()).into_values())
                .collect();
            let personas = best_kmeans(&profile_points, cfg)?;
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); cfg.k];
            for (i, &u) in user_of.iter().enumerate() {
                members[personas.assignments[u]].push(i);
            }
            let refined: Vec<Result<(Vec<Vec<usize>>, usize)>> = members
                .par_iter()
                .map(|instances| refine(instances, &rationales, cfg, &encoder))
                .collect();
            for (k, (instances, refined)) in members.iter().zip(refined).enumerate() {
                let (subgroups, noise) = refined?;
                persona_sizes.push(instances.len());
                noise_counts.push(noise);
                if subgroups.is_empty() {
                    warnings.push(format!(
                        "persona {k} ({} instances) produced no policy",
                        instances.len()
                    ));
                }
                groups.extend(subgroups.into_iter().map(|g| Group {
                    persona: k,
                    instances: g,
                }));
            }
        }
        MiningVariant::NoClustering => {
            let mut kept: Vec<usize> = (0..users.len()).collect();
            let mut overflow = Vec::new();
            if users.len() > cfg.max_user_policies {
                kept.shuffle(&mut rng::stream(cfg.seed, 0x6e6f_636c));
                overflow = kept.split_off(cfg.max_user_policies);
                kept.sort_unstable();
                warnings.push(format!(
                    "{} users exceed the per-user policy cap of {}; their instances are discarded",
                    overflow.len(),
                    cfg.max_user_policies
                ));
            }
            let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); users.len()];
            for (i, &u) in user_of.iter().enumerate() {
                by_user[u].push(i);
            }
            for (persona, &u) in kept.iter().enumerate() {
                persona_sizes.push(by_user[u].len());
                noise_counts.push(0);
                groups.push(Group {
                    persona,
                    instances: by_user[u].clone(),
                });
            }
            if !overflow.is_empty() {
                let dropped: usize = overflow.iter().map(|&u| by_user[u].len()).sum();
                persona_sizes.push(dropped);
                noise_counts.push(dropped);
            }
        }
    }

    let texts: Vec<_> = groups
        .par_iter()
        .map(|g| {
            let rs: Vec<Rationale> = g.instances.iter().map(|&i| rationales[i].clone()).collect();
            backend::summarize(backend, &rs)
        })
        .collect::<Result<_>>()?;

    let mut policies = Vec::with_capacity(groups.len());
    let mut policies_per_persona = vec![0usize; persona_sizes.len()];
    for (g, instruction) in groups.iter().zip(texts) {
        let vector = encoder.encode(&instruction.render()).into_values();
        debug_assert!((l2_norm(&vector) - 1.0).abs() < 1e-9);
        policies.push(DecisionPolicy {
            persona_id: g.persona,
            subgroup_id: policies_per_persona[g.persona],
            instruction,
            vector,
            support: g.instances.len(),
        });
        policies_per_persona[g.persona] += 1;
    }
    if policies.is_empty() {
        return Err(Error::EmptyRegistry);
    }

    let discarded: usize = noise_counts.iter().sum();
    let config_hash = content_hash(cfg);
    let registry = PolicyRegistry {
        policies,
        encoder: cfg.encoder.clone(),
        encoder_fingerprint: cfg.encoder.fingerprint().to_owned(),
        mined_at: trajectories.iter().map(|t| t.timestamp).max().unwrap_or(0),
        min_support: match cfg.variant {
            MiningVariant::Full => cfg.min_cluster_size,
            _ => 1,
        },
        config_hash: config_hash.clone(),
        seed: cfg.seed,
    };
    registry.validate()?;
    let report = MiningReport {
        variant: cfg.variant,
        persona_sizes,
        policies_per_persona,
        noise_counts,
        discarded_fraction: discarded as f64 / trajectories.len() as f64,
        warnings,
        config_hash,
        seed: cfg.seed,
    };
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok((registry, report))
}

/// Splits one persona's instances into refined sub-groups plus a noise count.
fn refine(
    instances: &[usize],
    rationales: &[Rationale],
    cfg: &MiningConfig,
    encoder: &HashedNgramEncoder,
) -> Result<(Vec<Vec<usize>>, usize)> {
    if instances.is_empty() {
        return Ok((Vec::new(), 0));
    }
    if cfg.variant == MiningVariant::KMeansOnly {
        return Ok((vec![instances.to_vec()], 0));
    }
    let points: Vec<Vec<f64>> = instances
        .iter()
        .map(|&i| encoder.encode(&rationales[i].text).into_values())
        .collect();
    let result = hdbscan(&points, cfg.min_cluster_size, cfg.min_samples())?;
    let groups = result
        .members()
        .into_iter()
        .map(|m| m.into_iter().map(|local| instances[local]).collect())
        .collect();
    Ok((groups, result.noise_count()))
}

/// Distinct users in first-appearance order, plus each instance's user index.
fn distinct_users(trajectories: &[Trajectory]) -> (Vec<&UserProfile>, Vec<usize>) {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut users = Vec::new();
    let user_of = trajectories
        .iter()
        .map(|t| {
            *index.entry(t.user.user_id()).or_insert_with(|| {
                users.push(&t.user);
                users.len() - 1
            })
        })
        .collect();
    (users, user_of)
}

/// Nearest-policy lookup by cosine similarity.
pub struct PolicyAssigner<'a> {
    registry: &'a PolicyRegistry,
    norms: Vec<f64>,
}

impl<'a> PolicyAssigner<'a> {
    pub fn new(registry: &'a PolicyRegistry) -> Result<Self> {
        if registry.is_empty() {
            return Err(Error::EmptyRegistry);
        }
        let norms = registry.policies.iter().map(|p| l2_norm(&p.vector)).collect();
        Ok(PolicyAssigner { registry, norms })
    }

    /// Index of the most similar policy; ties go to the lowest index.
    pub fn assign(&self, embedding: &Embedding) -> Result<usize> {
        if let Some(fp) = embedding.fingerprint() {
            self.registry.check_fingerprint(fp)?;
        }
        let dim = self.registry.encoder.dimension();
        if embedding.dimension() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: embedding.dimension(),
            });
        }
        let q = embedding.values();
        let qn = l2_norm(q);
        let mut best = 0;
        let mut best_sim = f64::NEG_INFINITY;
        for (i, (p, &pn)) in self.registry.policies.iter().zip(&self.norms).enumerate() {
            let sim = if qn == 0.0 || pn == 0.0 {
                0.0
            } else {
                let dot: f64 = q.iter().zip(&p.vector).map(|(a, b)| a * b).sum();
                (dot / (qn * pn)).clamp(-1.0, 1.0)
            };
            if sim > best_sim {
                best_sim = sim;
                best = i;
            }
        }
        Ok(best)
    }
}

/// Assigns one embedding to its most similar policy.
pub fn assign_policy(registry: &PolicyRegistry, embedding: &Embedding) -> Result<usize> {
    PolicyAssigner::new(registry)?.assign(embedding)
}

/// Encodes a profile with the registry's encoder.
pub fn profile_embedding(registry: &PolicyRegistry, user: &UserProfile) -> Embedding {
    HashedNgramEncoder::new(registry.encoder.clone()).encode(user.serialized_text())
}
