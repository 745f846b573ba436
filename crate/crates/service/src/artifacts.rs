use std::collections::BTreeMap;
use std::sync::Arc;

use dualsim::aggregator::{PolicySignal, ProfileSource, SimulationConfig, Simulator, VisitorPool};
use dualsim::backend::Backend;
use dualsim::domain::{GroupEstimate, Intervention, PolicyMixture, PolicyRegistry, Scene, UserProfile};
use dualsim::error::{Error, Result, Stage};
use dualsim::io;
use dualsim::pipeline::{evaluation_scenes, Experiment, ModelArtifact};

/// One diagnosable merchant: its reference scene and embedded visitor log.
pub struct Merchant {
    pub scene: Scene,
    pub visitors: usize,
    pub mixture: PolicyMixture,
    pool: VisitorPool,
}

/// Read-only artifacts shared by every request.
pub struct Artifacts {
    pub registry: PolicyRegistry,
    pub model: ModelArtifact,
    /// Keyed by merchant id, so listings come out sorted.
    pub merchants: BTreeMap<String, Merchant>,
    backend: Arc<dyn Backend>,
}

impl Artifacts {
    /// Loads the registry and model an experiment produced, plus the test
    /// scenes and visitor logs it would simulate.
    pub fn load(exp: &Experiment) -> Result<Self> {
        let registry: PolicyRegistry = io::read_json(&exp.registry_path()).map_err(|e| e.at(Stage::Load))?;
        let model: ModelArtifact = io::read_json(&exp.model_path()).map_err(|e| e.at(Stage::Load))?;
        let (_, test_set) = exp.split()?;
        let visitors = exp.visitors(&test_set)?;
        let scenes = evaluation_scenes(&test_set).into_iter().map(|(s, _, _)| s).collect();
        let backend = exp.cfg.backend.build().map_err(|e| e.at(Stage::Config))?;
        Artifacts::new(registry, model, scenes, visitors, backend)
    }

    /// Fails on any registry/model mismatch. Merchants without visitors are dropped.
    pub fn new(
        registry: PolicyRegistry,
        model: ModelArtifact,
        scenes: Vec<Scene>,
        visitors: BTreeMap<String, Vec<UserProfile>>,
        backend: Arc<dyn Backend>,
    ) -> Result<Self> {
        let load = |e: Error| e.at(Stage::Load);
        registry.validate().map_err(load)?;
        if model.model.feature_fingerprint != model.layout.fingerprint {
            return Err(load(Error::FingerprintMismatch {
                expected: model.model.feature_fingerprint.clone(),
                actual: model.layout.fingerprint.clone(),
            }));
        }
        if model.layout.embedding_dimension != registry.encoder.dimension() {
            return Err(load(Error::DimensionMismatch {
                expected: registry.encoder.dimension(),
                actual: model.layout.embedding_dimension,
            }));
        }
        let mut merchants = BTreeMap::new();
        for scene in scenes {
            let id = scene.merchant_id.clone();
            let Some(profiles) = visitors.get(&id).filter(|v| !v.is_empty()) else {
                log::warn!("merchant {id} has no visitors; skipped");
                continue;
            };
            let pool = VisitorPool::build(&registry, profiles, &id).map_err(load)?;
            let mixture = match model.policy_signal {
                PolicySignal::Mined => pool.mixture(&id, registry.len()),
                PolicySignal::Withheld => PolicyMixture::uniform(&id, registry.len()),
            };
            merchants.insert(
                id,
                Merchant {
                    scene,
                    visitors: profiles.len(),
                    mixture,
                    pool,
                },
            );
        }
        Ok(Artifacts {
            registry,
            model,
            merchants,
            backend,
        })
    }

    /// Simulates one strategy on a merchant. Deterministic in `cfg.seed`.
    pub fn simulate(&self, merchant: &Merchant, strategy: &Intervention, cfg: &SimulationConfig) -> Result<GroupEstimate> {
        let mut cfg = cfg.clone();
        cfg.policy_signal = self.model.policy_signal;
        if cfg.policy_signal == PolicySignal::Withheld {
            cfg.profile_source = ProfileSource::AllVisitors;
        }
        let simulator = Simulator {
            registry: &self.registry,
            model: &self.model.model,
            layout: &self.model.layout,
            backend: self.backend.as_ref(),
        };
        simulator
            .simulate(&merchant.mixture, &merchant.pool, &merchant.scene, strategy, &cfg)
            .map_err(|e| e.at(Stage::Simulate))
    }
}
