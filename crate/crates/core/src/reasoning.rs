//! Policy-prompted binary decisions.

use serde::{Deserialize, Serialize};

use crate::backend::{self, Backend, BackendKind};
use crate::domain::{PolicyRegistry, PolicyText, Scene};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonSample {
    pub policy: usize,
    /// Always 0 or 1.
    pub decision: u8,
    pub backend: BackendKind,
}

/// Decision of policy `policy_index` on `scene`. Deterministic under the stub.
pub fn reason(
    backend: &dyn Backend,
    registry: &PolicyRegistry,
    policy_index: usize,
    scene: &Scene,
    seed: u64,
) -> Result<ReasonSample> {
    let policy = registry.policy(policy_index)?;
    let decision = backend::decide(backend, scene, &policy.instruction, seed)?;
    Ok(ReasonSample {
        policy: policy_index,
        decision,
        backend: backend.kind(),
    })
}

/// Policy-free instruction used when the mined policy signal is withheld.
pub fn generic_instruction() -> PolicyText {
    PolicyText {
        user_characteristics: "a typical customer".into(),
        key_decision_factors: vec!["rating".into()],
        decision_guide: "purchase only if rating >= 4.0".into(),
    }
}
