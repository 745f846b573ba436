//! Generative backends for the three language roles: explaining an observed
//! choice, summarizing a group of explanations into a policy, and deciding
//! on a scene under a policy instruction.
//!
//! [`StubBackend`] is a deterministic rule-based stand-in that makes the
//! whole pipeline runnable offline. [`RemoteBackend`] talks to any
//! chat-completion style HTTP endpoint.

mod prompts;
mod remote;
mod stub;

use std::env;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use prompts::{PromptSet, PromptTemplate};
pub use remote::RemoteBackend;
pub use stub::{parse_guide, Comparator, Factor, GuideRule, StubBackend};

use crate::domain::{PolicyText, Scene, UserProfile};
use crate::error::{Error, Result};

pub const ENDPOINT_ENV: &str = "DUALSIM_LLM_ENDPOINT";
pub const MODEL_ENV: &str = "DUALSIM_LLM_MODEL";
pub const TOKEN_ENV: &str = "DUALSIM_LLM_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendKind {
    Stub,
    Remote,
}

/// Backend configuration as it appears in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeBackend {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model_name: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default)]
    pub prompt_file: Option<String>,
}

fn default_retries() -> u32 {
    2
}

fn default_concurrency() -> usize {
    4
}

impl Default for GenerativeBackend {
    fn default() -> Self {
        GenerativeBackend::stub(0)
    }
}

impl GenerativeBackend {
    pub fn stub(seed: u64) -> Self {
        GenerativeBackend {
            kind: BackendKind::Stub,
            endpoint: None,
            model_name: None,
            temperature: 0.0,
            seed,
            retries: default_retries(),
            max_concurrency: default_concurrency(),
            prompt_file: None,
        }
    }

    /// Instantiates the backend. Remote endpoint and model fall back to the
    /// `DUALSIM_LLM_*` environment variables.
    pub fn build(&self) -> Result<Arc<dyn Backend>> {
        match self.kind {
            BackendKind::Stub => Ok(Arc::new(StubBackend::new(self.seed))),
            BackendKind::Remote => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .or_else(|| env::var(ENDPOINT_ENV).ok())
                    .ok_or_else(|| Error::InvariantViolation("remote backend requires an endpoint".into()))?;
                let model = self
                    .model_name
                    .clone()
                    .or_else(|| env::var(MODEL_ENV).ok())
                    .ok_or_else(|| Error::InvariantViolation("remote backend requires a model name".into()))?;
                if !(self.temperature >= 0.0) {
                    return Err(Error::InvariantViolation("temperature must be non-negative".into()));
                }
                let prompts = match &self.prompt_file {
                    Some(path) => PromptSet::load(std::path::Path::new(path))?,
                    None => PromptSet::default(),
                };
                let backend = RemoteBackend::new(endpoint, model, self.temperature, env::var(TOKEN_ENV).ok())
                    .with_retries(self.retries)
                    .with_max_concurrency(self.max_concurrency)
                    .with_prompts(prompts);
                Ok(Arc::new(backend))
            }
        }
    }
}

/// Textual explanation of one observed choice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rationale {
    pub text: String,
    /// Index of the explained trajectory in the mining set.
    pub source_trajectory: usize,
    pub outcome_explained: u8,
}

pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn explain_text(&self, user: &UserProfile, scene: &Scene, outcome: u8) -> Result<String>;

    /// `rationales` is never empty.
    fn summarize_texts(&self, rationales: &[&str]) -> Result<PolicyText>;

    fn decide(&self, scene: &Scene, instruction: &PolicyText, seed: u64) -> Result<u8>;
}

pub fn explain(
    backend: &dyn Backend,
    user: &UserProfile,
    scene: &Scene,
    outcome: u8,
    source_trajectory: usize,
) -> Result<Rationale> {
    let text = backend.explain_text(user, scene, outcome)?;
    if text.trim().is_empty() {
        return Err(Error::EmptyCompletion);
    }
    Ok(Rationale {
        text,
        source_trajectory,
        outcome_explained: outcome,
    })
}

pub fn summarize(backend: &dyn Backend, rationales: &[Rationale]) -> Result<PolicyText> {
    if rationales.is_empty() {
        return Err(Error::Precondition("cannot summarize an empty rationale set".into()));
    }
    let texts: Vec<&str> = rationales.iter().map(|r| r.text.as_str()).collect();
    let text = backend.summarize_texts(&texts)?;
    text.validate()?;
    Ok(text)
}

pub fn decide(backend: &dyn Backend, scene: &Scene, instruction: &PolicyText, seed: u64) -> Result<u8> {
    backend.decide(scene, instruction, seed)
}
