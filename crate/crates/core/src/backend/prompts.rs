use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::read_json;

const DEFAULT_PROMPTS: &str = include_str!("../../prompts/v1.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
}

/// Versioned prompt templates for the three generative roles.
/// Placeholders: `{profile}`, `{scene}`, `{outcome}`, `{rationales}`,
/// `{instruction}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub version: String,
    pub explain: PromptTemplate,
    pub summarize: PromptTemplate,
    pub decide: PromptTemplate,
}

impl Default for PromptSet {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_PROMPTS).expect("bundled prompt file is valid")
    }
}

impl PromptSet {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

pub(crate) fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    vars.iter()
        .fold(template.to_owned(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
}
