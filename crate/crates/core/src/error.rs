use std::fmt;

use serde::{Deserialize, Serialize};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage a failure is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Load,
    Split,
    Mine,
    Train,
    Simulate,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Split => "split",
            Stage::Mine => "mine",
            Stage::Train => "train",
            Stage::Simulate => "simulate",
            Stage::Evaluate => "evaluate",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown field path `{0}`")]
    UnknownFieldPath(String),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("k = {k} exceeds the number of points ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("fingerprint mismatch: expected {expected}, got {actual}")]
    FingerprintMismatch { expected: String, actual: String },
    #[error("remote backend unreachable after {attempts} attempt(s): {message}")]
    RemoteUnreachable { attempts: u32, message: String },
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("could not parse policy summary: {0}")]
    ParseFailure(String),
    #[error("could not parse a decision from `{0}`")]
    UnparseableDecision(String),
    #[error("all clusters dissolved to noise; no policy could be mined")]
    EmptyRegistry,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("visitor log is empty for scene `{0}`")]
    EmptyVisitorLog(String),
    #[error("policy index {index} out of range ({len} policies)")]
    InvalidPolicyIndex { index: usize, len: usize },
    #[error("unknown scene `{0}`")]
    UnknownScene(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("at least {needed} pairs required, got {got}")]
    TooFewPairs { needed: usize, got: usize },
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv export failed: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub fn at(self, stage: Stage) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// The stage this error was attributed to, if any.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// Stable machine-readable code, used in service error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Error::UnknownFieldPath(_) => "unknown_field_path",
            Error::InvariantViolation(_) => "invariant_violation",
            Error::Precondition(_) => "precondition",
            Error::EmptyInput(_) => "empty_input",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::KTooLarge { .. } => "k_too_large",
            Error::FingerprintMismatch { .. } => "fingerprint_mismatch",
            Error::RemoteUnreachable { .. } => "remote_unreachable",
            Error::EmptyCompletion => "empty_completion",
            Error::ParseFailure(_) => "parse_failure",
            Error::UnparseableDecision(_) => "unparseable_decision",
            Error::EmptyRegistry => "empty_registry",
            Error::EmptyDataset => "empty_dataset",
            Error::EmptyVisitorLog(_) => "empty_visitor_log",
            Error::InvalidPolicyIndex { .. } => "invalid_policy_index",
            Error::UnknownScene(_) => "unknown_scene",
            Error::LengthMismatch(..) => "length_mismatch",
            Error::TooFewPairs { .. } => "too_few_pairs",
            Error::Stage { source, .. } => source.code(),
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
