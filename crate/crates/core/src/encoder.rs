//! Deterministic text encoder.
//!
//! Texts are tokenized, expanded into word n-grams, hashed into a fixed
//! number of buckets and L2-normalized. Any other embedding service can be
//! plugged in through [`TextEncoder`] as long as it reports a stable
//! fingerprint.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const SCHEME: &str = "hashed-ngram-v1";
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Configuration of the hashed n-gram encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "EncoderConfigRepr")]
pub struct EncoderConfig {
    dimension: usize,
    ngram_min: usize,
    ngram_max: usize,
    seed: u64,
    fingerprint: String,
}

#[derive(Deserialize)]
struct EncoderConfigRepr {
    dimension: usize,
    ngram_min: usize,
    ngram_max: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    fingerprint: Option<String>,
}

impl TryFrom<EncoderConfigRepr> for EncoderConfig {
    type Error = Error;

    fn try_from(repr: EncoderConfigRepr) -> Result<Self> {
        let cfg = EncoderConfig::new(repr.dimension, repr.ngram_min, repr.ngram_max, repr.seed)?;
        if let Some(fp) = repr.fingerprint {
            if fp != cfg.fingerprint {
                return Err(Error::FingerprintMismatch {
                    expected: cfg.fingerprint,
                    actual: fp,
                });
            }
        }
        Ok(cfg)
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::new(256, 1, 1, 0).expect("default encoder config is valid")
    }
}

impl EncoderConfig {
    pub fn new(dimension: usize, ngram_min: usize, ngram_max: usize, seed: u64) -> Result<Self> {
        if dimension < 8 {
            return Err(Error::InvariantViolation(format!(
                "encoder dimension must be at least 8, got {dimension}"
            )));
        }
        if ngram_min == 0 || ngram_min > ngram_max {
            return Err(Error::InvariantViolation(format!(
                "invalid n-gram range ({ngram_min}, {ngram_max})"
            )));
        }
        let mut hasher = Sha256::new();
        hasher.update(format!("{SCHEME}|{dimension}|{ngram_min}|{ngram_max}|{seed}").as_bytes());
        let fingerprint = hex::encode(&hasher.finalize()[..16]);
        Ok(EncoderConfig {
            dimension,
            ngram_min,
            ngram_max,
            seed,
            fingerprint,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn ngram_range(&self) -> (usize, usize) {
        (self.ngram_min, self.ngram_max)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }
}

/// A dense vector produced by an encoder. Carries the producing encoder's
/// fingerprint when known so that mismatched spaces can be rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    values: Vec<f64>,
    #[serde(skip)]
    fingerprint: Option<Arc<str>>,
}

impl Embedding {
    /// Wraps raw values without an encoder fingerprint.
    pub fn from_values(values: Vec<f64>) -> Self {
        Embedding {
            values,
            fingerprint: None,
        }
    }

    pub fn with_fingerprint(mut self, fingerprint: Arc<str>) -> Self {
        self.fingerprint = Some(fingerprint);
        self
    }

    pub fn zeros(dimension: usize) -> Self {
        Embedding::from_values(vec![0.0; dimension])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn fingerprint(&self) -> Option<&str> {
        self.fingerprint.as_deref()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

/// Maps text into a fixed-dimension vector space.
pub trait TextEncoder: Send + Sync {
    fn dimension(&self) -> usize;
    fn fingerprint(&self) -> &str;
    fn encode(&self, text: &str) -> Embedding;
}

#[derive(Debug, Clone)]
pub struct HashedNgramEncoder {
    cfg: EncoderConfig,
    fingerprint: Arc<str>,
}

impl HashedNgramEncoder {
    pub fn new(cfg: EncoderConfig) -> Self {
        let fingerprint = Arc::from(cfg.fingerprint());
        HashedNgramEncoder { cfg, fingerprint }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }
}

impl TextEncoder for HashedNgramEncoder {
    fn dimension(&self) -> usize {
        self.cfg.dimension
    }

    fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn encode(&self, text: &str) -> Embedding {
        let tokens = tokenize(text);
        let mut values = vec![0.0; self.cfg.dimension];
        for n in self.cfg.ngram_min..=self.cfg.ngram_max {
            for window in tokens.windows(n) {
                let bucket = hash_ngram(window, self.cfg.seed) % self.cfg.dimension as u64;
                values[bucket as usize] += 1.0;
            }
        }
        let norm = l2_norm(&values);
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Embedding::from_values(values).with_fingerprint(self.fingerprint.clone())
    }
}

/// Encodes `text` with a hashed n-gram encoder built from `cfg`.
pub fn encode(text: &str, cfg: &EncoderConfig) -> Embedding {
    HashedNgramEncoder::new(cfg.clone()).encode(text)
}

/// Lowercased tokens: maximal runs of alphanumerics, `_` and `.`, with
/// leading and trailing dots stripped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '.'))
        .map(|t| t.trim_matches('.'))
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

fn hash_ngram(tokens: &[String], seed: u64) -> u64 {
    let mut h = FNV_OFFSET;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    };
    feed(&seed.to_le_bytes());
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            feed(b" ");
        }
        feed(t.as_bytes());
    }
    h
}

pub(crate) fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cosine similarity. A zero vector has similarity 0 with everything.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::DimensionMismatch {
            expected: a.dimension(),
            actual: b.dimension(),
        });
    }
    Ok(cosine_slices(a.values(), b.values()))
}

pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> f64 {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}
