use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{Category, Scene, Tier};
use crate::encoder::Embedding;
use crate::error::{Error, Result};

const LAYOUT_VERSION: &str = "scene-features-v1";

/// Fixed feature order:
///
/// ```text
/// price_tier, rating,
/// category one-hot (Chinese, Snack, Exotic, Hotpot, BBQ),
/// tier one-hot (Head, Mid, Tail),
/// promotion flag,
/// extra_features in `extra_keys` order (absent keys read as 0),
/// profile embedding (D), policy vector (D)
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub extra_keys: Vec<String>,
    pub embedding_dimension: usize,
    pub fingerprint: String,
}

impl FeatureLayout {
    pub fn new(mut extra_keys: Vec<String>, embedding_dimension: usize) -> Self {
        extra_keys.sort();
        extra_keys.dedup();
        let mut h = Sha256::new();
        h.update(LAYOUT_VERSION);
        for k in &extra_keys {
            h.update(b"|");
            h.update(k.as_bytes());
        }
        h.update(format!("|D={embedding_dimension}"));
        let fingerprint = hex::encode(&h.finalize()[..16]);
        FeatureLayout {
            extra_keys,
            embedding_dimension,
            fingerprint,
        }
    }

    /// Layout covering every extra-feature key seen in `scenes`.
    pub fn from_scenes<'a>(scenes: impl IntoIterator<Item = &'a Scene>, embedding_dimension: usize) -> Self {
        let keys = scenes
            .into_iter()
            .flat_map(|s| s.extra_features.iter().map(|f| f.key.clone()))
            .collect();
        FeatureLayout::new(keys, embedding_dimension)
    }

    pub fn scene_len(&self) -> usize {
        2 + Category::ALL.len() + Tier::ALL.len() + 1 + self.extra_keys.len()
    }

    pub fn len(&self) -> usize {
        self.scene_len() + 2 * self.embedding_dimension
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn policy_offset(&self) -> usize {
        self.scene_len() + self.embedding_dimension
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["price_tier".to_owned(), "rating".to_owned()];
        names.extend(Category::ALL.iter().map(|c| format!("category={}", c.as_str())));
        names.extend(Tier::ALL.iter().map(|t| format!("tier={}", t.as_str())));
        names.push("promotion".into());
        names.extend(self.extra_keys.iter().map(|k| format!("extra.{k}")));
        names.extend((0..self.embedding_dimension).map(|i| format!("profile[{i}]")));
        names.extend((0..self.embedding_dimension).map(|i| format!("policy[{i}]")));
        names
    }

    pub fn scene_block(&self, scene: &Scene) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.scene_len());
        x.push(scene.price_tier);
        x.push(scene.rating);
        x.extend(Category::ALL.iter().map(|&c| f64::from(u8::from(c == scene.category))));
        x.extend(Tier::ALL.iter().map(|&t| f64::from(u8::from(t == scene.tier))));
        x.push(f64::from(u8::from(scene.has_promotion())));
        x.extend(self.extra_keys.iter().map(|k| scene.extra(k).unwrap_or(0.0)));
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub fingerprint: String,
}

/// Concatenates scene features, profile embedding and policy vector.
pub fn featurize(layout: &FeatureLayout, scene: &Scene, profile: &Embedding, policy: &[f64]) -> Result<FeatureVector> {
    let d = layout.embedding_dimension;
    for actual in [profile.dimension(), policy.len()] {
        if actual != d {
            return Err(Error::DimensionMismatch { expected: d, actual });
        }
    }
    let mut values = layout.scene_block(scene);
    values.reserve(2 * d);
    values.extend_from_slice(profile.values());
    values.extend_from_slice(policy);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvariantViolation("non-finite feature".into()));
    }
    Ok(FeatureVector {
        values,
        fingerprint: layout.fingerprint.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::fixtures::scene;

    #[test]
    fn zero_embeddings_leave_scene_block() {
        let layout = FeatureLayout::new(vec!["convenience".into()], 4);
        let s = scene("m", 20.0, 4.5);
        let x = featurize(&layout, &s, &Embedding::zeros(4), &[0.0; 4]).unwrap();
        assert_eq!(x.values.len(), layout.len());
        assert_eq!(&x.values[..layout.scene_len()], layout.scene_block(&s).as_slice());
        assert!(x.values[layout.scene_len()..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rating_change_is_local() {
        let layout = FeatureLayout::new(vec!["convenience".into()], 4);
        let a = featurize(&layout, &scene("m", 20.0, 4.5), &Embedding::zeros(4), &[0.0; 4]).unwrap();
        let b = featurize(&layout, &scene("m", 20.0, 3.0), &Embedding::zeros(4), &[0.0; 4]).unwrap();
        let diff: Vec<usize> = (0..a.values.len()).filter(|&i| a.values[i] != b.values[i]).collect();
        assert_eq!(diff, vec![1]);
    }

    #[test]
    fn dimension_is_checked() {
        let layout = FeatureLayout::new(vec![], 4);
        assert!(matches!(
            featurize(&layout, &scene("m", 1.0, 1.0), &Embedding::zeros(3), &[0.0; 4]),
            Err(Error::DimensionMismatch { expected: 4, actual: 3 })
        ));
        assert!(featurize(&layout, &scene("m", 1.0, 1.0), &Embedding::zeros(4), &[0.0; 5]).is_err());
    }

    #[test]
    fn fingerprint_tracks_layout() {
        let a = FeatureLayout::new(vec!["b".into(), "a".into()], 4);
        assert_eq!(a, FeatureLayout::new(vec!["a".into(), "b".into(), "a".into()], 4));
        assert_ne!(a.fingerprint, FeatureLayout::new(vec!["a".into()], 4).fingerprint);
        assert_ne!(a.fingerprint, FeatureLayout::new(vec!["a".into(), "b".into()], 8).fingerprint);
    }
}
