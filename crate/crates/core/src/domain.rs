//! Core data model: profiles, scenes, interventions, trajectories, mined
//! policies and the group-level estimate produced by the simulator.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::encoder::{l2_norm, EncoderConfig};
use crate::error::{Error, Result};

/// Value of a profile attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Number(f64),
    Text(String),
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Number(v) => write!(f, "{v}"),
            AttrValue::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for AttrValue {
    fn from(v: f64) -> Self {
        AttrValue::Number(v)
    }
}

impl From<&str> for AttrValue {
    fn from(v: &str) -> Self {
        AttrValue::Text(v.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub key: String,
    pub value: AttrValue,
}

/// A user profile. `serialized_text` is always derived from the
/// attributes: one `key: value` line per attribute, sorted by key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "UserProfileRepr")]
pub struct UserProfile {
    user_id: String,
    attributes: Vec<Attribute>,
    serialized_text: String,
}

#[derive(Deserialize)]
struct UserProfileRepr {
    user_id: String,
    attributes: Vec<Attribute>,
}

impl TryFrom<UserProfileRepr> for UserProfile {
    type Error = Error;

    fn try_from(repr: UserProfileRepr) -> Result<Self> {
        UserProfile::new(repr.user_id, repr.attributes)
    }
}

impl UserProfile {
    pub fn new(user_id: impl Into<String>, attributes: Vec<Attribute>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for attr in &attributes {
            if !seen.insert(attr.key.as_str()) {
                return Err(Error::InvariantViolation(format!(
                    "duplicate profile attribute `{}`",
                    attr.key
                )));
            }
            if let AttrValue::Number(v) = attr.value {
                if !v.is_finite() {
                    return Err(Error::InvariantViolation(format!(
                        "attribute `{}` is not finite",
                        attr.key
                    )));
                }
            }
        }
        let serialized_text = serialize_attributes(&attributes);
        Ok(UserProfile {
            user_id: user_id.into(),
            attributes,
            serialized_text,
        })
    }

    /// Convenience constructor from `(key, value)` pairs.
    pub fn from_pairs<K, V>(user_id: impl Into<String>, pairs: impl IntoIterator<Item = (K, V)>) -> Result<Self>
    where
        K: Into<String>,
        V: Into<AttrValue>,
    {
        let attributes = pairs
            .into_iter()
            .map(|(k, v)| Attribute {
                key: k.into(),
                value: v.into(),
            })
            .collect();
        UserProfile::new(user_id, attributes)
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn attribute(&self, key: &str) -> Option<&AttrValue> {
        self.attributes.iter().find(|a| a.key == key).map(|a| &a.value)
    }

    pub fn serialized_text(&self) -> &str {
        &self.serialized_text
    }
}

fn serialize_attributes(attributes: &[Attribute]) -> String {
    let mut lines: Vec<String> = attributes
        .iter()
        .map(|a| format!("{}: {}", a.key, a.value))
        .collect();
    lines.sort();
    lines.join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Chinese,
    Snack,
    Exotic,
    Hotpot,
    #[serde(rename = "BBQ")]
    Bbq,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Chinese,
        Category::Snack,
        Category::Exotic,
        Category::Hotpot,
        Category::Bbq,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Chinese => "Chinese",
            Category::Snack => "Snack",
            Category::Exotic => "Exotic",
            Category::Hotpot => "Hotpot",
            Category::Bbq => "BBQ",
        }
    }

    pub fn index(self) -> usize {
        Category::ALL.iter().position(|c| *c == self).unwrap_or(0)
    }

    pub fn parse(s: &str) -> Option<Category> {
        Category::ALL.into_iter().find(|c| c.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    Head,
    Mid,
    Tail,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Head, Tier::Mid, Tier::Tail];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Head => "Head",
            Tier::Mid => "Mid",
            Tier::Tail => "Tail",
        }
    }

    pub fn index(self) -> usize {
        Tier::ALL.iter().position(|t| *t == self).unwrap_or(0)
    }

    pub fn parse(s: &str) -> Option<Tier> {
        Tier::ALL.into_iter().find(|t| t.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericFeature {
    pub key: String,
    pub value: f64,
}

/// A merchant context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SceneRepr")]
pub struct Scene {
    pub merchant_id: String,
    pub category: Category,
    pub tier: Tier,
    pub price_tier: f64,
    pub rating: f64,
    #[serde(default)]
    pub promotion: Option<String>,
    #[serde(default)]
    pub extra_features: Vec<NumericFeature>,
}

#[derive(Deserialize)]
struct SceneRepr {
    merchant_id: String,
    category: Category,
    tier: Tier,
    price_tier: f64,
    rating: f64,
    #[serde(default)]
    promotion: Option<String>,
    #[serde(default)]
    extra_features: Vec<NumericFeature>,
}

impl TryFrom<SceneRepr> for Scene {
    type Error = Error;

    fn try_from(r: SceneRepr) -> Result<Self> {
        let scene = Scene {
            merchant_id: r.merchant_id,
            category: r.category,
            tier: r.tier,
            price_tier: r.price_tier,
            rating: r.rating,
            promotion: r.promotion,
            extra_features: r.extra_features,
        };
        scene.validate()?;
        Ok(scene)
    }
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if !(self.rating.is_finite() && (0.0..=5.0).contains(&self.rating)) {
            return Err(Error::InvariantViolation(format!(
                "rating {} outside [0, 5]",
                self.rating
            )));
        }
        if !(self.price_tier.is_finite() && self.price_tier > 0.0) {
            return Err(Error::InvariantViolation(format!(
                "price_tier {} must be positive",
                self.price_tier
            )));
        }
        let mut seen = BTreeSet::new();
        for f in &self.extra_features {
            if !seen.insert(f.key.as_str()) {
                return Err(Error::InvariantViolation(format!(
                    "duplicate extra feature `{}`",
                    f.key
                )));
            }
            if !f.value.is_finite() {
                return Err(Error::InvariantViolation(format!(
                    "extra feature `{}` is not finite",
                    f.key
                )));
            }
        }
        Ok(())
    }

    pub fn has_promotion(&self) -> bool {
        self.promotion.as_deref().is_some_and(|p| !p.trim().is_empty())
    }

    pub fn extra(&self, key: &str) -> Option<f64> {
        self.extra_features.iter().find(|f| f.key == key).map(|f| f.value)
    }

    /// Numeric view of a scene field, as used by rule-based decisions.
    /// `promotion` reads as 1 when a promotion is present, 0 otherwise.
    pub fn numeric_field(&self, name: &str) -> Option<f64> {
        match name {
            "price_tier" => Some(self.price_tier),
            "rating" => Some(self.rating),
            "promotion" => Some(if self.has_promotion() { 1.0 } else { 0.0 }),
            other => {
                let key = other.strip_prefix("extra_features.").unwrap_or(other);
                self.extra(key)
            }
        }
    }

    /// Canonical text rendering, `key: value` lines sorted by key.
    pub fn serialized_text(&self) -> String {
        let mut lines = vec![
            format!("category: {}", self.category),
            format!("merchant_id: {}", self.merchant_id),
            format!("price_tier: {}", self.price_tier),
            format!("rating: {}", self.rating),
            format!("tier: {}", self.tier),
            format!("promotion: {}", self.promotion.as_deref().unwrap_or("none")),
        ];
        lines.extend(
            self.extra_features
                .iter()
                .map(|f| format!("extra_features.{}: {}", f.key, f.value)),
        );
        lines.sort();
        lines.join("\n")
    }
}

/// A single field edit. `path` is one of `price_tier`, `rating`,
/// `promotion`, `category`, `tier` or `extra_features.<key>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edit {
    pub path: String,
    pub value: serde_json::Value,
}

impl Edit {
    pub fn new(path: impl Into<String>, value: impl Into<serde_json::Value>) -> Self {
        Edit {
            path: path.into(),
            value: value.into(),
        }
    }
}

/// A counterfactual strategy: ordered edits applied to a scene.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    #[serde(default)]
    pub edits: Vec<Edit>,
    #[serde(default)]
    pub label: String,
}

impl Intervention {
    pub fn identity() -> Self {
        Intervention {
            edits: Vec::new(),
            label: "identity".into(),
        }
    }

    pub fn new(label: impl Into<String>, edits: Vec<Edit>) -> Self {
        Intervention {
            edits,
            label: label.into(),
        }
    }
}

fn expect_number(path: &str, value: &serde_json::Value) -> Result<f64> {
    value
        .as_f64()
        .ok_or_else(|| Error::InvariantViolation(format!("`{path}` expects a number, got {value}")))
}

/// Applies `a` to a copy of `scene`. The input is left untouched.
pub fn apply_intervention(scene: &Scene, a: &Intervention) -> Result<Scene> {
    let mut out = scene.clone();
    for edit in &a.edits {
        let path = edit.path.as_str();
        match path {
            "price_tier" => out.price_tier = expect_number(path, &edit.value)?,
            "rating" => out.rating = expect_number(path, &edit.value)?,
            "promotion" => {
                out.promotion = match &edit.value {
                    serde_json::Value::Null => None,
                    serde_json::Value::String(s) => Some(s.clone()),
                    other => {
                        return Err(Error::InvariantViolation(format!(
                            "`promotion` expects text or null, got {other}"
                        )))
                    }
                }
            }
            "category" => {
                out.category = edit
                    .value
                    .as_str()
                    .and_then(Category::parse)
                    .ok_or_else(|| Error::InvariantViolation(format!("unknown category {}", edit.value)))?
            }
            "tier" => {
                out.tier = edit
                    .value
                    .as_str()
                    .and_then(Tier::parse)
                    .ok_or_else(|| Error::InvariantViolation(format!("unknown tier {}", edit.value)))?
            }
            "merchant_id" => {
                return Err(Error::InvariantViolation("merchant_id cannot be edited".into()));
            }
            other => {
                let key = other
                    .strip_prefix("extra_features.")
                    .ok_or_else(|| Error::UnknownFieldPath(other.to_owned()))?;
                let value = expect_number(other, &edit.value)?;
                let slot = out
                    .extra_features
                    .iter_mut()
                    .find(|f| f.key == key)
                    .ok_or_else(|| Error::UnknownFieldPath(other.to_owned()))?;
                slot.value = value;
            }
        }
    }
    out.validate()?;
    Ok(out)
}

/// One observed decision session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrajectoryRepr")]
pub struct Trajectory {
    pub user: UserProfile,
    pub scene: Scene,
    pub outcome: u8,
    pub timestamp: i64,
    pub compared_merchants: u32,
    pub session_terminal: bool,
}

#[derive(Deserialize)]
struct TrajectoryRepr {
    user: UserProfile,
    scene: Scene,
    outcome: u8,
    timestamp: i64,
    compared_merchants: u32,
    session_terminal: bool,
}

impl TryFrom<TrajectoryRepr> for Trajectory {
    type Error = Error;

    fn try_from(r: TrajectoryRepr) -> Result<Self> {
        let t = Trajectory {
            user: r.user,
            scene: r.scene,
            outcome: r.outcome,
            timestamp: r.timestamp,
            compared_merchants: r.compared_merchants,
            session_terminal: r.session_terminal,
        };
        t.validate()?;
        Ok(t)
    }
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        if self.outcome > 1 {
            return Err(Error::InvariantViolation(format!(
                "outcome must be 0 or 1, got {}",
                self.outcome
            )));
        }
        if self.timestamp <= 0 {
            return Err(Error::InvariantViolation(format!(
                "timestamp must be positive, got {}",
                self.timestamp
            )));
        }
        if self.compared_merchants == 0 {
            return Err(Error::InvariantViolation(
                "compared_merchants must be at least 1".into(),
            ));
        }
        self.scene.validate()
    }

    pub fn is_high_intent(&self, min_compared: u32, require_terminal: bool) -> bool {
        (self.session_terminal || !require_terminal) && self.compared_merchants >= min_compared
    }
}

/// Keeps sessions where the user compared at least `min_compared`
/// merchants and, if `require_terminal`, reached a definitive purchase or
/// exit. Order preserved.
pub fn select_high_intent(trajectories: &[Trajectory], min_compared: u32, require_terminal: bool) -> Result<Vec<Trajectory>> {
    if min_compared < 2 {
        return Err(Error::Precondition(format!(
            "min_compared must be at least 2, got {min_compared}"
        )));
    }
    Ok(trajectories
        .iter()
        .filter(|t| t.is_high_intent(min_compared, require_terminal))
        .cloned()
        .collect())
}

/// Structured policy instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyText {
    pub user_characteristics: String,
    pub key_decision_factors: Vec<String>,
    pub decision_guide: String,
}

impl PolicyText {
    pub fn validate(&self) -> Result<()> {
        if self.user_characteristics.trim().is_empty()
            || self.decision_guide.trim().is_empty()
            || self.key_decision_factors.is_empty()
            || self.key_decision_factors.iter().any(|f| f.trim().is_empty())
        {
            return Err(Error::InvariantViolation(
                "policy text fields must be non-empty".into(),
            ));
        }
        Ok(())
    }

    /// Text used both as the reasoning system prompt and as encoder input.
    pub fn render(&self) -> String {
        format!(
            "User characteristics: {}\nKey decision factors: {}\nDecision guide: {}",
            self.user_characteristics,
            self.key_decision_factors.join("; "),
            self.decision_guide
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPolicy {
    pub persona_id: usize,
    pub subgroup_id: usize,
    pub instruction: PolicyText,
    pub vector: Vec<f64>,
    pub support: usize,
}

/// Output of policy mining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRegistry {
    pub policies: Vec<DecisionPolicy>,
    pub encoder: EncoderConfig,
    pub encoder_fingerprint: String,
    pub mined_at: i64,
    pub min_support: usize,
    pub config_hash: String,
    pub seed: u64,
}

impl PolicyRegistry {
    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            return Err(Error::EmptyRegistry);
        }
        if self.encoder_fingerprint != self.encoder.fingerprint() {
            return Err(Error::FingerprintMismatch {
                expected: self.encoder.fingerprint().to_owned(),
                actual: self.encoder_fingerprint.clone(),
            });
        }
        let dim = self.encoder.dimension();
        let mut ids = BTreeSet::new();
        for p in &self.policies {
            p.instruction.validate()?;
            if p.vector.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: p.vector.len(),
                });
            }
            if (l2_norm(&p.vector) - 1.0).abs() > 1e-9 {
                return Err(Error::InvariantViolation(format!(
                    "policy ({}, {}) vector is not unit norm",
                    p.persona_id, p.subgroup_id
                )));
            }
            if p.support < self.min_support {
                return Err(Error::InvariantViolation(format!(
                    "policy ({}, {}) support {} below minimum {}",
                    p.persona_id, p.subgroup_id, p.support, self.min_support
                )));
            }
            if !ids.insert((p.persona_id, p.subgroup_id)) {
                return Err(Error::InvariantViolation(format!(
                    "duplicate policy id ({}, {})",
                    p.persona_id, p.subgroup_id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn policy(&self, index: usize) -> Result<&DecisionPolicy> {
        self.policies.get(index).ok_or(Error::InvalidPolicyIndex {
            index,
            len: self.policies.len(),
        })
    }

    pub fn check_fingerprint(&self, fingerprint: &str) -> Result<()> {
        if self.encoder_fingerprint != fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.encoder_fingerprint.clone(),
                actual: fingerprint.to_owned(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureWeight {
    pub policy: usize,
    pub probability: f64,
}

/// Per-scene categorical distribution over registry policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMixture {
    pub scene_id: String,
    pub weights: Vec<MixtureWeight>,
}

impl PolicyMixture {
    pub fn validate(&self, registry_len: usize) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::InvariantViolation(format!(
                "mixture for `{}` has no weights",
                self.scene_id
            )));
        }
        let mut total = 0.0;
        for w in &self.weights {
            if w.policy >= registry_len {
                return Err(Error::InvalidPolicyIndex {
                    index: w.policy,
                    len: registry_len,
                });
            }
            if !(w.probability >= 0.0 && w.probability.is_finite()) {
                return Err(Error::InvariantViolation(format!(
                    "negative mixture weight for policy {}",
                    w.policy
                )));
            }
            total += w.probability;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvariantViolation(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    /// Uniform mixture over every policy of a registry.
    pub fn uniform(scene_id: impl Into<String>, registry_len: usize) -> Self {
        let p = 1.0 / registry_len as f64;
        PolicyMixture {
            scene_id: scene_id.into(),
            weights: (0..registry_len)
                .map(|policy| MixtureWeight { policy, probability: p })
                .collect(),
        }
    }

    pub fn weight_of(&self, policy: usize) -> f64 {
        self.weights
            .iter()
            .find(|w| w.policy == policy)
            .map_or(0.0, |w| w.probability)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyBreakdown {
    pub policy: usize,
    pub draws: usize,
    pub reason_mean: f64,
    pub fit_mean: f64,
}

/// Fused group-level purchase-rate estimate for one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEstimate {
    pub scene_id: String,
    pub intervention: String,
    pub hybrid_rate: f64,
    pub reason_mean: f64,
    pub fit_mean: f64,
    pub lambda: f64,
    pub samples: usize,
    pub seed: u64,
    pub per_policy: Vec<PolicyBreakdown>,
}

impl GroupEstimate {
    pub fn validate(&self) -> Result<()> {
        let fused = self.lambda * self.reason_mean + (1.0 - self.lambda) * self.fit_mean;
        if (fused - self.hybrid_rate).abs() > 1e-9 {
            return Err(Error::InvariantViolation(
                "hybrid_rate is not the lambda-fusion of the branch means".into(),
            ));
        }
        let draws: usize = self.per_policy.iter().map(|p| p.draws).sum();
        if draws != self.samples {
            return Err(Error::InvariantViolation(format!(
                "per-policy draws sum to {draws}, expected {}",
                self.samples
            )));
        }
        for rate in [self.hybrid_rate, self.reason_mean, self.fit_mean, self.lambda] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::InvariantViolation(format!("{rate} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Eq.-style convex fusion with a different weight, reusing the branch means.
    pub fn refuse(&self, lambda: f64) -> f64 {
        lambda * self.reason_mean + (1.0 - lambda) * self.fit_mean
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_intervention_is_identity() {
        let s = scene("m1", 30.0, 4.0);
        assert_eq!(apply_intervention(&s, &Intervention::identity()).unwrap(), s);
    }

    #[test]
    fn price_edit_changes_only_price() {
        let s = scene("m1", 30.0, 4.0);
        let a = Intervention::new("discount", vec![Edit::new("price_tier", 25.0)]);
        let out = apply_intervention(&s, &a).unwrap();
        assert_eq!(out.price_tier, 25.0);
        assert_eq!(Scene { price_tier: 30.0, ..out }, s);
        assert_eq!(s.price_tier, 30.0);
    }

    #[test]
    fn rating_out_of_range_is_rejected() {
        let s = scene("m1", 30.0, 4.0);
        let a = Intervention::new("bad", vec![Edit::new("rating", 6.0)]);
        assert!(matches!(apply_intervention(&s, &a), Err(Error::InvariantViolation(_))));
    }

    #[test]
    fn unknown_paths_are_rejected() {
        let s = scene("m1", 30.0, 4.0);
        for path in ["menu_size", "extra_features.parking"] {
            let a = Intervention::new("bad", vec![Edit::new(path, 1.0)]);
            assert!(matches!(apply_intervention(&s, &a), Err(Error::UnknownFieldPath(_))));
        }
        let a = Intervention::new("ok", vec![Edit::new("extra_features.convenience", 0.9)]);
        assert_eq!(apply_intervention(&s, &a).unwrap().extra("convenience"), Some(0.9));
    }

    #[test]
    fn promotion_and_enum_edits() {
        let s = scene("m1", 30.0, 4.0);
        let a = Intervention::new(
            "promo",
            vec![
                Edit::new("promotion", "20% off"),
                Edit::new("category", "BBQ"),
                Edit::new("tier", "Tail"),
            ],
        );
        let out = apply_intervention(&s, &a).unwrap();
        assert!(out.has_promotion());
        assert_eq!(out.category, Category::Bbq);
        assert_eq!(out.tier, Tier::Tail);
        let clear = Intervention::new("clear", vec![Edit::new("promotion", serde_json::Value::Null)]);
        assert!(!apply_intervention(&out, &clear).unwrap().has_promotion());
    }

    #[test]
    fn high_intent_filter() {
        let all_single: Vec<_> = (1..4).map(|i| trajectory("u", 1, true, i)).collect();
        assert!(select_high_intent(&all_single, 2, true).unwrap().is_empty());

        let mixed = vec![
            trajectory("a", 3, true, 1),
            trajectory("b", 1, true, 2),
            trajectory("c", 2, false, 3),
            trajectory("d", 2, true, 4),
        ];
        let kept = select_high_intent(&mixed, 2, true).unwrap();
        let ids: Vec<_> = kept.iter().map(|t| t.user.user_id()).collect();
        assert_eq!(ids, ["a", "d"]);
        assert_eq!(select_high_intent(&kept, 2, true).unwrap(), kept);
        assert!(matches!(select_high_intent(&mixed, 1, true), Err(Error::Precondition(_))));
        assert_eq!(select_high_intent(&mixed, 2, false).unwrap().len(), 3);
    }

    #[test]
    fn profile_serialization_is_sorted_and_canonical() {
        let a = UserProfile::from_pairs("u", [("taste", AttrValue::from("spicy")), ("age", AttrValue::from(23.0))]).unwrap();
        let b = UserProfile::from_pairs("u", [("age", AttrValue::from(23.0)), ("taste", AttrValue::from("spicy"))]).unwrap();
        assert_eq!(a.serialized_text(), "age: 23\ntaste: spicy");
        assert_eq!(a.serialized_text(), b.serialized_text());
        assert!(UserProfile::from_pairs("u", [("a", 1.0), ("a", 2.0)]).is_err());
        assert!(UserProfile::from_pairs("u", [("a", f64::NAN)]).is_err());
    }

    #[test]
    fn trajectory_invariants_on_parse() {
        let t = trajectory("u", 2, true, 5);
        let mut json = serde_json::to_value(&t).unwrap();
        json["outcome"] = 2.into();
        assert!(serde_json::from_value::<Trajectory>(json.clone()).is_err());
        json["outcome"] = 1.into();
        json["timestamp"] = 0.into();
        assert!(serde_json::from_value::<Trajectory>(json).is_err());
    }

    #[test]
    fn group_estimate_invariant() {
        let est = GroupEstimate {
            scene_id: "m".into(),
            intervention: "identity".into(),
            hybrid_rate: 0.3,
            reason_mean: 0.4,
            fit_mean: 0.2,
            lambda: 0.5,
            samples: 2,
            seed: 0,
            per_policy: vec![PolicyBreakdown {
                policy: 0,
                draws: 2,
                reason_mean: 0.4,
                fit_mean: 0.2,
            }],
        };
        est.validate().unwrap();
        assert!((est.refuse(1.0) - 0.4).abs() < 1e-12);
        let broken = GroupEstimate { hybrid_rate: 0.5, ..est };
        assert!(broken.validate().is_err());
    }

    fn arb_scene() -> impl Strategy<Value = Scene> {
        (1.0f64..100.0, 0.0f64..=5.0, any::<bool>(), 0usize..5, 0usize..3, -5.0f64..5.0).prop_map(
            |(price, rating, promo, c, t, extra)| Scene {
                merchant_id: "m".into(),
                category: Category::ALL[c],
                tier: Tier::ALL[t],
                price_tier: price,
                rating,
                promotion: promo.then(|| "combo deal".to_owned()),
                extra_features: vec![NumericFeature { key: "convenience".into(), value: extra }],
            },
        )
    }

    proptest! {
        #[test]
        fn trajectory_json_round_trip(scene in arb_scene(), outcome in 0u8..2, ts in 1i64..1_000_000, cmp in 1u32..6, term in any::<bool>(), age in 10.0f64..90.0) {
            let user = UserProfile::from_pairs("u1", [("age", AttrValue::from(age)), ("taste", AttrValue::from("mild"))]).unwrap();
            let t = Trajectory { user, scene, outcome, timestamp: ts, compared_merchants: cmp, session_terminal: term };
            let text = serde_json::to_string(&t).unwrap();
            let back: Trajectory = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn apply_intervention_is_pure(scene in arb_scene(), price in 1.0f64..80.0) {
            let a = Intervention::new("p", vec![Edit::new("price_tier", price)]);
            let x = serde_json::to_string(&apply_intervention(&scene, &a).unwrap()).unwrap();
            let y = serde_json::to_string(&apply_intervention(&scene, &a).unwrap()).unwrap();
            prop_assert_eq!(x, y);
        }
    }
}
