//! Rule-based stand-in for a language model.
//!
//! Explanation template (one sentence per observed choice):
//!
//! ```text
//! {Purchased|Declined}. A user whose {key} is {value} weighs {factor} first:
//! {field} {scene value} {met|fell short of} the expectations of a {value}
//! customer focused on {factor}.
//! ```
//!
//! `factor` is picked from the profile attribute with the most lexicon hits
//! (price, rating or promotion words); `field` is the scene field that
//! factor reads. Summaries keep the most frequent attribute keys with their
//! most frequent value words, and fit a one-threshold rule per recurring
//! factor. Decision guides are `field <= number` / `field >= number` rules;
//! the stub purchases iff any rule holds when the guide joins them with
//! "or", and iff every rule holds otherwise.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendKind};
use crate::domain::{AttrValue, PolicyText, Scene, UserProfile};
use crate::encoder::tokenize;
use crate::error::{Error, Result};

/// How many recurring slots a summary keeps.
const TOP_SLOTS: usize = 3;
/// How many recurring words describe one characteristic.
const CHARACTERISTIC_WORDS: usize = 12;
/// Minimum share of explanations a factor needs to contribute a rule.
const RULE_SHARE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Factor {
    Price,
    Rating,
    Promotion,
}

impl Factor {
    pub const ALL: [Factor; 3] = [Factor::Price, Factor::Rating, Factor::Promotion];

    pub fn name(self) -> &'static str {
        match self {
            Factor::Price => "price",
            Factor::Rating => "rating",
            Factor::Promotion => "promotion",
        }
    }

    pub fn field(self) -> &'static str {
        match self {
            Factor::Price => "price_tier",
            Factor::Rating => "rating",
            Factor::Promotion => "promotion",
        }
    }

    fn default_direction(self) -> Comparator {
        match self {
            Factor::Price => Comparator::AtMost,
            Factor::Rating | Factor::Promotion => Comparator::AtLeast,
        }
    }

    fn lexicon(self) -> &'static [&'static str] {
        match self {
            Factor::Price => &[
                "price", "prices", "budget", "cheap", "cost", "spend", "afford", "affordable", "expensive",
                "premium", "pricey", "savings", "splurge", "luxury", "inexpensive", "thrifty", "highend", "costly",
                "economical", "lowcost", "upmarket", "exclusive",
            ],
            Factor::Rating => &["rating", "ratings", "quality", "review", "reviews", "star", "stars", "reputation"],
            Factor::Promotion => &[
                "promotion", "promotions", "promo", "discount", "discounts", "coupon", "coupons", "deal", "deals",
                "voucher",
            ],
        }
    }

    fn from_name(name: &str) -> Option<Factor> {
        Factor::ALL.into_iter().find(|f| f.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    AtMost,
    AtLeast,
}

impl Comparator {
    fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::AtMost => value <= threshold,
            Comparator::AtLeast => value >= threshold,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Comparator::AtMost => "<=",
            Comparator::AtLeast => ">=",
        }
    }
}

/// One `field <= threshold` or `field >= threshold` rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuideRule {
    pub field: String,
    pub comparator: Comparator,
    pub threshold: f64,
}

impl GuideRule {
    pub fn holds(&self, scene: &Scene) -> Result<bool> {
        let value = scene
            .numeric_field(&self.field)
            .ok_or_else(|| Error::UnparseableDecision(format!("unknown scene field `{}`", self.field)))?;
        Ok(self.comparator.holds(value, self.threshold))
    }
}

impl fmt::Display for GuideRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {:.2}", self.field, self.comparator.symbol(), self.threshold)
    }
}

static RULE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"([A-Za-z_][A-Za-z0-9_.]*)\s*(<=|>=|≤|≥)\s*(-?[0-9]+(?:\.[0-9]+)?)").expect("valid regex")
});

static OR_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bor\b").expect("valid regex"));

static RATIONALE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^(Purchased|Declined)\. A user whose (.+?) is (.+?) weighs (\w+) first: (\S+) (\S+) (?:met|fell short of) the expectations",
    )
    .expect("valid regex")
});

/// Parses every comparator rule in a decision guide.
pub fn parse_guide(guide: &str) -> Result<Vec<GuideRule>> {
    let rules: Vec<GuideRule> = RULE_RE
        .captures_iter(guide)
        .map(|c| {
            let comparator = match &c[2] {
                "<=" | "≤" => Comparator::AtMost,
                _ => Comparator::AtLeast,
            };
            GuideRule {
                field: c[1].to_owned(),
                comparator,
                threshold: c[3].parse().unwrap_or(f64::NAN),
            }
        })
        .collect();
    if rules.is_empty() || rules.iter().any(|r| !r.threshold.is_finite()) {
        return Err(Error::UnparseableDecision(guide.to_owned()));
    }
    Ok(rules)
}

#[derive(Debug, Clone, PartialEq)]
struct ParsedRationale {
    purchased: bool,
    attr_key: String,
    attr_value: String,
    factor: Factor,
    value: f64,
}

fn parse_rationale(text: &str) -> Option<ParsedRationale> {
    let c = RATIONALE_RE.captures(text)?;
    Some(ParsedRationale {
        purchased: &c[1] == "Purchased",
        attr_key: c[2].to_owned(),
        attr_value: c[3].to_owned(),
        factor: Factor::from_name(&c[4])?,
        value: c[6].parse().ok()?,
    })
}

#[derive(Debug, Clone)]
pub struct StubBackend {
    seed: u64,
}

impl StubBackend {
    pub fn new(seed: u64) -> Self {
        StubBackend { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The profile attribute the stub treats as decisive, and its factor.
    fn dominant(user: &UserProfile) -> (String, String, Factor) {
        let mut attrs: Vec<_> = user.attributes().iter().collect();
        attrs.sort_by(|a, b| a.key.cmp(&b.key));
        let mut best: Option<(usize, &crate::domain::Attribute, Factor)> = None;
        for attr in &attrs {
            let text = match &attr.value {
                AttrValue::Text(s) => format!("{} {}", attr.key, s),
                AttrValue::Number(_) => attr.key.clone(),
            };
            let tokens = tokenize(&text);
            let mut factor_hits = Factor::ALL.map(|f| {
                (
                    tokens.iter().filter(|t| f.lexicon().contains(&t.as_str())).count(),
                    f,
                )
            });
            // Highest count, earliest factor on ties.
            factor_hits.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            let (hits, factor) = factor_hits[0];
            if hits > 0 && best.as_ref().is_none_or(|(h, _, _)| hits > *h) {
                best = Some((hits, attr, factor));
            }
        }
        match best {
            Some((_, attr, factor)) => (attr.key.clone(), attr.value.to_string(), factor),
            None => match attrs.first() {
                Some(attr) => (attr.key.clone(), attr.value.to_string(), Factor::Price),
                None => ("profile".into(), "unknown".into(), Factor::Price),
            },
        }
    }
}

/// Best single-threshold rule for `(value, purchased)` pairs. Both
/// directions are tried; ties prefer the factor's usual direction, then
/// the lowest threshold.
fn fit_rule(factor: Factor, samples: &[(f64, bool)]) -> GuideRule {
    let mut values: Vec<f64> = samples.iter().map(|s| s.0).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut candidates = Vec::with_capacity(values.len() + 1);
    candidates.push(values[0] - 1.0);
    candidates.extend(values.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    candidates.push(values[values.len() - 1] + 1.0);
    // Thresholds are rendered with two decimals; fit on what will be read back.
    for c in &mut candidates {
        *c = (*c * 100.0).round() / 100.0;
    }

    let preferred = factor.default_direction();
    let other = match preferred {
        Comparator::AtMost => Comparator::AtLeast,
        Comparator::AtLeast => Comparator::AtMost,
    };
    let mut best: Option<(usize, Comparator, f64)> = None;
    for comparator in [preferred, other] {
        for &t in &candidates {
            let correct = samples
                .iter()
                .filter(|(v, purchased)| comparator.holds(*v, t) == *purchased)
                .count();
            if best.is_none_or(|(c, _, _)| correct > c) {
                best = Some((correct, comparator, t));
            }
        }
    }
    let (_, comparator, threshold) = best.expect("at least one candidate");
    GuideRule {
        field: factor.field().to_owned(),
        comparator,
        threshold,
    }
}

fn top_slots<K: Ord + Clone>(counts: &BTreeMap<K, usize>, m: usize) -> Vec<K> {
    let mut entries: Vec<(&K, &usize)> = counts.iter().collect();
    // Stable sort keeps key order among equal counts.
    entries.sort_by(|a, b| b.1.cmp(a.1));
    entries.into_iter().take(m).map(|(k, _)| k.clone()).collect()
}

impl Backend for StubBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Stub
    }

    fn explain_text(&self, user: &UserProfile, scene: &Scene, outcome: u8) -> Result<String> {
        let (key, value, factor) = Self::dominant(user);
        let scene_value = scene.numeric_field(factor.field()).unwrap_or(0.0);
        let (verb, verdict) = if outcome == 1 {
            ("Purchased", "met")
        } else {
            ("Declined", "fell short of")
        };
        Ok(format!(
            "{verb}. A user whose {key} is {value} weighs {f} first: {field} {scene_value} {verdict} the expectations of a {value} customer focused on {f}.",
            f = factor.name(),
            field = factor.field(),
        ))
    }

    fn summarize_texts(&self, rationales: &[&str]) -> Result<PolicyText> {
        let parsed: Vec<ParsedRationale> = rationales.iter().filter_map(|t| parse_rationale(t)).collect();
        if parsed.is_empty() {
            return Err(Error::ParseFailure(
                "no explanation follows the stub template".into(),
            ));
        }

        let mut keys = BTreeMap::new();
        let mut words: BTreeMap<&str, BTreeMap<String, usize>> = BTreeMap::new();
        let mut factors = BTreeMap::new();
        for p in &parsed {
            *keys.entry(p.attr_key.as_str()).or_insert(0usize) += 1;
            let counts = words.entry(p.attr_key.as_str()).or_default();
            for w in tokenize(&p.attr_value) {
                *counts.entry(w).or_insert(0) += 1;
            }
            *factors.entry(p.factor).or_insert(0usize) += 1;
        }
        let characteristics: Vec<String> = top_slots(&keys, TOP_SLOTS)
            .into_iter()
            .map(|k| format!("{k}: {}", top_slots(&words[k], CHARACTERISTIC_WORDS).join(" ")))
            .collect();
        let ranked_factors = top_slots(&factors, TOP_SLOTS);

        let total = parsed.len() as f64;
        let rules: Vec<GuideRule> = ranked_factors
            .iter()
            .enumerate()
            .filter(|(rank, f)| *rank == 0 || factors[*f] as f64 / total >= RULE_SHARE)
            .map(|(_, &f)| {
                let samples: Vec<(f64, bool)> = parsed
                    .iter()
                    .filter(|p| p.factor == f)
                    .map(|p| (p.value, p.purchased))
                    .collect();
                fit_rule(f, &samples)
            })
            .collect();

        Ok(PolicyText {
            user_characteristics: characteristics.join("; "),
            key_decision_factors: ranked_factors.iter().map(|f| f.name().to_owned()).collect(),
            decision_guide: format!(
                "purchase only if {}",
                rules.iter().map(ToString::to_string).collect::<Vec<_>>().join(" and ")
            ),
        })
    }

    fn decide(&self, scene: &Scene, instruction: &PolicyText, _seed: u64) -> Result<u8> {
        let rules = parse_guide(&instruction.decision_guide)?;
        let held = rules.iter().map(|r| r.holds(scene)).collect::<Result<Vec<bool>>>()?;
        let purchase = if OR_RE.is_match(&instruction.decision_guide) {
            held.iter().any(|&h| h)
        } else {
            held.iter().all(|&h| h)
        };
        Ok(u8::from(purchase))
    }
}
