//! Synthetic ground-truth world: latent personas and logistic purchase
//! policies, merchants with optional strategy shifts, trajectories, visitor
//! logs and closed-form group rates.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::LazyLock;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    apply_intervention, AttrValue, Attribute, Category, Edit, Intervention, NumericFeature, Scene, Tier, Trajectory,
    UserProfile,
};
use crate::error::{Error, Result};
use crate::fitting::sigmoid;
use crate::{io, rng};

/// Logistic purchase model: `σ(bias + w·φ(scene) + ε)`, `ε ~ N(0, noise_sd²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPolicy {
    pub name: String,
    /// Words of which one always appears in a member's stated priority.
    pub anchors: Vec<String>,
    /// Words sampled into a member's stated priority.
    pub fillers: Vec<String>,
    pub bias: f64,
    pub price: f64,
    pub rating: f64,
    pub promotion: f64,
    /// Affinity per category, in `Category::ALL` order.
    pub category: [f64; 5],
    #[serde(default)]
    pub extra: Vec<NumericFeature>,
    pub noise_sd: f64,
}

impl LatentPolicy {
    pub fn logit(&self, scene: &Scene) -> f64 {
        let promo = if scene.has_promotion() { 1.0 } else { 0.0 };
        self.bias
            + self.price * scene.price_tier
            + self.rating * scene.rating
            + self.promotion * promo
            + self.category[scene.category.index()]
            + self.extra.iter().map(|w| w.value * scene.extra(&w.key).unwrap_or(0.0)).sum::<f64>()
    }

    /// Expected purchase probability, integrating the noise term.
    pub fn rate(&self, scene: &Scene) -> f64 {
        expected_sigmoid(self.logit(scene), self.noise_sd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaSpec {
    pub name: String,
    /// Persona-wide text attributes shown in every member's profile.
    pub traits: BTreeMap<String, String>,
    pub age_range: (f64, f64),
    pub policies: Vec<LatentPolicy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub personas: Vec<PersonaSpec>,
    /// Merchants per tier (Head, Mid, Tail); categories cycle.
    pub tier_counts: [usize; 3],
    /// Relative traffic per merchant of each tier.
    pub tier_traffic: [f64; 3],
    pub users: usize,
    pub trajectories: usize,
    pub seed: u64,
    /// Visitor share of a merchant's home persona.
    pub home_affinity: f64,
    /// Filler words per stated priority.
    pub phrase_fillers: usize,
    /// Share of merchants that change strategy at `shift_point`.
    pub shift_fraction: f64,
    /// Position in the trajectory sequence (as a fraction) of the shift.
    pub shift_point: f64,
    pub visitors_per_merchant: usize,
    /// Probability that a session compared only one merchant.
    pub single_compare_rate: f64,
    pub terminal_rate: f64,
    pub start_timestamp: i64,
}

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|w| (*w).to_owned()).collect()
}

fn traits(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| ((*k).to_owned(), (*v).to_owned())).collect()
}

fn convenience(w: f64) -> Vec<NumericFeature> {
    vec![NumericFeature {
        key: "convenience".into(),
        value: w,
    }]
}

impl Default for WorldConfig {
    fn default() -> Self {
        let policy = |name: &str, anchors: &[&str], fillers: &[&str]| LatentPolicy {
            name: name.into(),
            anchors: words(anchors),
            fillers: words(fillers),
            bias: 0.0,
            price: 0.0,
            rating: 0.0,
            promotion: 0.0,
            category: [0.0; 5],
            extra: vec![],
            noise_sd: 0.3,
        };
        // Both policies of a persona share its primary factor and differ in
        // threshold and secondary effects.
        let student = PersonaSpec {
            name: "student".into(),
            traits: traits(&[
                ("occupation", "university undergraduate"),
                ("lifestyle", "campus dormitory late night"),
            ]),
            age_range: (18.0, 25.0),
            policies: vec![
                LatentPolicy {
                    bias: 48.0,
                    price: -2.0,
                    promotion: 1.0,
                    ..policy("student-budget", &["cheap", "budget"], &["frugal", "thrifty", "saver", "careful", "modest"])
                },
                LatentPolicy {
                    bias: 52.8,
                    price: -1.6,
                    extra: convenience(2.0),
                    ..policy("student-practical", &["affordable", "afford"], &["practical", "sensible", "efficient", "routine", "steady"])
                },
            ],
        };
        let office = PersonaSpec {
            name: "office worker".into(),
            traits: traits(&[
                ("occupation", "software engineer downtown"),
                ("lifestyle", "busy weekday lunch breaks"),
            ]),
            age_range: (26.0, 45.0),
            policies: vec![
                LatentPolicy {
                    bias: -103.2,
                    rating: 24.0,
                    category: [0.0, 0.0, 0.6, 0.0, 0.0],
                    ..policy("office-quality", &["quality", "reputation"], &["refined", "discerning", "critic", "gourmet", "picky"])
                },
                LatentPolicy {
                    bias: -77.0,
                    price: -0.04,
                    rating: 20.0,
                    category: [0.0, 0.0, 0.0, 1.0, 0.6],
                    ..policy("office-trusted", &["reviews", "stars"], &["trusted", "reliable", "safe", "proven", "wholesome"])
                },
            ],
        };
        let family = PersonaSpec {
            name: "family".into(),
            traits: traits(&[
                ("occupation", "parent of young children"),
                ("lifestyle", "weekend household dinners"),
            ]),
            age_range: (30.0, 55.0),
            policies: vec![
                LatentPolicy {
                    bias: -6.0,
                    price: -0.04,
                    promotion: 10.0,
                    category: [0.0, 0.6, 0.0, 0.0, 0.0],
                    ..policy("family-coupon", &["coupon", "voucher"], &["bargain", "savvy", "clipper", "flash", "limited"])
                },
                LatentPolicy {
                    bias: -11.0,
                    rating: 1.0,
                    promotion: 9.0,
                    ..policy("family-deal", &["deals", "discount"], &["celebration", "festive", "sharing", "generous", "hearty"])
                },
            ],
        };
        WorldConfig {
            personas: vec![student, office, family],
            tier_counts: [4, 8, 8],
            tier_traffic: [3.0, 1.5, 0.6],
            users: 2000,
            trajectories: 20_000,
            seed: 0,
            home_affinity: 0.4,
            phrase_fillers: 2,
            shift_fraction: 0.5,
            shift_point: 0.2,
            visitors_per_merchant: 200,
            single_compare_rate: 0.2,
            terminal_rate: 0.8,
            start_timestamp: 1_700_000_000,
        }
    }
}

impl WorldConfig {
    /// Two personas, each split into a price-averse and a price-seeking
    /// policy with otherwise similar profiles.
    pub fn duality() -> Self {
        let base = WorldConfig::default();
        let averse = |name: &str, anchors: &[&str], fillers: &[&str], threshold: f64| LatentPolicy {
            name: name.into(),
            anchors: words(anchors),
            fillers: words(fillers),
            bias: 0.2 * threshold,
            price: -0.2,
            rating: 0.0,
            promotion: 0.0,
            category: [0.0; 5],
            extra: vec![],
            noise_sd: 0.5,
        };
        let seeking = |name: &str, anchors: &[&str], fillers: &[&str], threshold: f64| LatentPolicy {
            bias: -0.2 * threshold,
            price: 0.2,
            ..averse(name, anchors, fillers, threshold)
        };
        WorldConfig {
            personas: vec![
                PersonaSpec {
                    policies: vec![
                        averse("student-averse", &["cheap", "budget", "savings", "inexpensive", "thrifty"], &["frugal", "saver", "careful", "modest", "humble"], 28.0),
                        seeking("student-seeking", &["premium", "pricey", "splurge", "highend", "costly"], &["lavish", "indulgent", "flashy", "fancy", "treat"], 32.0),
                    ],
                    ..base.personas[0].clone()
                },
                PersonaSpec {
                    policies: vec![
                        averse("office-averse", &["affordable", "afford", "cost", "economical", "lowcost"], &["practical", "sensible", "efficient", "routine", "steady"], 34.0),
                        seeking("office-seeking", &["expensive", "spend", "luxury", "upmarket", "exclusive"], &["upscale", "elegant", "polished", "classy", "refined"], 26.0),
                    ],
                    ..base.personas[1].clone()
                },
            ],
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvariantViolation(m.to_owned()));
        if self.personas.is_empty() || self.personas.iter().any(|p| p.policies.is_empty()) {
            return bad("every world needs at least one persona and one policy per persona");
        }
        if self.tier_counts.iter().sum::<usize>() == 0 || self.users == 0 || self.trajectories == 0 {
            return bad("merchant, user and trajectory counts must be at least 1");
        }
        if self.tier_traffic.iter().any(|t| !(*t > 0.0)) {
            return bad("tier traffic must be positive");
        }
        for p in self.personas.iter().flat_map(|p| &p.policies) {
            if p.anchors.is_empty() || !(p.noise_sd >= 0.0) || p.fillers.len() < self.phrase_fillers {
                return bad("policy needs anchors, enough fillers and a non-negative noise_sd");
            }
        }
        for f in [self.home_affinity, self.shift_fraction, self.shift_point, self.single_compare_rate, self.terminal_rate] {
            if !(0.0..=1.0).contains(&f) {
                return bad("fractions must lie in [0, 1]");
            }
        }
        Ok(())
    }

    pub fn merchant_count(&self) -> usize {
        self.tier_counts.iter().sum()
    }

    /// Latent policies flattened persona by persona.
    pub fn flat_policies(&self) -> Vec<(usize, &LatentPolicy)> {
        self.personas
            .iter()
            .enumerate()
            .flat_map(|(g, p)| p.policies.iter().map(move |l| (g, l)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MerchantTruth {
    pub merchant_id: String,
    pub base_scene: Scene,
    /// Strategy adopted at the shift point; identity when unchanged.
    pub shift: Intervention,
    pub shifted_scene: Scene,
    pub home_persona: usize,
    /// Visitor share of every flattened policy.
    pub mixture: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTruth {
    pub user_id: String,
    pub persona: usize,
    /// Index into the flattened policy list.
    pub policy: usize,
}

/// Ground truth of a generated world. Test-only: the pipeline never reads it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTruth {
    pub config: WorldConfig,
    pub policies: Vec<LatentPolicy>,
    pub policy_persona: Vec<usize>,
    pub merchants: Vec<MerchantTruth>,
    pub users: Vec<UserTruth>,
    /// Index of the first trajectory generated after the strategy shift.
    pub shift_index: usize,
}

impl LatentTruth {
    pub fn merchant(&self, merchant_id: &str) -> Result<&MerchantTruth> {
        self.merchants
            .iter()
            .find(|m| m.merchant_id == merchant_id)
            .ok_or_else(|| Error::UnknownScene(merchant_id.to_owned()))
    }

    /// Closed-form rate of a merchant's own visitors on `scene`.
    pub fn merchant_rate(&self, scene: &Scene) -> Result<f64> {
        let m = self.merchant(&scene.merchant_id)?;
        oracle_rate(self, scene, &Intervention::identity(), &m.mixture)
    }

    /// Latent policy shares among `user_ids`, repeats counted.
    pub fn visitor_mixture(&self, user_ids: &[String]) -> Result<Vec<f64>> {
        if user_ids.is_empty() {
            return Err(Error::EmptyInput("visitor ids"));
        }
        let policy: HashMap<&str, usize> = self.users.iter().map(|u| (u.user_id.as_str(), u.policy)).collect();
        let mut counts = vec![0usize; self.policies.len()];
        for id in user_ids {
            let p = policy
                .get(id.as_str())
                .ok_or_else(|| Error::Precondition(format!("user `{id}` is not part of the world")))?;
            counts[*p] += 1;
        }
        Ok(counts.iter().map(|&c| c as f64 / user_ids.len() as f64).collect())
    }

    /// Closed-form rate of the given visitors on `scene`.
    pub fn visitor_rate(&self, scene: &Scene, user_ids: &[String]) -> Result<f64> {
        self.merchant(&scene.merchant_id)?;
        oracle_rate(self, scene, &Intervention::identity(), &self.visitor_mixture(user_ids)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitorLog {
    pub merchant_id: String,
    pub visitors: Vec<UserProfile>,
}

#[derive(Debug, Clone)]
pub struct World {
    pub trajectories: Vec<Trajectory>,
    pub visitor_logs: Vec<VisitorLog>,
    pub truth: LatentTruth,
}

impl World {
    /// Writes `trajectories.jsonl`, `visitors.jsonl` and `latent_truth.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        io::write_jsonl(&dir.join("trajectories.jsonl"), &self.trajectories)?;
        io::write_jsonl(&dir.join("visitors.jsonl"), &self.visitor_logs)?;
        io::write_json(&dir.join("latent_truth.json"), &self.truth)
    }
}

const TASTES: [&str; 5] = ["spicy", "mild", "sweet", "savory", "sour"];

struct Users {
    profiles: Vec<UserProfile>,
    by_policy: Vec<Vec<usize>>,
    truth: Vec<UserTruth>,
}

fn make_users(cfg: &WorldConfig, policy_persona: &[usize], r: &mut ChaCha8Rng) -> Result<Users> {
    let flat = cfg.flat_policies();
    let mut profiles = Vec::with_capacity(cfg.users);
    let mut by_policy = vec![Vec::new(); flat.len()];
    let mut truth = Vec::with_capacity(cfg.users);
    for u in 0..cfg.users {
        // Round-robin keeps every policy populated once users >= policies.
        let policy = if u < flat.len() { u } else { r.random_range(0..flat.len()) };
        let persona_id = policy_persona[policy];
        let persona = &cfg.personas[persona_id];
        let latent = flat[policy].1;
        let anchor = latent.anchors.choose(r).expect("validated non-empty").clone();
        let mut picked: Vec<usize> = rand::seq::index::sample(r, latent.fillers.len(), cfg.phrase_fillers).into_vec();
        picked.sort_unstable();
        let mut phrase = vec![anchor];
        phrase.extend(picked.into_iter().map(|i| latent.fillers[i].clone()));
        let age = (r.random_range(persona.age_range.0..=persona.age_range.1)).round();
        let mut attrs = vec![
            Attribute {
                key: "segment".into(),
                value: AttrValue::Text(persona.name.clone()),
            },
            Attribute {
                key: "priority".into(),
                value: AttrValue::Text(phrase.join(" ")),
            },
            Attribute {
                key: "taste".into(),
                value: AttrValue::Text((*TASTES.choose(r).expect("non-empty")).to_owned()),
            },
            Attribute {
                key: "district".into(),
                value: AttrValue::Text(format!("d{}", r.random_range(0..10))),
            },
            Attribute {
                key: "age".into(),
                value: AttrValue::Number(age),
            },
        ];
        attrs.extend(persona.traits.iter().map(|(k, v)| Attribute {
            key: k.clone(),
            value: AttrValue::Text(v.clone()),
        }));
        let user_id = format!("u{u:05}");
        profiles.push(UserProfile::new(user_id.clone(), attrs)?);
        by_policy[policy].push(u);
        truth.push(UserTruth {
            user_id,
            persona: persona_id,
            policy,
        });
    }
    Ok(Users {
        profiles,
        by_policy,
        truth,
    })
}

fn make_merchants(cfg: &WorldConfig, policy_persona: &[usize], r: &mut ChaCha8Rng) -> Result<Vec<MerchantTruth>> {
    let g = cfg.personas.len();
    let mut merchants = Vec::new();
    let mut index = 0;
    for (t, &count) in cfg.tier_counts.iter().enumerate() {
        for _ in 0..count {
            let promotion = r.random_bool(0.4).then(|| "10% off".to_owned());
            let scene = Scene {
                merchant_id: format!("m{index:02}"),
                category: Category::ALL[index % Category::ALL.len()],
                tier: Tier::ALL[t],
                price_tier: (r.random_range(12.0..55.0f64) * 2.0).round() / 2.0,
                rating: (r.random_range(3.3..4.9f64) * 10.0).round() / 10.0,
                promotion,
                extra_features: vec![NumericFeature {
                    key: "convenience".into(),
                    value: (r.random_range(0.0..1.0f64) * 100.0).round() / 100.0,
                }],
            };
            let home = index % g;
            let mut persona_share = vec![if g > 1 { (1.0 - cfg.home_affinity) / (g - 1) as f64 } else { 1.0 }; g];
            persona_share[home] = if g > 1 { cfg.home_affinity } else { 1.0 };
            let mixture = policy_persona
                .iter()
                .map(|&p| persona_share[p] / cfg.personas[p].policies.len() as f64)
                .collect();
            merchants.push(MerchantTruth {
                merchant_id: scene.merchant_id.clone(),
                shifted_scene: scene.clone(),
                base_scene: scene,
                shift: Intervention::identity(),
                home_persona: home,
                mixture,
            });
            index += 1;
        }
    }

    let mut order: Vec<usize> = (0..merchants.len()).collect();
    order.shuffle(r);
    let shifted = (cfg.shift_fraction * merchants.len() as f64).round() as usize;
    let mut chosen = order[..shifted].to_vec();
    chosen.sort_unstable();
    for i in chosen {
        let m = &mut merchants[i];
        let factor = r.random_range(0.65..1.35f64);
        let price = ((m.base_scene.price_tier * factor) * 2.0).round() / 2.0;
        let mut edits = vec![Edit::new("price_tier", price.max(1.0))];
        if r.random_bool(0.5) {
            let promo = if m.base_scene.has_promotion() {
                serde_json::Value::Null
            } else {
                serde_json::Value::from("15% off")
            };
            edits.push(Edit::new("promotion", promo));
        }
        m.shift = Intervention::new("strategy shift", edits);
        m.shifted_scene = apply_intervention(&m.base_scene, &m.shift)?;
    }
    Ok(merchants)
}

fn sample_index(weights: &[f64], r: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = r.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn pick_visitor(users: &Users, policy: usize, policy_persona: &[usize], r: &mut ChaCha8Rng) -> usize {
    if let Some(&u) = users.by_policy[policy].choose(r) {
        return u;
    }
    let persona = policy_persona[policy];
    let same: Vec<usize> = users
        .truth
        .iter()
        .enumerate()
        .filter(|(_, t)| t.persona == persona)
        .map(|(i, _)| i)
        .collect();
    *same.choose(r).unwrap_or(&0)
}

/// Generates a world. Fully determined by `cfg` (including its seed).
pub fn generate(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let flat = cfg.flat_policies();
    let policy_persona: Vec<usize> = flat.iter().map(|(g, _)| *g).collect();
    let policies: Vec<LatentPolicy> = flat.iter().map(|(_, p)| (*p).clone()).collect();

    let users = make_users(cfg, &policy_persona, &mut rng::stream(cfg.seed, 1))?;
    let merchants = make_merchants(cfg, &policy_persona, &mut rng::stream(cfg.seed, 2))?;

    let traffic: Vec<f64> = merchants
        .iter()
        .map(|m| cfg.tier_traffic[m.base_scene.tier.index()])
        .collect();
    let shift_index = (cfg.shift_point * cfg.trajectories as f64).ceil() as usize;
    let mut r = rng::stream(cfg.seed, 3);
    let mut trajectories = Vec::with_capacity(cfg.trajectories);
    let mut timestamp = cfg.start_timestamp;
    for i in 0..cfg.trajectories {
        let m = &merchants[sample_index(&traffic, &mut r)];
        let policy = sample_index(&m.mixture, &mut r);
        let u = pick_visitor(&users, policy, &policy_persona, &mut r);
        let latent = &policies[users.truth[u].policy];
        let scene = if i >= shift_index { &m.shifted_scene } else { &m.base_scene };
        let eps = if latent.noise_sd > 0.0 {
            Normal::new(0.0, latent.noise_sd).expect("finite sd").sample(&mut r)
        } else {
            0.0
        };
        let p = sigmoid(latent.logit(scene) + eps);
        let outcome = u8::from(r.random::<f64>() < p);
        let compared_merchants = if r.random_bool(cfg.single_compare_rate) {
            1
        } else {
            r.random_range(2..=5)
        };
        let session_terminal = r.random_bool(cfg.terminal_rate);
        timestamp += r.random_range(1..=60);
        trajectories.push(Trajectory {
            user: users.profiles[u].clone(),
            scene: scene.clone(),
            outcome,
            timestamp,
            compared_merchants,
            session_terminal,
        });
    }

    let mut vr = rng::stream(cfg.seed, 4);
    let visitor_logs = merchants
        .iter()
        .map(|m| VisitorLog {
            merchant_id: m.merchant_id.clone(),
            visitors: (0..cfg.visitors_per_merchant)
                .map(|_| {
                    let policy = sample_index(&m.mixture, &mut vr);
                    users.profiles[pick_visitor(&users, policy, &policy_persona, &mut vr)].clone()
                })
                .collect(),
        })
        .collect();

    Ok(World {
        trajectories,
        visitor_logs,
        truth: LatentTruth {
            config: cfg.clone(),
            policies,
            policy_persona,
            merchants,
            users: users.truth,
            shift_index,
        },
    })
}

const HERMITE_NODES: usize = 128;

/// Gauss-Hermite nodes and weights for `∫ exp(-x²) f(x) dx`.
static HERMITE: LazyLock<(Vec<f64>, Vec<f64>)> = LazyLock::new(|| gauss_hermite(HERMITE_NODES));

/// Newton iteration on the orthonormal Hermite recurrence.
fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-14 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `E[σ(mu + sd·Z)]` for standard normal `Z`.
pub fn expected_sigmoid(mu: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return sigmoid(mu);
    }
    let (x, w) = &*HERMITE;
    let s: f64 = x
        .iter()
        .zip(w)
        .map(|(&xi, &wi)| wi * sigmoid(mu + std::f64::consts::SQRT_2 * sd * xi))
        .sum();
    s / std::f64::consts::PI.sqrt()
}

/// Group purchase rate on the intervened scene under a policy mixture.
pub fn oracle_rate(truth: &LatentTruth, scene: &Scene, intervention: &Intervention, mixture: &[f64]) -> Result<f64> {
    truth.merchant(&scene.merchant_id)?;
    if mixture.len() != truth.policies.len() {
        return Err(Error::LengthMismatch(mixture.len(), truth.policies.len()));
    }
    let s = apply_intervention(scene, intervention)?;
    let total: f64 = mixture.iter().sum();
    let rate: f64 = truth
        .policies
        .iter()
        .zip(mixture)
        .filter(|(_, &pi)| pi > 0.0)
        .map(|(p, &pi)| pi * p.rate(&s))
        .sum();
    Ok((rate / total).clamp(0.0, 1.0))
}
