use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::FeatureVector;
use crate::error::{Error, Result};

pub const PROB_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostingConfig {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// L2 damping added to every hessian sum.
    pub l2: f64,
    /// Minimum hessian sum on each side of a split.
    pub min_child_weight: f64,
    pub seed: u64,
}

impl Default for BoostingConfig {
    fn default() -> Self {
        BoostingConfig {
            rounds: 200,
            learning_rate: 0.1,
            max_depth: 3,
            l2: 1.0,
            min_child_weight: 1.0,
            seed: 0,
        }
    }
}

impl BoostingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvariantViolation("learning_rate must be in (0, 1]".into()));
        }
        if !(self.l2 >= 0.0 && self.min_child_weight >= 0.0) {
            return Err(Error::InvariantViolation("l2 and min_child_weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// Row-major training set sharing one feature layout.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    rows: Vec<Vec<f64>>,
    labels: Vec<u8>,
    fingerprint: String,
}

impl Dataset {
    pub fn new(fingerprint: impl Into<String>) -> Self {
        Dataset {
            rows: Vec::new(),
            labels: Vec::new(),
            fingerprint: fingerprint.into(),
        }
    }

    pub fn from_rows(fingerprint: impl Into<String>, rows: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::LengthMismatch(rows.len(), labels.len()));
        }
        let mut d = Dataset::new(fingerprint);
        for (row, y) in rows.into_iter().zip(labels) {
            d.push_row(row, y)?;
        }
        Ok(d)
    }

    pub fn push(&mut self, x: FeatureVector, y: u8) -> Result<()> {
        if x.fingerprint != self.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.fingerprint.clone(),
                actual: x.fingerprint,
            });
        }
        self.push_row(x.values, y)
    }

    fn push_row(&mut self, row: Vec<f64>, y: u8) -> Result<()> {
        if y > 1 {
            return Err(Error::InvariantViolation(format!("label {y} is not binary")));
        }
        if let Some(first) = self.rows.first() {
            if first.len() != row.len() {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    actual: row.len(),
                });
            }
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvariantViolation("non-finite feature".into()));
        }
        self.rows.push(row);
        self.labels.push(y);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }
}

/// Tree node; `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        leaf: f64,
    },
}

/// Flat node array, root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn output(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { leaf } => return leaf,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub base_rate: f64,
    pub initial_score: f64,
    pub learning_rate: f64,
    /// Equals `trees.len()`.
    pub rounds: usize,
    pub max_depth: usize,
    pub l2: f64,
    pub seed: u64,
    pub feature_fingerprint: String,
    pub feature_count: usize,
    pub trees: Vec<Tree>,
    /// Mean training log-loss before the first tree and after each tree.
    pub train_loss: Vec<f64>,
}

impl BoostedModel {
    pub fn raw_score(&self, x: &[f64]) -> f64 {
        self.initial_score + self.learning_rate * self.trees.iter().map(|t| t.output(x)).sum::<f64>()
    }

    /// Clamped probability for a raw feature row.
    pub fn predict_values(&self, x: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return clamp_prob(self.base_rate);
        }
        clamp_prob(sigmoid(self.raw_score(x)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds != self.trees.len() {
            return Err(Error::InvariantViolation(format!(
                "rounds {} != {} trees",
                self.rounds,
                self.trees.len()
            )));
        }
        for tree in &self.trees {
            for node in &tree.nodes {
                match *node {
                    Node::Leaf { leaf } if !leaf.is_finite() => {
                        return Err(Error::InvariantViolation("non-finite leaf".into()))
                    }
                    Node::Split { feature, left, right, .. }
                        if feature >= self.feature_count || left >= tree.nodes.len() || right >= tree.nodes.len() =>
                    {
                        return Err(Error::InvariantViolation("dangling split".into()))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Mean binary cross-entropy with probabilities clamped away from 0 and 1.
pub fn log_loss(labels: &[u8], probs: &[f64]) -> f64 {
    let total: f64 = labels
        .iter()
        .zip(probs)
        .map(|(&y, &p)| {
            let p = clamp_prob(p);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / labels.len() as f64
}

pub fn predict(model: &BoostedModel, x: &FeatureVector) -> Result<f64> {
    if x.fingerprint != model.feature_fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: model.feature_fingerprint.clone(),
            actual: x.fingerprint.clone(),
        });
    }
    if x.values.len() != model.feature_count {
        return Err(Error::DimensionMismatch {
            expected: model.feature_count,
            actual: x.values.len(),
        });
    }
    Ok(model.predict_values(&x.values))
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Per-node running sums while scanning one sorted column.
#[derive(Clone, Copy, Default)]
struct Scan {
    g: f64,
    h: f64,
    count: usize,
    last: f64,
}

/// Gradient boosting on logistic loss with exact greedy, level-wise trees.
pub fn train(data: &Dataset, cfg: &BoostingConfig) -> Result<BoostedModel> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = data.len();
    let f = data.rows[0].len();
    let labels: Vec<f64> = data.labels.iter().map(|&y| f64::from(y)).collect();
    let base_rate = labels.iter().sum::<f64>() / n as f64;
    let initial_score = {
        let p = clamp_prob(base_rate);
        (p / (1.0 - p)).ln()
    };
    let mut model = BoostedModel {
        base_rate,
        initial_score,
        learning_rate: cfg.learning_rate,
        rounds: 0,
        max_depth: cfg.max_depth,
        l2: cfg.l2,
        seed: cfg.seed,
        feature_fingerprint: data.fingerprint.clone(),
        feature_count: f,
        trees: Vec::new(),
        train_loss: Vec::new(),
    };
    let mut scores = vec![initial_score; n];
    model.train_loss.push(loss_of(&data.labels, &scores));
    let single_label = data.labels.iter().all(|&y| y == data.labels[0]);
    if single_label || cfg.rounds == 0 {
        return Ok(model);
    }

    let columns: Vec<Vec<f64>> = (0..f).map(|j| data.rows.iter().map(|r| r[j]).collect()).collect();
    let order: Vec<Vec<u32>> = columns
        .par_iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            idx
        })
        .collect();

    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..cfg.rounds {
        for i in 0..n {
            let p = sigmoid(scores[i]);
            grad[i] = labels[i] - p;
            hess[i] = p * (1.0 - p);
        }
        let (tree, node_of) = grow_tree(&columns, &order, &grad, &hess, cfg);
        for i in 0..n {
            if let Node::Leaf { leaf } = tree.nodes[node_of[i]] {
                scores[i] += cfg.learning_rate * leaf;
            }
        }
        model.trees.push(tree);
        model.train_loss.push(loss_of(&data.labels, &scores));
    }
    model.rounds = model.trees.len();
    Ok(model)
}

fn loss_of(labels: &[u8], scores: &[f64]) -> f64 {
    let probs: Vec<f64> = scores.iter().map(|&s| sigmoid(s)).collect();
    log_loss(labels, &probs)
}

/// Grows one tree; also returns each sample's leaf index.
fn grow_tree(
    columns: &[Vec<f64>],
    order: &[Vec<u32>],
    grad: &[f64],
    hess: &[f64],
    cfg: &BoostingConfig,
) -> (Tree, Vec<usize>) {
    let n = grad.len();
    let mut nodes = vec![Node::Leaf { leaf: 0.0 }];
    let mut node_of = vec![0usize; n];
    let mut sums = vec![(grad.iter().sum::<f64>(), hess.iter().sum::<f64>())];
    let mut frontier = vec![0usize];

    for _ in 0..cfg.max_depth {
        if frontier.is_empty() {
            break;
        }
        // Dense slot per frontier node.
        let mut slot = vec![usize::MAX; nodes.len()];
        for (s, &node) in frontier.iter().enumerate() {
            slot[node] = s;
        }
        let per_feature: Vec<Vec<Option<Candidate>>> = order
            .par_iter()
            .enumerate()
            .map(|(feature, idx)| {
                let col = &columns[feature];
                let mut scan = vec![Scan::default(); frontier.len()];
                let mut best: Vec<Option<Candidate>> = vec![None; frontier.len()];
                for &i in idx {
                    let i = i as usize;
                    let s = slot[node_of[i]];
                    if s == usize::MAX {
                        continue;
                    }
                    let v = col[i];
                    let st = &mut scan[s];
                    if st.count > 0 && v > st.last {
                        let (g, h) = sums[frontier[s]];
                        let (gl, hl) = (st.g, st.h);
                        let (gr, hr) = (g - gl, h - hl);
                        if hl >= cfg.min_child_weight && hr >= cfg.min_child_weight {
                            let gain = gl * gl / (hl + cfg.l2) + gr * gr / (hr + cfg.l2) - g * g / (h + cfg.l2);
                            if best[s].is_none_or(|b| gain > b.gain) {
                                let mut threshold = st.last + (v - st.last) / 2.0;
                                if threshold >= v {
                                    threshold = st.last;
                                }
                                best[s] = Some(Candidate {
                                    gain,
                                    feature,
                                    threshold,
                                });
                            }
                        }
                    }
                    st.g += grad[i];
                    st.h += hess[i];
                    st.count += 1;
                    st.last = v;
                }
                best
            })
            .collect();

        let mut next = Vec::new();
        let mut split_of: Vec<Option<(Candidate, usize, usize)>> = vec![None; nodes.len()];
        for (s, &node) in frontier.iter().enumerate() {
            let mut best: Option<Candidate> = None;
            for cands in &per_feature {
                if let Some(c) = cands[s] {
                    if c.gain > 1e-12 && best.is_none_or(|b| c.gain > b.gain) {
                        best = Some(c);
                    }
                }
            }
            if let Some(c) = best {
                let left = nodes.len();
                nodes.push(Node::Leaf { leaf: 0.0 });
                nodes.push(Node::Leaf { leaf: 0.0 });
                sums.push((0.0, 0.0));
                sums.push((0.0, 0.0));
                nodes[node] = Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left,
                    right: left + 1,
                };
                split_of[node] = Some((c, left, left + 1));
                next.push(left);
                next.push(left + 1);
            }
        }
        for i in 0..n {
            if let Some((c, left, right)) = split_of[node_of[i]] {
                let child = if columns[c.feature][i] <= c.threshold { left } else { right };
                node_of[i] = child;
                sums[child].0 += grad[i];
                sums[child].1 += hess[i];
            }
        }
        frontier = next;
    }

    for (node, &(g, h)) in nodes.iter_mut().zip(&sums) {
        if let Node::Leaf { leaf } = node {
            *leaf = g / (h + cfg.l2);
        }
    }
    (Tree { nodes }, node_of)
}
