//! HDBSCAN over Euclidean distance.
//!
//! Core distance is the distance to the `min_samples`-th nearest point,
//! counting the point itself. The mutual-reachability minimum spanning
//! tree (Prim, dense) is turned into a dendrogram where all edges of equal
//! weight merge in one step, the dendrogram is condensed with
//! `min_cluster_size`, and clusters are picked by excess of mass. The root
//! is only eligible when the hierarchy never splits.

use serde::{Deserialize, Serialize};

use super::{check_points, squared_distance};
use crate::error::{Error, Result};

pub const NOISE: i64 = -1;

/// Distances below this are treated as equal to it when converting to
/// density (lambda = 1 / distance), which keeps duplicates finite.
const MIN_DISTANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensityClusterResult {
    /// Cluster label per point, [`NOISE`] for outliers. Clusters are
    /// numbered by their smallest member index.
    pub labels: Vec<i64>,
    pub cluster_count: usize,
    pub min_cluster_size: usize,
}

impl DensityClusterResult {
    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| **l == NOISE).count()
    }

    /// Member indices of every cluster, in label order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cluster_count];
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= 0 {
                out[l as usize].push(i);
            }
        }
        out
    }
}

pub(crate) fn lambda_of(distance: f64) -> f64 {
    1.0 / distance.max(MIN_DISTANCE)
}

struct Node {
    size: usize,
    level: f64,
    children: Vec<usize>,
}

struct Cluster {
    node: usize,
    birth: f64,
    stability: f64,
    children: Vec<usize>,
}

pub fn hdbscan(points: &[Vec<f64>], min_cluster_size: usize, min_samples: usize) -> Result<DensityClusterResult> {
    check_points(points)?;
    if min_cluster_size < 2 {
        return Err(Error::Precondition(format!(
            "min_cluster_size must be at least 2, got {min_cluster_size}"
        )));
    }
    if min_samples == 0 {
        return Err(Error::Precondition("min_samples must be at least 1".into()));
    }
    let n = points.len();
    let all_noise = DensityClusterResult {
        labels: vec![NOISE; n],
        cluster_count: 0,
        min_cluster_size,
    };
    if n < min_cluster_size {
        return Ok(all_noise);
    }

    let dist = distance_matrix(points);
    let core = core_distances(&dist, n, min_samples);
    let edges = prim_mst(&dist, &core, n);
    let nodes = dendrogram(n, edges);
    let root = nodes.len() - 1;

    let clusters = condense(&nodes, root, min_cluster_size);
    let selected = select_clusters(&clusters);

    let mut groups: Vec<Vec<usize>> = selected
        .iter()
        .map(|&c| {
            let mut pts = leaves(&nodes, clusters[c].node);
            pts.sort_unstable();
            pts
        })
        .collect();
    groups.sort_by_key(|g| g[0]);
    let mut labels = vec![NOISE; n];
    for (label, group) in groups.iter().enumerate() {
        for &p in group {
            labels[p] = label as i64;
        }
    }
    Ok(DensityClusterResult {
        labels,
        cluster_count: groups.len(),
        min_cluster_size,
    })
}

fn distance_matrix(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = squared_distance(&points[i], &points[j]).sqrt();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

fn core_distances(dist: &[f64], n: usize, min_samples: usize) -> Vec<f64> {
    let k = min_samples.min(n) - 1;
    (0..n)
        .map(|i| {
            let mut row = dist[i * n..(i + 1) * n].to_vec();
            let (_, kth, _) = row.select_nth_unstable_by(k, f64::total_cmp);
            *kth
        })
        .collect()
}

/// Dense Prim over mutual-reachability weights. Returns `(a, b, weight)`.
fn prim_mst(dist: &[f64], core: &[f64], n: usize) -> Vec<(usize, usize, f64)> {
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let w = dist[current * n + j].max(core[current]).max(core[j]);
            if w < best[j] {
                best[j] = w;
                parent[j] = current;
            }
        }
        let mut next = usize::MAX;
        let mut next_w = f64::INFINITY;
        for j in 0..n {
            if !in_tree[j] && (next == usize::MAX || best[j] < next_w) {
                next = j;
                next_w = best[j];
            }
        }
        in_tree[next] = true;
        edges.push((parent[next], next, next_w));
        current = next;
    }
    edges
}

fn find(uf: &mut [usize], mut x: usize) -> usize {
    while uf[x] != x {
        uf[x] = uf[uf[x]];
        x = uf[x];
    }
    x
}

/// Bottom-up dendrogram; nodes `0..n` are points, the last node is the root.
fn dendrogram(n: usize, mut edges: Vec<(usize, usize, f64)>) -> Vec<Node> {
    edges.sort_by(|a, b| a.2.total_cmp(&b.2));
    let mut nodes: Vec<Node> = (0..n)
        .map(|_| Node {
            size: 1,
            level: 0.0,
            children: Vec::new(),
        })
        .collect();
    let mut uf: Vec<usize> = (0..n).collect();
    let mut comp_node: Vec<usize> = (0..n).collect();

    let mut start = 0;
    while start < edges.len() {
        let level = edges[start].2;
        let mut end = start;
        while end < edges.len() && edges[end].2 == level {
            end += 1;
        }
        let group = &edges[start..end];
        // Components as they were before this level.
        let before: Vec<(usize, usize)> = group
            .iter()
            .flat_map(|&(a, b, _)| [a, b])
            .map(|p| {
                let r = find(&mut uf, p);
                (r, comp_node[r])
            })
            .collect();
        for &(a, b, _) in group {
            let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
            if ra != rb {
                uf[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut merged: Vec<(usize, Vec<usize>)> = Vec::new();
        for (old_root, old_node) in before {
            let new_root = find(&mut uf, old_root);
            match merged.iter_mut().find(|(r, _)| *r == new_root) {
                Some((_, kids)) => {
                    if !kids.contains(&old_node) {
                        kids.push(old_node);
                    }
                }
                None => merged.push((new_root, vec![old_node])),
            }
        }
        for (root, mut kids) in merged {
            kids.sort_unstable();
            let size = kids.iter().map(|&k| nodes[k].size).sum();
            nodes.push(Node { size, level, children: kids });
            comp_node[root] = nodes.len() - 1;
        }
        start = end;
    }
    nodes
}

fn condense(nodes: &[Node], root: usize, min_cluster_size: usize) -> Vec<Cluster> {
    let mut clusters = vec![Cluster {
        node: root,
        birth: 0.0,
        stability: 0.0,
        children: Vec::new(),
    }];
    let mut stack = vec![0usize];
    while let Some(c) = stack.pop() {
        let birth = clusters[c].birth;
        let mut v = clusters[c].node;
        loop {
            let lambda = lambda_of(nodes[v].level);
            let (big, small): (Vec<usize>, Vec<usize>) = nodes[v]
                .children
                .iter()
                .partition(|&&k| nodes[k].size >= min_cluster_size);
            for &k in &small {
                clusters[c].stability += nodes[k].size as f64 * (lambda - birth);
            }
            match big.len() {
                0 => break,
                1 => v = big[0],
                _ => {
                    for &k in &big {
                        clusters[c].stability += nodes[k].size as f64 * (lambda - birth);
                        clusters.push(Cluster {
                            node: k,
                            birth: lambda,
                            stability: 0.0,
                            children: Vec::new(),
                        });
                        let id = clusters.len() - 1;
                        clusters[c].children.push(id);
                        stack.push(id);
                    }
                    break;
                }
            }
        }
    }
    clusters
}

/// Excess-of-mass selection. Cluster 0 is the root.
fn select_clusters(clusters: &[Cluster]) -> Vec<usize> {
    if clusters[0].children.is_empty() {
        return vec![0];
    }
    let mut score = vec![0.0; clusters.len()];
    let mut selected = vec![false; clusters.len()];
    // Children always have larger ids than their parent.
    for c in (1..clusters.len()).rev() {
        let child_sum: f64 = clusters[c].children.iter().map(|&k| score[k]).sum();
        if clusters[c].children.is_empty() || child_sum <= clusters[c].stability {
            score[c] = clusters[c].stability;
            selected[c] = true;
            let mut stack = clusters[c].children.clone();
            while let Some(k) = stack.pop() {
                selected[k] = false;
                stack.extend(clusters[k].children.iter().copied());
            }
        } else {
            score[c] = child_sum;
        }
    }
    (1..clusters.len()).filter(|&c| selected[c]).collect()
}

fn leaves(nodes: &[Node], start: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(nodes[start].size);
    let mut stack = vec![start];
    while let Some(v) = stack.pop() {
        if nodes[v].children.is_empty() {
            out.push(v);
        } else {
            stack.extend(nodes[v].children.iter().copied());
        }
    }
    out
}
