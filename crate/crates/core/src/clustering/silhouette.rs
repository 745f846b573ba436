use super::{kmeans, squared_distance};
use crate::error::Result;

/// Mean silhouette coefficient for a labelling. Points in singleton
/// clusters score 0; negative labels are ignored.
pub fn silhouette_score(points: &[Vec<f64>], labels: &[i64]) -> f64 {
    let clusters: Vec<i64> = {
        let mut c: Vec<i64> = labels.iter().copied().filter(|l| *l >= 0).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    if clusters.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for (i, p) in points.iter().enumerate() {
        let own = labels[i];
        if own < 0 {
            continue;
        }
        counted += 1;
        let mut sums = vec![(0.0, 0usize); clusters.len()];
        for (j, q) in points.iter().enumerate() {
            if i == j || labels[j] < 0 {
                continue;
            }
            let slot = clusters.binary_search(&labels[j]).unwrap_or(0);
            sums[slot].0 += squared_distance(p, q).sqrt();
            sums[slot].1 += 1;
        }
        let own_slot = clusters.binary_search(&own).unwrap_or(0);
        if sums[own_slot].1 == 0 {
            continue;
        }
        let a = sums[own_slot].0 / sums[own_slot].1 as f64;
        let b = sums
            .iter()
            .enumerate()
            .filter(|(s, (_, c))| *s != own_slot && *c > 0)
            .map(|(_, (sum, c))| sum / *c as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 && b.is_finite() {
            total += (b - a) / denom;
        }
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

/// Silhouette score of K-Means for each candidate `k`.
pub fn sweep_k(points: &[Vec<f64>], ks: &[usize], seed: u64, max_iter: usize, tol: f64) -> Result<Vec<(usize, f64)>> {
    ks.iter()
        .map(|&k| {
            let r = kmeans(points, k, seed, max_iter, tol)?;
            let labels: Vec<i64> = r.assignments.iter().map(|&a| a as i64).collect();
            Ok((k, silhouette_score(points, &labels)))
        })
        .collect()
}
