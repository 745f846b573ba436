//! Clustering primitives used during policy mining: K-Means for coarse
//! persona groups and HDBSCAN for density-based refinement.

mod hdbscan;
mod kmeans;
mod silhouette;

pub use hdbscan::{hdbscan, DensityClusterResult, NOISE};
pub use kmeans::{kmeans, KMeansResult};
pub use silhouette::{silhouette_score, sweep_k};

use crate::error::{Error, Result};

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let first = points.first().ok_or(Error::EmptyInput("points"))?;
    let dim = first.len();
    for p in points {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: p.len(),
            });
        }
    }
    Ok(dim)
}
