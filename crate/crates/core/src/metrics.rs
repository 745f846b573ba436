//! Group simulation error, its spread, Kendall's tau, and breakdowns.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{Category, Tier};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MerchantRatePair {
    pub merchant_id: String,
    pub predicted_rate: f64,
    pub true_rate: f64,
    pub tier: Tier,
    pub category: Category,
}

impl MerchantRatePair {
    pub fn abs_error(&self) -> f64 {
        (self.predicted_rate - self.true_rate).abs()
    }
}

/// 100 times the mean absolute rate error.
pub fn gse(pairs: &[MerchantRatePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("rate pairs"));
    }
    Ok(100.0 * pairs.iter().map(MerchantRatePair::abs_error).sum::<f64>() / pairs.len() as f64)
}

/// 100 times the population standard deviation of absolute errors.
pub fn gse_sd(pairs: &[MerchantRatePair]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::TooFewPairs {
            needed: 2,
            got: pairs.len(),
        });
    }
    let n = pairs.len() as f64;
    let mean = pairs.iter().map(MerchantRatePair::abs_error).sum::<f64>() / n;
    let var = pairs.iter().map(|p| (p.abs_error() - mean).powi(2)).sum::<f64>() / n;
    Ok(100.0 * var.sqrt())
}

/// Plain tau on two tie-free rank vectors (item `i` has rank `a[i]`).
pub fn kendall_tau(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::TooFewPairs { needed: 2, got: n });
    }
    let mut score: i64 = 0;
    for i in 0..n {
        for j in i + 1..n {
            let s = (a[i] as i64 - a[j] as i64).signum() * (b[i] as i64 - b[j] as i64).signum();
            score += s;
        }
    }
    Ok(score as f64 / (n * (n - 1) / 2) as f64)
}

/// 1-based ranks by descending rate; equal rates keep declaration order.
pub fn rank_by_rate(rates: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rates.len()).collect();
    order.sort_by(|&x, &y| rates[y].total_cmp(&rates[x]));
    let mut ranks = vec![0; rates.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = pos + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    /// `tier` or `category`.
    pub group_by: String,
    pub group: String,
    pub merchants: usize,
    pub gse: f64,
}

/// GSE per tier then per category; empty groups are omitted.
pub fn breakdown(pairs: &[MerchantRatePair]) -> Vec<BreakdownRow> {
    let mut by_tier: BTreeMap<usize, Vec<MerchantRatePair>> = BTreeMap::new();
    let mut by_cat: BTreeMap<usize, Vec<MerchantRatePair>> = BTreeMap::new();
    for p in pairs {
        by_tier.entry(p.tier.index()).or_default().push(p.clone());
        by_cat.entry(p.category.index()).or_default().push(p.clone());
    }
    let mut rows = Vec::new();
    for (i, group) in by_tier {
        rows.push(row("tier", Tier::ALL[i].as_str(), &group));
    }
    for (i, group) in by_cat {
        rows.push(row("category", Category::ALL[i].as_str(), &group));
    }
    rows
}

fn row(group_by: &str, name: &str, group: &[MerchantRatePair]) -> BreakdownRow {
    BreakdownRow {
        group_by: group_by.into(),
        group: name.into(),
        merchants: group.len(),
        gse: gse(group).unwrap_or(0.0),
    }
}

pub fn write_breakdown_csv(path: &Path, rows: &[BreakdownRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("create {}", dir.display()), e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(format!("write {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(pred: f64, truth: f64) -> MerchantRatePair {
        MerchantRatePair {
            merchant_id: "m".into(),
            predicted_rate: pred,
            true_rate: truth,
            tier: Tier::Head,
            category: Category::Snack,
        }
    }

    #[test]
    fn gse_hand_cases() {
        assert_eq!(gse(&[pair(0.3, 0.3)]).unwrap(), 0.0);
        assert!((gse(&[pair(0.5, 0.3), pair(0.2, 0.4)]).unwrap() - 20.0).abs() < 1e-12);
        assert!(matches!(gse(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn gse_sd_hand_cases() {
        assert!(gse_sd(&[pair(0.5, 0.3), pair(0.2, 0.4)]).unwrap().abs() < 1e-12);
        assert!((gse_sd(&[pair(0.1, 0.0), pair(0.3, 0.0)]).unwrap() - 10.0).abs() < 1e-12);
        assert!(matches!(gse_sd(&[pair(0.1, 0.0)]), Err(Error::TooFewPairs { .. })));
    }

    #[test]
    fn tau_hand_cases() {
        assert_eq!(kendall_tau(&[1, 2, 3, 4], &[1, 2, 3, 4]).unwrap(), 1.0);
        assert_eq!(kendall_tau(&[1, 2, 3, 4], &[4, 3, 2, 1]).unwrap(), -1.0);
        assert!((kendall_tau(&[1, 2, 3, 4], &[1, 3, 2, 4]).unwrap() - 0.6667).abs() < 1e-4);
        assert!(matches!(kendall_tau(&[1, 2], &[1]), Err(Error::LengthMismatch(2, 1))));
    }

    #[test]
    fn ranks_break_ties_by_declaration() {
        assert_eq!(rank_by_rate(&[0.2, 0.5, 0.2, 0.9]), vec![3, 2, 4, 1]);
    }

    #[test]
    fn breakdown_single_tier_and_csv() {
        let rows = breakdown(&[pair(0.5, 0.3), pair(0.2, 0.4)]);
        assert_eq!(rows.iter().filter(|r| r.group_by == "tier").count(), 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.csv");
        write_breakdown_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("group_by,group,merchants,gse\n"));
    }
}
