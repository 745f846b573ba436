use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use dualsim::domain::{GroupEstimate, Intervention};
use dualsim::metrics::{kendall_tau, rank_by_rate};

use crate::error::ApiError;

/// One merchant's what-if workspace. Once simulated, `results[i]` belongs
/// to `strategies[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisSession {
    pub session_id: String,
    pub merchant_id: String,
    pub strategies: Vec<Intervention>,
    pub results: Vec<GroupEstimate>,
    /// Strategy indices, best first.
    pub expert_ranking: Option<Vec<usize>>,
    /// Bumped whenever `strategies` changes.
    pub revision: u64,
}

impl DiagnosisSession {
    pub fn is_simulated(&self) -> bool {
        !self.strategies.is_empty() && self.results.len() == self.strategies.len()
    }
}

/// Sessions plus the counters that keep ids and default seeds reproducible
/// across restarts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionStore {
    pub sessions: BTreeMap<String, DiagnosisSession>,
    pub created: u64,
    pub seeds_issued: u64,
}

impl SessionStore {
    pub fn open(&mut self, merchant_id: String) -> DiagnosisSession {
        self.created += 1;
        let session = DiagnosisSession {
            session_id: format!("s{}", self.created),
            merchant_id,
            strategies: Vec::new(),
            results: Vec::new(),
            expert_ranking: None,
            revision: 0,
        };
        self.sessions.insert(session.session_id.clone(), session.clone());
        session
    }

    pub fn get(&self, id: &str) -> Result<&DiagnosisSession, ApiError> {
        self.sessions.get(id).ok_or_else(|| ApiError::UnknownSession(id.to_owned()))
    }

    pub fn get_mut(&mut self, id: &str) -> Result<&mut DiagnosisSession, ApiError> {
        self.sessions.get_mut(id).ok_or_else(|| ApiError::UnknownSession(id.to_owned()))
    }
}

/// Checks that `order` lists each of `0..n` exactly once.
pub fn validate_permutation(order: &[usize], n: usize) -> Result<(), ApiError> {
    if order.len() != n {
        return Err(ApiError::Validation(format!(
            "expert ranking has {} entries for {n} strategies",
            order.len()
        )));
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(ApiError::Validation(format!(
                "expert ranking must be a permutation of 0..{n}; offending entry {i}"
            )));
        }
    }
    Ok(())
}

/// 1-based rank of each item given an order listing items best first.
pub fn ranks_from_order(order: &[usize]) -> Vec<usize> {
    let mut ranks = vec![0; order.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = pos + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedStrategy {
    pub strategy: usize,
    pub label: String,
    pub rank: usize,
    pub hybrid_rate: f64,
    pub reason_mean: f64,
    pub fit_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub session_id: String,
    pub lambda: f64,
    /// Strategy indices by descending fused rate.
    pub order: Vec<usize>,
    pub entries: Vec<RankedStrategy>,
    pub expert_ranking: Option<Vec<usize>>,
    /// Agreement with the expert ranking; absent without one or with fewer
    /// than two strategies.
    pub kendall_tau: Option<f64>,
}

/// Ranks by the rate refused at `lambda`, or at each result's own weight.
pub fn rank(session: &DiagnosisSession, lambda: Option<f64>) -> Result<Ranking, ApiError> {
    if !session.is_simulated() {
        return Err(ApiError::IncompleteSession(format!(
            "session `{}` has {} of {} strategies simulated",
            session.session_id,
            session.results.len(),
            session.strategies.len()
        )));
    }
    if let Some(l) = lambda {
        if !(0.0..=1.0).contains(&l) {
            return Err(ApiError::Validation(format!("lambda {l} outside [0, 1]")));
        }
    }
    let rates: Vec<f64> = session
        .results
        .iter()
        .map(|r| lambda.map_or(r.hybrid_rate, |l| r.refuse(l)))
        .collect();
    let ranks = rank_by_rate(&rates);
    let mut order: Vec<usize> = (0..rates.len()).collect();
    order.sort_by_key(|&i| ranks[i]);
    let entries = order
        .iter()
        .map(|&i| RankedStrategy {
            strategy: i,
            label: session.strategies[i].label.clone(),
            rank: ranks[i],
            hybrid_rate: rates[i],
            reason_mean: session.results[i].reason_mean,
            fit_mean: session.results[i].fit_mean,
        })
        .collect();
    let kendall_tau = match &session.expert_ranking {
        Some(expert) if expert.len() >= 2 => Some(kendall_tau(&ranks, &ranks_from_order(expert))?),
        _ => None,
    };
    Ok(Ranking {
        session_id: session.session_id.clone(),
        lambda: lambda.unwrap_or(session.results[0].lambda),
        order,
        entries,
        expert_ranking: session.expert_ranking.clone(),
        kendall_tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use dualsim::domain::PolicyBreakdown;

    fn session(rates: &[f64]) -> DiagnosisSession {
        DiagnosisSession {
            session_id: "s1".into(),
            merchant_id: "m".into(),
            strategies: (0..rates.len()).map(|i| Intervention::new(format!("a{i}"), vec![])).collect(),
            results: rates
                .iter()
                .map(|&r| GroupEstimate {
                    scene_id: "m".into(),
                    intervention: String::new(),
                    hybrid_rate: r,
                    reason_mean: r,
                    fit_mean: r,
                    lambda: 0.5,
                    samples: 1,
                    seed: 0,
                    per_policy: vec![PolicyBreakdown {
                        policy: 0,
                        draws: 1,
                        reason_mean: r,
                        fit_mean: r,
                    }],
                })
                .collect(),
            expert_ranking: None,
            revision: 0,
        }
    }

    #[test]
    fn descending_rate_order() {
        let r = rank(&session(&[0.3, 0.1, 0.5]), None).unwrap();
        assert_eq!(r.order, vec![2, 0, 1]);
        assert_eq!(r.kendall_tau, None);
    }

    #[test]
    fn ties_keep_declaration_order() {
        let r = rank(&session(&[0.2, 0.4, 0.2, 0.4]), None).unwrap();
        assert_eq!(r.order, vec![1, 3, 0, 2]);
    }

    #[test]
    fn expert_agreeing_gives_tau_one() {
        let mut s = session(&[0.3, 0.1, 0.5]);
        s.expert_ranking = Some(vec![2, 0, 1]);
        assert_eq!(rank(&s, None).unwrap().kendall_tau, Some(1.0));
        s.expert_ranking = Some(vec![1, 0, 2]);
        assert_eq!(rank(&s, None).unwrap().kendall_tau, Some(-1.0));
    }

    #[test]
    fn unsimulated_session_is_incomplete() {
        let mut s = session(&[0.3, 0.1]);
        s.results.pop();
        assert!(matches!(rank(&s, None), Err(ApiError::IncompleteSession(_))));
        s.results.clear();
        s.strategies.clear();
        assert!(matches!(rank(&s, None), Err(ApiError::IncompleteSession(_))));
    }

    #[test]
    fn permutation_checks() {
        assert!(validate_permutation(&[1, 0, 2], 3).is_ok());
        assert!(validate_permutation(&[1, 1, 2], 3).is_err());
        assert!(validate_permutation(&[0, 1], 3).is_err());
        assert!(validate_permutation(&[0, 1, 3], 3).is_err());
    }

    #[test]
    fn ids_are_sequential() {
        let mut store = SessionStore::default();
        assert_eq!(store.open("a".into()).session_id, "s1");
        assert_eq!(store.open("b".into()).session_id, "s2");
    }
}
