//! Split-conformal thresholds and the kNN local calibrator.
//!
//! The threshold at level α over `n` scores is the `⌈(n+1)(1−α)⌉`-th
//! smallest score. When that rank exceeds `n` the calibration set is too
//! small to certify anything and the result is [`Threshold::NoGate`], which
//! orders above every finite value and masks nothing.

use std::cmp::Ordering;
use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::FeatureMatrix;
use crate::risk::RiskModel;
use crate::trajectory::TransitionSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "Option<f64>", into = "Option<f64>")]
pub enum Threshold {
    Finite(f64),
    NoGate,
}

impl Threshold {
    /// Strict gate: `p < τ`.
    pub fn admits(self, p: f64) -> bool {
        match self {
            Threshold::Finite(t) => p < t,
            Threshold::NoGate => true,
        }
    }

    pub fn masks(self, p: f64) -> bool {
        !self.admits(p)
    }

    pub fn is_no_gate(self) -> bool {
        self == Threshold::NoGate
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Threshold::Finite(t) => Some(t),
            Threshold::NoGate => None,
        }
    }
}

impl PartialOrd for Threshold {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Threshold::Finite(a), Threshold::Finite(b)) => a.partial_cmp(b),
            (Threshold::Finite(_), Threshold::NoGate) => Some(Ordering::Less),
            (Threshold::NoGate, Threshold::Finite(_)) => Some(Ordering::Greater),
            (Threshold::NoGate, Threshold::NoGate) => Some(Ordering::Equal),
        }
    }
}

impl From<Option<f64>> for Threshold {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Threshold::NoGate, Threshold::Finite)
    }
}

impl From<Threshold> for Option<f64> {
    fn from(t: Threshold) -> Self {
        t.value()
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Finite(t) => write!(f, "{t}"),
            Threshold::NoGate => f.write_str("no-gate"),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// 1-based rank `⌈(n+1)(1−α)⌉`.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    // the epsilon absorbs products such as 10·0.9 landing a hair above 9
    ((n as f64 + 1.0) * (1.0 - alpha) - 1e-9).ceil().max(1.0) as usize
}

/// Global split-conformal threshold.
pub fn global_tau(scores: &[f64], alpha: f64) -> Result<Threshold> {
    check_alpha(alpha)?;
    if scores.is_empty() {
        return Err(Error::Empty(
            "conformal threshold needs calibration scores".into(),
        ));
    }
    let t = kth_threshold(scores.to_vec(), alpha);
    if t.is_no_gate() {
        warn!(
            "degenerate calibration: rank {} exceeds {} scores at alpha {alpha}; gate disabled",
            conformal_rank(scores.len(), alpha),
            scores.len()
        );
    }
    Ok(t)
}

fn kth_threshold(mut scores: Vec<f64>, alpha: f64) -> Threshold {
    let n = scores.len();
    let k = conformal_rank(n, alpha);
    if k > n {
        return Threshold::NoGate;
    }
    let (_, kth, _) = scores.select_nth_unstable_by(k - 1, f64::total_cmp);
    Threshold::Finite(*kth)
}

/// Calibration states with their risk scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationIndex {
    pub points: FeatureMatrix,
    pub taken_actions: Vec<usize>,
    /// `p_harm(s, a_logged)` per point.
    pub taken_scores: Vec<f64>,
    /// `p_harm(s, a)` for every action; row-major `len × action_count`.
    pub per_action_scores: FeatureMatrix,
}

impl CalibrationIndex {
    pub fn build(calibration: &TransitionSet, risk: &RiskModel, exec: Exec) -> Result<Self> {
        if calibration.is_empty() {
            return Err(Error::Empty("calibration slice is empty".into()));
        }
        let scores = exec.map(calibration.len(), |i| risk.p_harm_all(calibration.row(i)));
        let taken_scores = scores
            .iter()
            .zip(&calibration.actions)
            .map(|(s, &a)| s[a])
            .collect();
        Ok(Self {
            points: calibration.features.clone(),
            taken_actions: calibration.actions.clone(),
            taken_scores,
            per_action_scores: FeatureMatrix::from_rows(risk.action_count, &scores)?,
        })
    }

    pub fn len(&self) -> usize {
        self.taken_actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taken_actions.is_empty()
    }

    pub fn action_count(&self) -> usize {
        self.per_action_scores.width()
    }

    fn sq_dist(&self, i: usize, x: &[f64]) -> f64 {
        self.points
            .row(i)
            .iter()
            .zip(x)
            .map(|(p, q)| (p - q) * (p - q))
            .sum()
    }
}

fn validate_k(index: &CalibrationIndex, k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if index.is_empty() {
        return Err(Error::Empty("calibration index is empty".into()));
    }
    if k > index.len() {
        warn!("K = {k} exceeds calibration size {}; clamped", index.len());
        return Ok(index.len());
    }
    Ok(k)
}

/// Exact K nearest calibration points by Euclidean distance, nearest first;
/// equal distances resolve to the lower index.
pub fn knn(index: &CalibrationIndex, x: &[f64], k: usize) -> Result<Vec<usize>> {
    let k = validate_k(index, k)?;
    Ok(knn_unchecked(index, x, k))
}

fn knn_unchecked(index: &CalibrationIndex, x: &[f64], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = (0..index.len()).map(|i| (index.sq_dist(i, x), i)).collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, cmp);
        d.truncate(k);
    }
    d.sort_unstable_by(cmp);
    d.into_iter().map(|(_, i)| i).collect()
}

/// Neighbour lists for many queries.
pub fn knn_batch(
    index: &CalibrationIndex,
    queries: &FeatureMatrix,
    k: usize,
    exec: Exec,
) -> Result<Vec<Vec<usize>>> {
    let k = validate_k(index, k)?;
    Ok(exec.map(queries.rows(), |q| knn_unchecked(index, queries.row(q), k)))
}

/// Per-query output of the local calibrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalThresholds {
    pub tau_local: Vec<Threshold>,
    pub neighbor_ids: Vec<usize>,
    pub action_freq: Vec<f64>,
}

impl LocalThresholds {
    /// Thresholds from an already computed neighbour list.
    pub fn from_neighbors(
        index: &CalibrationIndex,
        neighbor_ids: Vec<usize>,
        alpha: f64,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        if neighbor_ids.is_empty() {
            return Err(Error::Empty(
                "local thresholds need at least one neighbour".into(),
            ));
        }
        let a_count = index.action_count();
        let tau_local = (0..a_count)
            .map(|a| {
                let scores = neighbor_ids
                    .iter()
                    .map(|&j| index.per_action_scores.row(j)[a])
                    .collect();
                kth_threshold(scores, alpha)
            })
            .collect();
        let mut action_freq = vec![0.0; a_count];
        for &j in &neighbor_ids {
            action_freq[index.taken_actions[j]] += 1.0;
        }
        let k = neighbor_ids.len() as f64;
        action_freq.iter_mut().for_each(|f| *f /= k);
        Ok(Self {
            tau_local,
            neighbor_ids,
            action_freq,
        })
    }

    /// Masked flags for the given harm probabilities.
    pub fn mask(&self, p_harm: &[f64]) -> Vec<bool> {
        self.tau_local
            .iter()
            .zip(p_harm)
            .map(|(t, &p)| t.masks(p))
            .collect()
    }
}

pub fn local_thresholds(
    index: &CalibrationIndex,
    x: &[f64],
    k: usize,
    alpha: f64,
) -> Result<LocalThresholds> {
    check_alpha(alpha)?;
    LocalThresholds::from_neighbors(index, knn(index, x, k)?, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index_from(
        points: Vec<Vec<f64>>,
        actions: Vec<usize>,
        scores: Vec<Vec<f64>>,
    ) -> CalibrationIndex {
        let width = points[0].len();
        let a = scores[0].len();
        CalibrationIndex {
            points: FeatureMatrix::from_rows(width, &points).unwrap(),
            taken_scores: actions.iter().zip(&scores).map(|(&a, s)| s[a]).collect(),
            taken_actions: actions,
            per_action_scores: FeatureMatrix::from_rows(a, &scores).unwrap(),
        }
    }

    #[test]
    fn ten_scores_alpha_point_two() {
        let s: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(conformal_rank(10, 0.2), 9);
        assert_eq!(global_tau(&s, 0.2).unwrap(), Threshold::Finite(0.9));
    }

    #[test]
    fn single_score_cases() {
        assert_eq!(global_tau(&[0.37], 0.5).unwrap(), Threshold::Finite(0.37));
        assert_eq!(global_tau(&[0.37], 0.05).unwrap(), Threshold::NoGate);
    }

    #[test]
    fn errors() {
        assert!(global_tau(&[], 0.1).is_err());
        assert!(global_tau(&[0.1], 0.0).is_err());
        assert!(global_tau(&[0.1], 1.0).is_err());
    }

    #[test]
    fn no_gate_orders_above_finite_and_serializes_as_null() {
        assert!(Threshold::NoGate > Threshold::Finite(1e300));
        assert!(Threshold::NoGate.admits(1.0));
        assert!(Threshold::Finite(0.4).masks(0.4));
        assert_eq!(serde_json::to_string(&Threshold::NoGate).unwrap(), "null");
        let t: Threshold = serde_json::from_str("0.25").unwrap();
        assert_eq!(t, Threshold::Finite(0.25));
    }

    #[test]
    fn self_match_and_exhaustive() {
        let idx = index_from(
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![5.0, 5.0]],
            vec![0, 1, 1],
            vec![vec![0.1, 0.2]; 3],
        );
        assert_eq!(knn(&idx, &[1.0, 0.0], 1).unwrap(), vec![1]);
        let mut all = knn(&idx, &[9.0, 9.0], 3).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
        assert_eq!(knn(&idx, &[0.0, 0.0], 10).unwrap().len(), 3, "clamped");
        assert!(knn(&idx, &[0.0, 0.0], 0).is_err());
    }

    #[test]
    fn ties_resolve_to_lower_index() {
        let idx = index_from(
            vec![vec![1.0], vec![-1.0], vec![1.0]],
            vec![0, 0, 0],
            vec![vec![0.5]; 3],
        );
        assert_eq!(knn(&idx, &[0.0], 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn constant_scores_and_onehot_frequencies() {
        let idx = index_from(
            (0..6).map(|i| vec![i as f64]).collect(),
            vec![2; 6],
            vec![vec![0.9, 0.3, 0.5]; 6],
        );
        for alpha in [0.2, 0.5, 0.9] {
            let lt = local_thresholds(&idx, &[0.0], 4, alpha).unwrap();
            assert_eq!(lt.tau_local[1], Threshold::Finite(0.3));
            assert_eq!(lt.action_freq, vec![0.0, 0.0, 1.0]);
        }
    }
}
