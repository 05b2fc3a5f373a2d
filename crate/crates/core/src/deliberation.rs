//! Inference-time deliberation: cost table, dials, per-action scoring with
//! local safety masking, and action selection.
//!
//! `score(a) = q_mean − β·q_std − λ·p_harm − λ_cost·cost`; an action is masked
//! when gating is on and `p_harm(a) ≥ τ_s(a)`.

use std::collections::BTreeSet;
use std::path::Path;

use log::warn;
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::Threshold;
use crate::error::{Error, Result};
use crate::preference::DEFAULT_ETA;

/// Action identifier in a cost file: either an explicit action index or a
/// name, in which case list order gives the index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CostId {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub id: CostId,
    #[serde(default)]
    pub label: String,
    pub time_minutes: f64,
    pub wage_per_minute: f64,
    pub travel_minutes: f64,
}

impl CostEntry {
    pub fn raw(&self) -> f64 {
        self.time_minutes * self.wage_per_minute + self.travel_minutes
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CostFile {
    actions: Vec<CostEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    /// Entries in action-index order.
    pub entries: Vec<CostEntry>,
    pub raw: Vec<f64>,
    /// `raw / min positive raw`; the cheapest action costs exactly 1.
    pub normalized: Vec<f64>,
}

impl CostTable {
    pub fn from_entries(entries: Vec<CostEntry>, action_count: usize) -> Result<Self> {
        let entries = order_entries(entries, action_count)?;
        for e in &entries {
            for (field, v) in [
                ("time_minutes", e.time_minutes),
                ("wage_per_minute", e.wage_per_minute),
                ("travel_minutes", e.travel_minutes),
            ] {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Config(format!(
                        "cost entry {:?}: {field} must be a non-negative number, got {v}",
                        e.id
                    )));
                }
            }
        }
        let raw: Vec<f64> = entries.iter().map(CostEntry::raw).collect();
        let min_pos = raw
            .iter()
            .copied()
            .filter(|&c| c > 0.0)
            .fold(f64::INFINITY, f64::min);
        let normalized = if min_pos.is_infinite() {
            warn!("all action costs are zero; every normalized cost is 1");
            vec![1.0; raw.len()]
        } else {
            if let Some(a) = raw.iter().position(|&c| c == 0.0) {
                return Err(Error::Config(format!(
                    "action {a} has zero cost while others are positive; normalized costs need a positive floor"
                )));
            }
            raw.iter().map(|c| c / min_pos).collect()
        };
        Ok(Self {
            entries,
            raw,
            normalized,
        })
    }

    pub fn from_yaml_str(text: &str, action_count: usize) -> Result<Self> {
        let file: CostFile = serde_yaml::from_str(text)?;
        Self::from_entries(file.actions, action_count)
    }

    /// Every action costs the same.
    pub fn uniform(action_count: usize) -> Self {
        let entries = (0..action_count)
            .map(|a| CostEntry {
                id: CostId::Index(a),
                label: String::new(),
                time_minutes: 1.0,
                wage_per_minute: 1.0,
                travel_minutes: 0.0,
            })
            .collect();
        Self::from_entries(entries, action_count).expect("uniform costs are valid")
    }

    pub fn action_count(&self) -> usize {
        self.normalized.len()
    }

    /// Lowest-index action with minimal normalized cost.
    pub fn cheapest(&self) -> usize {
        let neg: Vec<f64> = self.normalized.iter().map(|c| -c).collect();
        crate::linalg::argmax_first(&neg)
    }
}

fn order_entries(entries: Vec<CostEntry>, action_count: usize) -> Result<Vec<CostEntry>> {
    if entries.iter().all(|e| matches!(e.id, CostId::Index(_))) {
        let mut slots: Vec<Option<CostEntry>> = vec![None; action_count];
        for e in entries {
            let CostId::Index(a) = e.id else {
                unreachable!()
            };
            if a >= action_count {
                return Err(Error::Config(format!(
                    "cost entry for action {a}, but there are only {action_count} actions"
                )));
            }
            if slots[a].replace(e).is_some() {
                return Err(Error::Config(format!(
                    "duplicate cost entry for action {a}"
                )));
            }
        }
        slots
            .into_iter()
            .enumerate()
            .map(|(a, e)| {
                e.ok_or_else(|| Error::Config(format!("missing cost entry for action {a}")))
            })
            .collect()
    } else if entries.iter().all(|e| matches!(e.id, CostId::Name(_))) {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if let CostId::Name(n) = &e.id {
                if !seen.insert(n.clone()) {
                    return Err(Error::Config(format!("duplicate cost entry id {n:?}")));
                }
            }
        }
        if entries.len() != action_count {
            return Err(Error::Config(format!(
                "cost table lists {} actions, expected {action_count} (missing action {})",
                entries.len(),
                entries.len().min(action_count)
            )));
        }
        Ok(entries)
    } else {
        Err(Error::Config(
            "cost entry ids must be all indices or all names".into(),
        ))
    }
}

pub fn load_costs(path: &Path, action_count: usize) -> Result<CostTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    CostTable::from_yaml_str(&text, action_count)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    Greedy,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DialConfig {
    pub alpha: f64,
    pub k: usize,
    pub eta: f64,
    pub beta: f64,
    pub lambda: f64,
    pub lambda_cost: f64,
    pub temperature: f64,
    pub gating: bool,
    pub selection: Selection,
}

impl Default for DialConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            k: 200,
            eta: DEFAULT_ETA,
            beta: 0.5,
            lambda: 1.0,
            lambda_cost: 0.0,
            temperature: 1.0,
            gating: true,
            selection: Selection::Greedy,
        }
    }
}

impl DialConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad(format!("eta must lie in [0, 1], got {}", self.eta));
        }
        for (name, v) in [
            ("beta", self.beta),
            ("lambda", self.lambda),
            ("lambda_cost", self.lambda_cost),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBreakdown {
    pub action: usize,
    pub q_mean: f64,
    pub q_std: f64,
    pub p_harm: f64,
    pub cost: f64,
    pub tau_local: Threshold,
    pub masked: bool,
    pub score: f64,
}

/// Per-action components feeding the score.
#[derive(Debug, Clone, Copy)]
pub struct ScoreInputs<'a> {
    pub q_mean: &'a [f64],
    pub q_std: &'a [f64],
    pub p_harm: &'a [f64],
    pub tau: &'a [Threshold],
    pub cost: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub breakdown: Vec<ActionBreakdown>,
    /// Set when every action failed the gate and the least risky one was
    /// reinstated.
    pub fallback: bool,
}

impl Scored {
    pub fn unmasked(&self) -> impl Iterator<Item = &ActionBreakdown> {
        self.breakdown.iter().filter(|b| !b.masked)
    }
}

pub fn score_actions(inputs: ScoreInputs<'_>, dials: &DialConfig) -> Result<Scored> {
    let n = inputs.q_mean.len();
    for len in [
        inputs.q_std.len(),
        inputs.p_harm.len(),
        inputs.tau.len(),
        inputs.cost.len(),
    ] {
        if len != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: len,
            });
        }
    }
    if n == 0 {
        return Err(Error::Empty("no actions to score".into()));
    }
    let mut breakdown: Vec<ActionBreakdown> = (0..n)
        .map(|a| ActionBreakdown {
            action: a,
            q_mean: inputs.q_mean[a],
            q_std: inputs.q_std[a],
            p_harm: inputs.p_harm[a],
            cost: inputs.cost[a],
            tau_local: inputs.tau[a],
            masked: dials.gating && inputs.tau[a].masks(inputs.p_harm[a]),
            score: inputs.q_mean[a]
                - dials.beta * inputs.q_std[a]
                - dials.lambda * inputs.p_harm[a]
                - dials.lambda_cost * inputs.cost[a],
        })
        .collect();
    let fallback = breakdown.iter().all(|b| b.masked);
    if fallback {
        let neg: Vec<f64> = inputs.p_harm.iter().map(|p| -p).collect();
        breakdown[crate::linalg::argmax_first(&neg)].masked = false;
    }
    Ok(Scored {
        breakdown,
        fallback,
    })
}

/// Selection distribution over all actions; masked actions get zero.
pub fn selection_probs(scored: &Scored, dials: &DialConfig) -> Vec<f64> {
    let n = scored.breakdown.len();
    let mut probs = vec![0.0; n];
    match dials.selection {
        Selection::Greedy => probs[greedy(scored)] = 1.0,
        Selection::Softmax => {
            let max = scored
                .unmasked()
                .map(|b| b.score)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for b in scored.unmasked() {
                let w = ((b.score - max) / dials.temperature).exp();
                probs[b.action] = w;
                total += w;
            }
            probs.iter_mut().for_each(|p| *p /= total);
        }
    }
    probs
}

/// Lowest-index argmax among unmasked actions.
fn greedy(scored: &Scored) -> usize {
    let mut best: Option<&ActionBreakdown> = None;
    for b in scored.unmasked() {
        if best.is_none_or(|cur| b.score > cur.score) {
            best = Some(b);
        }
    }
    best.expect("scoring always leaves an unmasked action")
        .action
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub action: usize,
    pub breakdown: Vec<ActionBreakdown>,
    pub selection: Selection,
    pub fallback: bool,
    /// Selection probabilities the action was drawn from.
    pub probabilities: Vec<f64>,
    /// Seed of the softmax draw; absent for greedy selection.
    pub seed: Option<u64>,
}

pub fn select(scored: Scored, dials: &DialConfig, seed: u64) -> Recommendation {
    let probabilities = selection_probs(&scored, dials);
    let (action, seed) = match dials.selection {
        Selection::Greedy => (greedy(&scored), None),
        Selection::Softmax => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dist = WeightedIndex::new(&probabilities)
                .expect("softmax weights are positive on unmasked actions");
            (dist.sample(&mut rng), Some(seed))
        }
    };
    Recommendation {
        action,
        breakdown: scored.breakdown,
        selection: dials.selection,
        fallback: scored.fallback,
        probabilities,
        seed,
    }
}
