//! Reference policies evaluated against TTL+ITD.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conformal::{LocalThresholds, Threshold};
use crate::deliberation::{score_actions, selection_probs, DialConfig, ScoreInputs, Scored};
use crate::error::{Error, Result};
use crate::harness::PolicyArtifact;
use crate::linalg::argmax_first;
use crate::preference::blend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    TtlItd,
    GlobalTau,
    Bc,
    ItdOnly,
    TtlOnly,
    MinCost,
}

impl PolicyName {
    pub const ALL: [PolicyName; 6] = [
        PolicyName::TtlItd,
        PolicyName::GlobalTau,
        PolicyName::Bc,
        PolicyName::ItdOnly,
        PolicyName::TtlOnly,
        PolicyName::MinCost,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyName::TtlItd => "ttl_itd",
            PolicyName::GlobalTau => "global_tau",
            PolicyName::Bc => "bc",
            PolicyName::ItdOnly => "itd_only",
            PolicyName::TtlOnly => "ttl_only",
            PolicyName::MinCost => "min_cost",
        }
    }

    /// Row label used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            PolicyName::TtlItd => "TTL+ITD",
            PolicyName::GlobalTau => "Global-τ",
            PolicyName::Bc => "BC",
            PolicyName::ItdOnly => "ITD only",
            PolicyName::TtlOnly => "TTL only",
            PolicyName::MinCost => "MinCost",
        }
    }

    /// Whether the policy consults the local neighbourhood.
    pub fn uses_neighbors(self) -> bool {
        matches!(self, PolicyName::TtlItd | PolicyName::TtlOnly)
    }
}

impl fmt::Display for PolicyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy {s:?}; expected one of ttl_itd, global_tau, bc, itd_only, ttl_only, min_cost")))
    }
}

/// A policy plus the dials it runs under (artifact defaults when absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub name: PolicyName,
    #[serde(default)]
    pub dials: Option<DialConfig>,
}

impl PolicySpec {
    pub fn new(name: PolicyName) -> Self {
        Self { name, dials: None }
    }

    pub fn with_dials(name: PolicyName, dials: DialConfig) -> Self {
        Self {
            name,
            dials: Some(dials),
        }
    }

    pub fn dials<'a>(&'a self, artifact: &'a PolicyArtifact) -> &'a DialConfig {
        self.dials.as_ref().unwrap_or(&artifact.dials)
    }
}

/// Everything about one featurized state that the policies read. Built once
/// per state and shared across policies and dial settings.
#[derive(Debug, Clone, PartialEq)]
pub struct StateContext {
    pub p_harm: Vec<f64>,
    pub preference: Vec<f64>,
    pub bc: Vec<f64>,
    pub q_mean: Vec<f64>,
    pub q_std: Vec<f64>,
    pub q_mean_base: Vec<f64>,
    pub q_std_base: Vec<f64>,
    /// Calibration neighbours, nearest first; any prefix is the neighbour
    /// list for a smaller K.
    pub neighbors: Vec<usize>,
}

impl StateContext {
    pub fn build(artifact: &PolicyArtifact, x: &[f64], max_k: usize) -> Result<Self> {
        let (q_mean, q_std) = artifact.ensemble.q_stats_all(x);
        let (q_mean_base, q_std_base) = artifact.ensemble_base.q_stats_all(x);
        Ok(Self {
            p_harm: artifact.risk.p_harm_all(x),
            preference: artifact.preference.probs(x),
            bc: artifact.bc.probs(x),
            q_mean,
            q_std,
            q_mean_base,
            q_std_base,
            neighbors: crate::conformal::knn(&artifact.calibration, x, max_k)?,
        })
    }

    pub fn local(&self, artifact: &PolicyArtifact, dials: &DialConfig) -> Result<LocalThresholds> {
        let k = dials.k.min(self.neighbors.len());
        LocalThresholds::from_neighbors(
            &artifact.calibration,
            self.neighbors[..k].to_vec(),
            dials.alpha,
        )
    }
}

/// A policy's action distribution at one state, with the intermediate
/// products when the policy has them.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub probs: Vec<f64>,
    pub scored: Option<Scored>,
    pub local: Option<LocalThresholds>,
}

pub fn decide(
    name: PolicyName,
    artifact: &PolicyArtifact,
    ctx: &StateContext,
    dials: &DialConfig,
) -> Result<Decision> {
    let a_count = artifact.action_count;
    let costs = &artifact.costs.normalized;
    let global = vec![artifact.global_tau; a_count];
    let deliberate = |q_mean: &[f64], q_std: &[f64], tau: &[Threshold]| {
        score_actions(
            ScoreInputs {
                q_mean,
                q_std,
                p_harm: &ctx.p_harm,
                tau,
                cost: costs,
            },
            dials,
        )
    };
    let decision = match name {
        PolicyName::TtlItd => {
            let local = ctx.local(artifact, dials)?;
            let scored = deliberate(&ctx.q_mean, &ctx.q_std, &local.tau_local)?;
            Decision {
                probs: selection_probs(&scored, dials),
                scored: Some(scored),
                local: Some(local),
            }
        }
        PolicyName::ItdOnly => {
            let scored = deliberate(&ctx.q_mean_base, &ctx.q_std_base, &global)?;
            Decision {
                probs: selection_probs(&scored, dials),
                scored: Some(scored),
                local: None,
            }
        }
        PolicyName::TtlOnly => {
            let local = ctx.local(artifact, dials)?;
            let blended = blend(&ctx.preference, &local.action_freq, dials.eta)?;
            let probs = masked_argmax(&blended, &ctx.p_harm, &local.tau_local, dials.gating);
            Decision {
                probs,
                scored: None,
                local: Some(local),
            }
        }
        PolicyName::GlobalTau => Decision {
            probs: masked_renormalized(&ctx.preference, &ctx.p_harm, &global, dials.gating),
            scored: None,
            local: None,
        },
        PolicyName::Bc => Decision {
            probs: ctx.bc.clone(),
            scored: None,
            local: None,
        },
        PolicyName::MinCost => Decision {
            probs: onehot(a_count, artifact.costs.cheapest()),
            scored: None,
            local: None,
        },
    };
    Ok(decision)
}

/// Action distribution of `spec` at featurized state `x`.
pub fn policy_probs(spec: &PolicySpec, artifact: &PolicyArtifact, x: &[f64]) -> Result<Vec<f64>> {
    let dials = spec.dials(artifact);
    dials.validate()?;
    let ctx = StateContext::build(artifact, x, dials.k)?;
    Ok(decide(spec.name, artifact, &ctx, dials)?.probs)
}

fn onehot(n: usize, a: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[a] = 1.0;
    v
}

fn gate(p_harm: &[f64], tau: &[Threshold], gating: bool) -> Option<Vec<bool>> {
    let masked: Vec<bool> = p_harm
        .iter()
        .zip(tau)
        .map(|(&p, t)| gating && t.masks(p))
        .collect();
    if masked.iter().all(|&m| m) {
        None
    } else {
        Some(masked)
    }
}

fn least_risky(p_harm: &[f64]) -> usize {
    let neg: Vec<f64> = p_harm.iter().map(|p| -p).collect();
    argmax_first(&neg)
}

/// Onehot on the highest-probability admitted action.
fn masked_argmax(probs: &[f64], p_harm: &[f64], tau: &[Threshold], gating: bool) -> Vec<f64> {
    let Some(masked) = gate(p_harm, tau, gating) else {
        return onehot(probs.len(), least_risky(p_harm));
    };
    let admitted: Vec<f64> = probs
        .iter()
        .zip(&masked)
        .map(|(&p, &m)| if m { f64::NEG_INFINITY } else { p })
        .collect();
    onehot(probs.len(), argmax_first(&admitted))
}

/// `probs` restricted to admitted actions and renormalized.
fn masked_renormalized(probs: &[f64], p_harm: &[f64], tau: &[Threshold], gating: bool) -> Vec<f64> {
    let Some(masked) = gate(p_harm, tau, gating) else {
        return onehot(probs.len(), least_risky(p_harm));
    };
    let kept: Vec<f64> = probs
        .iter()
        .zip(&masked)
        .map(|(&p, &m)| if m { 0.0 } else { p })
        .collect();
    let total: f64 = kept.iter().sum();
    kept.iter().map(|p| p / total).collect()
}
