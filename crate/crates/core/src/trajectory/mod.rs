//! Logged trajectories: ingestion, featurization, splitting and a synthetic
//! generator with planted harm probabilities.

mod dataset;
mod features;
mod ingest;
mod split;
mod synthetic;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::TransitionSet;
pub use features::{build_feature_map, FeatureMap, FeatureVector, MAX_KEYS};
pub use ingest::{data_hash, ingest, parse_state, write_csv, write_jsonl, DataFormat};
pub use split::{split, EpisodeSlice, SplitAssignment, SplitMode, SplitRatios, StepRef};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticData};

/// A scalar entry in a state document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateValue {
    Number(f64),
    Bool(bool),
    Text(String),
}

/// Flat key → scalar snapshot of a member's state.
pub type StateDoc = BTreeMap<String, StateValue>;

/// One logged decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub member_id: String,
    pub t: u64,
    pub state: StateDoc,
    pub action: usize,
    pub reward: f64,
}

impl Step {
    pub fn validate(&self, action_count: usize) -> Result<()> {
        if !self.reward.is_finite() || self.reward > 0.0 {
            return Err(Error::Validation(format!(
                "member {} t={}: reward {} must be finite and non-positive",
                self.member_id, self.t, self.reward
            )));
        }
        if self.action >= action_count {
            return Err(Error::ActionOutOfRange {
                action: self.action,
                action_count,
            });
        }
        Ok(())
    }

    pub fn is_harm(&self) -> bool {
        self.reward < 0.0
    }
}

/// One member's ordered steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub member_id: String,
    pub steps: Vec<Step>,
}

impl Episode {
    pub fn new(member_id: impl Into<String>, steps: Vec<Step>) -> Result<Self> {
        let member_id = member_id.into();
        if steps.is_empty() {
            return Err(Error::Validation(format!(
                "episode {member_id} has no steps"
            )));
        }
        for w in steps.windows(2) {
            if w[1].t <= w[0].t {
                return Err(Error::Validation(format!(
                    "episode {member_id}: time index {} does not increase after {}",
                    w[1].t, w[0].t
                )));
            }
        }
        if let Some(s) = steps.iter().find(|s| s.member_id != member_id) {
            return Err(Error::Validation(format!(
                "episode {member_id} contains a step for member {}",
                s.member_id
            )));
        }
        Ok(Self { member_id, steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Reward observed before step `i`; 0.0 for the first step.
    pub fn prev_reward(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.steps[i - 1].reward
        }
    }
}

/// Groups steps by member and sorts each group by time index.
pub fn group_steps(steps: Vec<Step>) -> Result<Vec<Episode>> {
    let mut groups: BTreeMap<String, Vec<Step>> = BTreeMap::new();
    for s in steps {
        groups.entry(s.member_id.clone()).or_default().push(s);
    }
    groups
        .into_iter()
        .map(|(id, mut steps)| {
            steps.sort_by_key(|s| s.t);
            Episode::new(id, steps)
        })
        .collect()
}

pub fn total_steps(episodes: &[Episode]) -> usize {
    episodes.iter().map(Episode::len).sum()
}

#[cfg(test)]
pub(crate) fn step(
    member: &str,
    t: u64,
    pairs: &[(&str, f64)],
    action: usize,
    reward: f64,
) -> Step {
    Step {
        member_id: member.to_string(),
        t,
        state: pairs
            .iter()
            .map(|(k, v)| (k.to_string(), StateValue::Number(*v)))
            .collect(),
        action,
        reward,
    }
}
