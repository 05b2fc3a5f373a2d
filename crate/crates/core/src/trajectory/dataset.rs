use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{EpisodeSlice, FeatureMap};
use crate::error::{Error, Result};
use crate::linalg::FeatureMatrix;

/// Featurized episodes laid out as contiguous rows.
///
/// Row `i + 1` is the successor of row `i` unless `i` ends its episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSet {
    pub features: FeatureMatrix,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub episodes: Vec<Range<usize>>,
    pub action_count: usize,
}

impl TransitionSet {
    pub fn from_slices(fm: &FeatureMap, slices: &[EpisodeSlice<'_>], action_count: usize) -> Self {
        let n: usize = slices.iter().map(EpisodeSlice::len).sum();
        let mut features = FeatureMatrix::with_capacity(fm.width(), n);
        let mut actions = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        let mut episodes = Vec::with_capacity(slices.len());
        for sl in slices.iter().filter(|s| !s.is_empty()) {
            let start = actions.len();
            for (step, prev) in sl.iter() {
                features
                    .push(&fm.featurize(step, prev))
                    .expect("featurize returns fm.width() entries");
                actions.push(step.action);
                rewards.push(step.reward);
            }
            episodes.push(start..actions.len());
        }
        Self {
            features,
            actions,
            rewards,
            episodes,
            action_count,
        }
    }

    /// Builds a set directly from rows; used for hand-constructed MDPs.
    pub fn from_parts(
        features: FeatureMatrix,
        actions: Vec<usize>,
        rewards: Vec<f64>,
        episode_lengths: &[usize],
        action_count: usize,
    ) -> Result<Self> {
        let n = actions.len();
        if rewards.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: rewards.len(),
            });
        }
        if features.width() > 0 && features.rows() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: features.rows(),
            });
        }
        if episode_lengths.iter().sum::<usize>() != n || episode_lengths.contains(&0) {
            return Err(Error::Validation(
                "episode lengths must be positive and cover all rows".into(),
            ));
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= action_count) {
            return Err(Error::ActionOutOfRange {
                action: a,
                action_count,
            });
        }
        let mut episodes = Vec::with_capacity(episode_lengths.len());
        let mut start = 0;
        for &len in episode_lengths {
            episodes.push(start..start + len);
            start += len;
        }
        Ok(Self {
            features,
            actions,
            rewards,
            episodes,
            action_count,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.width()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        if self.features.width() == 0 {
            &[]
        } else {
            self.features.row(i)
        }
    }

    /// Successor row of each row, `None` at episode ends.
    pub fn successors(&self) -> Vec<Option<usize>> {
        let mut next = vec![None; self.len()];
        for ep in &self.episodes {
            for i in ep.start..ep.end.saturating_sub(1) {
                next[i] = Some(i + 1);
            }
        }
        next
    }

    pub fn episode_starts(&self) -> Vec<usize> {
        self.episodes.iter().map(|r| r.start).collect()
    }

    /// Keeps the first `n` episodes.
    pub fn truncate_episodes(&self, n: usize) -> TransitionSet {
        if n >= self.episodes.len() {
            return self.clone();
        }
        let end = self.episodes[n - 1].end;
        let rows: Vec<usize> = (0..end).collect();
        TransitionSet {
            features: if self.width() == 0 {
                self.features.clone()
            } else {
                self.features.select(&rows)
            },
            actions: self.actions[..end].to_vec(),
            rewards: self.rewards[..end].to_vec(),
            episodes: self.episodes[..n].to_vec(),
            action_count: self.action_count,
        }
    }

    /// Discounted return of every episode.
    pub fn discounted_returns(&self, gamma: f64) -> Vec<f64> {
        self.episodes
            .iter()
            .map(|r| {
                let mut g = 0.0;
                for i in r.clone().rev() {
                    g = self.rewards[i] + gamma * g;
                }
                g
            })
            .collect()
    }
}
