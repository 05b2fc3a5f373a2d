use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Episode, Step};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Order all steps by time index (member id breaks ties) before cutting.
    Temporal,
    /// Cut in dataset order.
    Index,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub calibration: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.70,
            calibration: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.calibration, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r))
            || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "split ratios must lie in [0,1] and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }
}

/// Position of a step inside an episode list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StepRef {
    pub episode: usize,
    pub step: usize,
}

/// Disjoint train / calibration / test cover of all steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub mode: SplitMode,
    pub train: Vec<StepRef>,
    pub calibration: Vec<StepRef>,
    pub test: Vec<StepRef>,
}

impl SplitAssignment {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.calibration.len(), self.test.len())
    }

    pub fn train_slices<'a>(&self, episodes: &'a [Episode]) -> Vec<EpisodeSlice<'a>> {
        slices_of(&self.train, episodes)
    }

    pub fn calibration_slices<'a>(&self, episodes: &'a [Episode]) -> Vec<EpisodeSlice<'a>> {
        slices_of(&self.calibration, episodes)
    }

    pub fn test_slices<'a>(&self, episodes: &'a [Episode]) -> Vec<EpisodeSlice<'a>> {
        slices_of(&self.test, episodes)
    }
}

/// A contiguous run of one episode's steps.
///
/// Previous rewards are read from the full episode, so a slice that starts
/// mid-episode still sees the reward logged just before it.
#[derive(Debug, Clone)]
pub struct EpisodeSlice<'a> {
    pub episode: &'a Episode,
    pub steps: Range<usize>,
}

impl<'a> EpisodeSlice<'a> {
    pub fn whole(episode: &'a Episode) -> Self {
        Self {
            episode,
            steps: 0..episode.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Steps paired with the reward observed before each.
    pub fn iter(&self) -> impl Iterator<Item = (&'a Step, f64)> + '_ {
        let ep = self.episode;
        self.steps
            .clone()
            .map(move |i| (&ep.steps[i], ep.prev_reward(i)))
    }
}

fn slices_of<'a>(refs: &[StepRef], episodes: &'a [Episode]) -> Vec<EpisodeSlice<'a>> {
    let mut refs = refs.to_vec();
    refs.sort();
    let mut out: Vec<EpisodeSlice<'a>> = Vec::new();
    for r in refs {
        match out.last_mut() {
            Some(last)
                if std::ptr::eq(last.episode, &episodes[r.episode]) && last.steps.end == r.step =>
            {
                last.steps.end += 1;
            }
            _ => out.push(EpisodeSlice {
                episode: &episodes[r.episode],
                steps: r.step..r.step + 1,
            }),
        }
    }
    out
}

/// Splits steps into train / calibration / test.
///
/// Sizes are `floor(train·n)`, `floor(calibration·n)` and the remainder.
pub fn split(
    episodes: &[Episode],
    mode: SplitMode,
    ratios: SplitRatios,
) -> Result<SplitAssignment> {
    ratios.validate()?;
    let mut order: Vec<StepRef> = episodes
        .iter()
        .enumerate()
        .flat_map(|(e, ep)| {
            (0..ep.len()).map(move |s| StepRef {
                episode: e,
                step: s,
            })
        })
        .collect();
    let n = order.len();
    if n < 3 {
        return Err(Error::Validation(format!(
            "split needs at least 3 steps, got {n}"
        )));
    }
    if mode == SplitMode::Temporal {
        order.sort_by(|a, b| {
            let sa = &episodes[a.episode].steps[a.step];
            let sb = &episodes[b.episode].steps[b.step];
            sa.t.cmp(&sb.t)
                .then_with(|| sa.member_id.cmp(&sb.member_id))
                .then_with(|| a.cmp(b))
        });
    }
    // The epsilon keeps products like 0.15·100 from landing just under an integer.
    let n_train = ((ratios.train * n as f64) + 1e-9).floor() as usize;
    let n_cal = (((ratios.calibration * n as f64) + 1e-9).floor() as usize).min(n - n_train);
    let test = order.split_off(n_train + n_cal);
    let calibration = order.split_off(n_train);
    Ok(SplitAssignment {
        mode,
        train: order,
        calibration,
        test,
    })
}
