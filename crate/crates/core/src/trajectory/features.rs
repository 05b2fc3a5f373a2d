//! Fixed-width, z-scored state encoding.
//!
//! Keys are ranked by the variance of their numeric encoding on the training
//! slice (ties broken lexicographically) and the top `max_keys` are kept. The
//! encoding appends two temporal features: the time index and the previous
//! reward. Missing keys are imputed with the training median before scaling.

use std::collections::BTreeMap;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use super::{EpisodeSlice, StateDoc, StateValue, Step};
use crate::error::{Error, Result};

pub const MAX_KEYS: usize = 64;

const MIN_STD: f64 = 1e-12;

/// A featurized, z-scored state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Category → training relative frequency for string-valued keys.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryFrequencies(pub BTreeMap<String, f64>);

impl CategoryFrequencies {
    fn encode(&self, v: &StateValue) -> Option<f64> {
        match v {
            StateValue::Number(x) if x.is_finite() => Some(*x),
            StateValue::Number(_) => None,
            StateValue::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            StateValue::Text(s) => Some(self.0.get(s).copied().unwrap_or(0.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub selected_keys: Vec<String>,
    pub categories: Vec<CategoryFrequencies>,
    /// Training median of each selected key's encoding, used for imputation.
    pub medians: Vec<f64>,
    /// Normalization statistics; length `width()`.
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl FeatureMap {
    /// Selected keys plus time index and previous reward.
    pub fn width(&self) -> usize {
        self.selected_keys.len() + 2
    }

    /// Unscaled encoding with imputation.
    pub fn raw(&self, state: &StateDoc, t: u64, prev_reward: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width());
        for (i, key) in self.selected_keys.iter().enumerate() {
            let v = state
                .get(key)
                .and_then(|v| self.categories[i].encode(v))
                .unwrap_or(self.medians[i]);
            out.push(v);
        }
        out.push(t as f64);
        out.push(prev_reward);
        out
    }

    pub fn featurize_state(&self, state: &StateDoc, t: u64, prev_reward: f64) -> FeatureVector {
        let mut v = self.raw(state, t, prev_reward);
        for ((x, m), s) in v.iter_mut().zip(&self.means).zip(&self.stds) {
            *x = (*x - m) / s;
        }
        FeatureVector(v)
    }

    pub fn featurize(&self, step: &Step, prev_reward: f64) -> FeatureVector {
        self.featurize_state(&step.state, step.t, prev_reward)
    }
}

/// Population variance of every key's numeric encoding over the slices.
pub(crate) fn key_variances(
    slices: &[EpisodeSlice<'_>],
) -> (BTreeMap<String, f64>, BTreeMap<String, CategoryFrequencies>) {
    let mut text_counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for (step, _) in slices.iter().flat_map(EpisodeSlice::iter) {
        for (k, v) in &step.state {
            if let StateValue::Text(s) = v {
                *text_counts
                    .entry(k.clone())
                    .or_default()
                    .entry(s.clone())
                    .or_default() += 1;
            }
        }
    }
    let categories: BTreeMap<String, CategoryFrequencies> = text_counts
        .into_iter()
        .map(|(k, counts)| {
            let total: usize = counts.values().sum();
            let freq = counts
                .into_iter()
                .map(|(c, n)| (c, n as f64 / total as f64))
                .collect();
            (k, CategoryFrequencies(freq))
        })
        .collect();

    let empty = CategoryFrequencies::default();
    // (count, mean, M2) via Welford.
    let mut acc: BTreeMap<String, (f64, f64, f64)> = BTreeMap::new();
    for (step, _) in slices.iter().flat_map(EpisodeSlice::iter) {
        for (k, v) in &step.state {
            let cats = categories.get(k).unwrap_or(&empty);
            if let Some(x) = cats.encode(v) {
                let e = acc.entry(k.clone()).or_insert((0.0, 0.0, 0.0));
                e.0 += 1.0;
                let d = x - e.1;
                e.1 += d / e.0;
                e.2 += d * (x - e.1);
            }
        }
    }
    let vars = acc.into_iter().map(|(k, (n, _, m2))| (k, m2 / n)).collect();
    (vars, categories)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Builds the feature map from training slices only.
pub fn build_feature_map(train: &[EpisodeSlice<'_>], max_keys: usize) -> Result<FeatureMap> {
    if train.iter().all(|s| s.is_empty()) {
        return Err(Error::Empty(
            "feature map needs at least one training step".into(),
        ));
    }
    let (vars, mut categories) = key_variances(train);
    let mut ranked: Vec<(String, f64)> = vars.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_keys);
    let selected_keys: Vec<String> = ranked.into_iter().map(|(k, _)| k).collect();
    let categories: Vec<CategoryFrequencies> = selected_keys
        .iter()
        .map(|k| categories.remove(k).unwrap_or_default())
        .collect();

    let medians = selected_keys
        .iter()
        .zip(&categories)
        .map(|(k, cats)| {
            let vals: Vec<f64> = train
                .iter()
                .flat_map(EpisodeSlice::iter)
                .filter_map(|(s, _)| s.state.get(k).and_then(|v| cats.encode(v)))
                .collect();
            median(vals)
        })
        .collect();

    let mut fm = FeatureMap {
        selected_keys,
        categories,
        medians,
        means: Vec::new(),
        stds: Vec::new(),
    };
    let width = fm.width();
    let mut n = 0.0;
    let mut mean = vec![0.0; width];
    let mut m2 = vec![0.0; width];
    for (step, prev) in train.iter().flat_map(EpisodeSlice::iter) {
        let raw = fm.raw(&step.state, step.t, prev);
        n += 1.0;
        for j in 0..width {
            let d = raw[j] - mean[j];
            mean[j] += d / n;
            m2[j] += d * (raw[j] - mean[j]);
        }
    }
    fm.stds = m2
        .iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s > MIN_STD {
                s
            } else {
                1.0
            }
        })
        .collect();
    fm.means = mean;
    Ok(fm)
}

#[cfg(test)]
mod tests {
    use super::super::{step, Episode};
    use super::*;

    fn slices(eps: &[Episode]) -> Vec<EpisodeSlice<'_>> {
        eps.iter().map(EpisodeSlice::whole).collect()
    }

    #[test]
    fn width_counts_keys_plus_temporal() {
        let eps = vec![Episode::new(
            "m",
            vec![
                step("m", 0, &[("a", 1.0), ("b", 2.0)], 0, 0.0),
                step("m", 1, &[("c", 1.0), ("b", 5.0)], 0, 0.0),
            ],
        )
        .unwrap()];
        let fm = build_feature_map(&slices(&eps), 64).unwrap();
        assert_eq!(fm.width(), 5);
    }

    #[test]
    fn constant_key_kept_with_unit_std() {
        let eps = vec![Episode::new(
            "m",
            vec![
                step("m", 0, &[("k", 3.0)], 0, 0.0),
                step("m", 1, &[("k", 3.0)], 0, 0.0),
            ],
        )
        .unwrap()];
        let fm = build_feature_map(&slices(&eps), 64).unwrap();
        assert_eq!(fm.selected_keys, vec!["k".to_string()]);
        assert_eq!(fm.stds[0], 1.0);
    }

    #[test]
    fn empty_training_set_errors() {
        assert!(build_feature_map(&[], 64).is_err());
    }

    #[test]
    fn mean_state_featurizes_to_zero() {
        let eps = vec![Episode::new(
            "m",
            vec![
                step("m", 0, &[("a", 1.0), ("b", 10.0)], 0, 0.0),
                step("m", 2, &[("a", 3.0), ("b", 20.0)], 0, -1.0),
            ],
        )
        .unwrap()];
        let fm = build_feature_map(&slices(&eps), 64).unwrap();
        let probe = step("m", 1, &[("a", 2.0), ("b", 15.0)], 0, 0.0);
        // time index mean is 1, previous reward mean is 0
        let x = fm.featurize(&probe, 0.0);
        assert!(x.iter().all(|v| v.abs() < 1e-12), "{x:?}");
    }

    #[test]
    fn missing_key_takes_median() {
        let eps = vec![Episode::new(
            "m",
            vec![
                step("m", 0, &[("a", 1.0)], 0, 0.0),
                step("m", 1, &[("a", 2.0)], 0, 0.0),
                step("m", 2, &[("a", 9.0)], 0, 0.0),
            ],
        )
        .unwrap()];
        let fm = build_feature_map(&slices(&eps), 64).unwrap();
        assert_eq!(fm.medians[0], 2.0);
        let x = fm.featurize(&step("m", 0, &[], 0, 0.0), 0.0);
        assert!((x[0] - (2.0 - fm.means[0]) / fm.stds[0]).abs() < 1e-12);
    }

    #[test]
    fn hand_built_z_scores() {
        let fm = FeatureMap {
            selected_keys: vec!["a".into(), "b".into()],
            categories: vec![CategoryFrequencies::default(); 2],
            medians: vec![0.0, 0.0],
            means: vec![1.0, 3.0, 0.0, 0.0],
            stds: vec![2.0, 1.0, 1.0, 1.0],
        };
        let x = fm.featurize(&step("m", 0, &[("a", 3.0), ("b", 4.0)], 0, 0.0), 0.0);
        assert_eq!(&x[..2], &[1.0, 1.0]);
    }

    #[test]
    fn strings_are_frequency_encoded() {
        let mk = |t: u64, g: &str| {
            let mut s = step("m", t, &[], 0, 0.0);
            s.state.insert("g".into(), StateValue::Text(g.into()));
            s
        };
        let eps =
            vec![Episode::new("m", vec![mk(0, "x"), mk(1, "x"), mk(2, "x"), mk(3, "y")]).unwrap()];
        let fm = build_feature_map(&slices(&eps), 64).unwrap();
        let raw = fm.raw(&mk(0, "y").state, 0, 0.0);
        assert_eq!(raw[0], 0.25);
        let raw = fm.raw(&mk(0, "unseen").state, 0, 0.0);
        assert_eq!(raw[0], 0.0);
    }
}
