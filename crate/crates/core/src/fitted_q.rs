//! Ridge-regularized linear fitted-Q iteration.
//!
//! Shared by the bootstrap Q-ensemble and fitted Q evaluation. The Gram
//! matrix depends only on the logged `(s, a)` rows and their weights, so it
//! is factored once; each Bellman sweep only rebuilds the right-hand side.
//!
//! Predictions are clamped to the attainable return range
//! `[min(0, r_min)/(1−γ), max(0, r_max)/(1−γ)]`. The true Q-function lies in
//! that range, so the clamp never moves the fixed point, but it stops the
//! linear class from extrapolating to impossible values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{cholesky, dot, Cholesky};
use crate::table::ActionTable;
use crate::trajectory::TransitionSet;

/// Linear function class for `Q(s, a)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QBasis {
    /// `w·x + w_a + b`: state weights shared across actions.
    #[default]
    Additive,
    /// `w_a·x + b_a`: one regression per action.
    PerAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearQ {
    pub basis: QBasis,
    pub width: usize,
    pub action_count: usize,
    pub params: Vec<f64>,
    /// Clamp applied to every prediction; `None` is unbounded on that side.
    #[serde(default)]
    pub lower: Option<f64>,
    #[serde(default)]
    pub upper: Option<f64>,
}

impl LinearQ {
    pub fn zeros(basis: QBasis, width: usize, action_count: usize) -> Self {
        let len = match basis {
            QBasis::Additive => width + action_count + 1,
            QBasis::PerAction => action_count * (width + 1),
        };
        Self {
            basis,
            width,
            action_count,
            params: vec![0.0; len],
            lower: None,
            upper: None,
        }
    }

    fn clamp(&self, v: f64) -> f64 {
        let v = self.lower.map_or(v, |lo| v.max(lo));
        self.upper.map_or(v, |hi| v.min(hi))
    }

    pub fn q(&self, x: &[f64], a: usize) -> f64 {
        self.clamp(self.raw_q(x, a))
    }

    fn raw_q(&self, x: &[f64], a: usize) -> f64 {
        let w = self.width;
        match self.basis {
            QBasis::Additive => {
                dot(&self.params[..w], x) + self.params[w + a] + self.params[w + self.action_count]
            }
            QBasis::PerAction => {
                let block = &self.params[a * (w + 1)..(a + 1) * (w + 1)];
                dot(&block[..w], x) + block[w]
            }
        }
    }

    pub fn q_all(&self, x: &[f64]) -> Vec<f64> {
        match self.basis {
            QBasis::Additive => {
                let w = self.width;
                let base = dot(&self.params[..w], x) + self.params[w + self.action_count];
                self.params[w..w + self.action_count]
                    .iter()
                    .map(|c| self.clamp(base + c))
                    .collect()
            }
            QBasis::PerAction => (0..self.action_count).map(|a| self.q(x, a)).collect(),
        }
    }
}

enum Factors {
    Additive(Cholesky),
    /// `None` for actions with no weighted rows; their block stays zero.
    PerAction(Vec<Option<Cholesky>>),
}

/// A factored weighted ridge problem over one dataset.
pub struct FittedQ<'a> {
    data: &'a TransitionSet,
    row_weights: Vec<f64>,
    successors: Vec<Option<usize>>,
    basis: QBasis,
    factors: Factors,
}

impl<'a> FittedQ<'a> {
    /// `row_weights` defaults to one per row; bootstrap members pass the
    /// resampling multiplicity of each row's episode.
    pub fn new(
        data: &'a TransitionSet,
        row_weights: Option<Vec<f64>>,
        basis: QBasis,
        ridge: f64,
        exec: Exec,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty(
                "fitted-Q needs at least one transition".into(),
            ));
        }
        if ridge.is_nan() || ridge <= 0.0 {
            return Err(Error::Config(format!(
                "ridge must be positive, got {ridge}"
            )));
        }
        let row_weights = row_weights.unwrap_or_else(|| vec![1.0; data.len()]);
        if row_weights.len() != data.len() {
            return Err(Error::LengthMismatch {
                expected: data.len(),
                actual: row_weights.len(),
            });
        }
        let w = data.width();
        let a_count = data.action_count;
        let factors = match basis {
            QBasis::Additive => {
                let d = w + a_count + 1;
                let mut g = exec.chunked_sum(data.len(), d * d, |rows, acc| {
                    for i in rows {
                        let wt = row_weights[i];
                        if wt == 0.0 {
                            continue;
                        }
                        let x = data.row(i);
                        let a = w + data.actions[i];
                        let b = d - 1;
                        for (r, xr) in x.iter().enumerate() {
                            let s = wt * xr;
                            for (c, xc) in x.iter().enumerate().skip(r) {
                                acc[r * d + c] += s * xc;
                            }
                            acc[r * d + a] += s;
                            acc[r * d + b] += s;
                        }
                        acc[a * d + a] += wt;
                        acc[a * d + b] += wt;
                        acc[b * d + b] += wt;
                    }
                });
                mirror_upper(&mut g, d);
                for j in 0..d - 1 {
                    g[j * d + j] += ridge;
                }
                Factors::Additive(cholesky(d, &g)?)
            }
            QBasis::PerAction => {
                let d = w + 1;
                let grams = exec.chunked_sum(data.len(), a_count * d * d, |rows, acc| {
                    for i in rows {
                        let wt = row_weights[i];
                        if wt == 0.0 {
                            continue;
                        }
                        let x = data.row(i);
                        let g = &mut acc[data.actions[i] * d * d..(data.actions[i] + 1) * d * d];
                        for (r, xr) in x.iter().enumerate() {
                            let s = wt * xr;
                            for (c, xc) in x.iter().enumerate().skip(r) {
                                g[r * d + c] += s * xc;
                            }
                            g[r * d + w] += s;
                        }
                        g[w * d + w] += wt;
                    }
                });
                let mut out = Vec::with_capacity(a_count);
                for a in 0..a_count {
                    let mut g = grams[a * d * d..(a + 1) * d * d].to_vec();
                    if g[w * d + w] == 0.0 {
                        out.push(None);
                        continue;
                    }
                    mirror_upper(&mut g, d);
                    for j in 0..w {
                        g[j * d + j] += ridge;
                    }
                    out.push(Some(cholesky(d, &g)?));
                }
                Factors::PerAction(out)
            }
        };
        Ok(Self {
            data,
            successors: data.successors(),
            row_weights,
            basis,
            factors,
        })
    }

    /// Runs `iterations` Bellman sweeps under the next-state policy,
    /// starting from `Q ≡ 0`. Terminal rows have next value 0.
    pub fn iterate(
        &self,
        next_policy: &ActionTable,
        gamma: f64,
        iterations: usize,
        exec: Exec,
    ) -> Result<LinearQ> {
        if next_policy.rows() != self.data.len()
            || next_policy.action_count() != self.data.action_count
        {
            return Err(Error::LengthMismatch {
                expected: self.data.len(),
                actual: next_policy.rows(),
            });
        }
        let mut q = LinearQ::zeros(self.basis, self.data.width(), self.data.action_count);
        (q.lower, q.upper) = return_bounds(&self.data.rewards, gamma);
        for _ in 0..iterations {
            let next_v = exec.map(self.data.len(), |i| {
                let x = self.data.row(i);
                let qa = q.q_all(x);
                next_policy
                    .row(i)
                    .iter()
                    .zip(&qa)
                    .map(|(p, v)| p * v)
                    .sum::<f64>()
            });
            let targets: Vec<f64> = (0..self.data.len())
                .map(|i| {
                    self.data.rewards[i] + self.successors[i].map_or(0.0, |j| gamma * next_v[j])
                })
                .collect();
            q.params = self.solve(&targets, exec);
        }
        Ok(q)
    }

    fn solve(&self, targets: &[f64], exec: Exec) -> Vec<f64> {
        let data = self.data;
        let w = data.width();
        let a_count = data.action_count;
        match &self.factors {
            Factors::Additive(chol) => {
                let d = w + a_count + 1;
                let rhs = exec.chunked_sum(data.len(), d, |rows, acc| {
                    for i in rows {
                        let s = self.row_weights[i] * targets[i];
                        for (g, x) in acc[..w].iter_mut().zip(data.row(i)) {
                            *g += s * x;
                        }
                        acc[w + data.actions[i]] += s;
                        acc[d - 1] += s;
                    }
                });
                chol.solve(&rhs)
            }
            Factors::PerAction(chols) => {
                let d = w + 1;
                let rhs = exec.chunked_sum(data.len(), a_count * d, |rows, acc| {
                    for i in rows {
                        let s = self.row_weights[i] * targets[i];
                        let block = &mut acc[data.actions[i] * d..(data.actions[i] + 1) * d];
                        for (g, x) in block[..w].iter_mut().zip(data.row(i)) {
                            *g += s * x;
                        }
                        block[w] += s;
                    }
                });
                let mut params = vec![0.0; a_count * d];
                for (a, chol) in chols.iter().enumerate() {
                    if let Some(c) = chol {
                        params[a * d..(a + 1) * d]
                            .copy_from_slice(&c.solve(&rhs[a * d..(a + 1) * d]));
                    }
                }
                params
            }
        }
    }
}

/// `(min(0, r_min)/(1−γ), max(0, r_max)/(1−γ))`, with `None` where the
/// bound is infinite.
pub fn return_bounds(rewards: &[f64], gamma: f64) -> (Option<f64>, Option<f64>) {
    let r_min = rewards.iter().copied().fold(0.0f64, f64::min);
    let r_max = rewards.iter().copied().fold(0.0f64, f64::max);
    let bound = |r: f64| {
        if r == 0.0 {
            Some(0.0)
        } else if gamma < 1.0 {
            Some(r / (1.0 - gamma))
        } else {
            None
        }
    };
    (bound(r_min), bound(r_max))
}

fn mirror_upper(g: &mut [f64], d: usize) {
    for r in 0..d {
        for c in 0..r {
            g[r * d + c] = g[c * d + r];
        }
    }
}
