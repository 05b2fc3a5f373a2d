//! Action-conditional harm probability.
//!
//! Binary logistic regression on `[x; onehot(a)]` with an unpenalized bias.
//! The label is `reward < 0`. Samples are weighted by inverse class
//! frequency normalized to mean one, and the data term is the weighted mean
//! negative log-likelihood, so rescaling both class weights leaves the
//! objective unchanged.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{dot, sigmoid, softplus, FeatureMatrix};
use crate::optim::{minimize, FitReport, GdHyper};
use crate::trajectory::TransitionSet;

/// Probability floor/ceiling for constant models.
const RATE_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskModel {
    /// Feature weights followed by one weight per action indicator.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub action_count: usize,
    /// `(negative, positive)` class weights used in training.
    pub class_weights: (f64, f64),
    pub report: FitReport,
}

impl RiskModel {
    pub fn width(&self) -> usize {
        self.weights.len() - self.action_count
    }

    pub fn logit(&self, x: &[f64], action: usize) -> f64 {
        dot(&self.weights[..self.width()], x) + self.weights[self.width() + action] + self.bias
    }

    pub fn p_harm(&self, x: &[f64], action: usize) -> Result<f64> {
        if action >= self.action_count {
            return Err(Error::ActionOutOfRange {
                action,
                action_count: self.action_count,
            });
        }
        Ok(sigmoid(self.logit(x, action)))
    }

    /// Harm probability of every action.
    pub fn p_harm_all(&self, x: &[f64]) -> Vec<f64> {
        let w = self.width();
        let base = dot(&self.weights[..w], x) + self.bias;
        self.weights[w..]
            .iter()
            .map(|wa| sigmoid(base + wa))
            .collect()
    }
}

/// Training rows for the risk objective.
pub struct RiskData<'a> {
    pub features: &'a FeatureMatrix,
    pub actions: &'a [usize],
    pub labels: &'a [f64],
    pub sample_weights: &'a [f64],
    pub action_count: usize,
}

impl RiskData<'_> {
    fn dim(&self) -> usize {
        self.features.width() + self.action_count + 1
    }

    fn z(&self, params: &[f64], i: usize) -> f64 {
        let w = self.features.width();
        dot(&params[..w], self.features.row(i))
            + params[w + self.actions[i]]
            + params[self.dim() - 1]
    }
}

/// Objective at `params = [feature weights, action weights, bias]`.
pub fn risk_objective(params: &[f64], data: &RiskData<'_>, l2: f64) -> f64 {
    let n = data.actions.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        let z = data.z(params, i);
        let w = data.sample_weights[i];
        num += w * (softplus(z) - data.labels[i] * z);
        den += w;
    }
    let penalty: f64 = params[..params.len() - 1].iter().map(|p| p * p).sum();
    num / den + 0.5 * l2 * penalty
}

/// Analytic gradient of [`risk_objective`].
pub fn risk_gradient(params: &[f64], data: &RiskData<'_>, l2: f64, exec: Exec) -> Vec<f64> {
    let (_, g) = loss_and_gradient(params, data, l2, exec);
    g
}

fn loss_and_gradient(params: &[f64], data: &RiskData<'_>, l2: f64, exec: Exec) -> (f64, Vec<f64>) {
    let d = data.dim();
    let width = data.features.width();
    // accumulator layout: [gradient (d), loss numerator, weight sum]
    let acc = exec.chunked_sum(data.actions.len(), d + 2, |rows, acc| {
        for i in rows {
            let z = data.z(params, i);
            let w = data.sample_weights[i];
            let r = w * (sigmoid(z) - data.labels[i]);
            for (g, x) in acc[..width].iter_mut().zip(data.features.row(i)) {
                *g += r * x;
            }
            acc[width + data.actions[i]] += r;
            acc[d - 1] += r;
            acc[d] += w * (softplus(z) - data.labels[i] * z);
            acc[d + 1] += w;
        }
    });
    let den = acc[d + 1];
    let mut grad: Vec<f64> = acc[..d].iter().map(|g| g / den).collect();
    let mut penalty = 0.0;
    for (g, p) in grad[..d - 1].iter_mut().zip(params) {
        *g += l2 * p;
        penalty += p * p;
    }
    (acc[d] / den + 0.5 * l2 * penalty, grad)
}

/// Inverse class frequency weights normalized to mean one: `(w_neg, w_pos)`.
pub fn class_weights(labels: &[f64]) -> (f64, f64) {
    let n = labels.len() as f64;
    let pos = labels.iter().filter(|&&y| y > 0.5).count() as f64;
    let neg = n - pos;
    if pos == 0.0 || neg == 0.0 {
        return (1.0, 1.0);
    }
    (n / (2.0 * neg), n / (2.0 * pos))
}

/// Fits the risk model on training transitions.
pub fn fit_risk(train: &TransitionSet, hyper: &GdHyper, exec: Exec) -> Result<RiskModel> {
    let labels: Vec<f64> = train
        .rewards
        .iter()
        .map(|&r| if r < 0.0 { 1.0 } else { 0.0 })
        .collect();
    fit_risk_weighted(train, &labels, class_weights(&labels), hyper, exec)
}

/// As [`fit_risk`] with explicit labels and class weights.
pub fn fit_risk_weighted(
    train: &TransitionSet,
    labels: &[f64],
    class_weights: (f64, f64),
    hyper: &GdHyper,
    exec: Exec,
) -> Result<RiskModel> {
    let n = train.len();
    if n == 0 {
        return Err(Error::Empty("risk model needs training steps".into()));
    }
    let a = train.action_count;
    let width = train.width();
    let rate = labels.iter().sum::<f64>() / n as f64;
    if rate == 0.0 || rate == 1.0 {
        let msg = format!(
            "all training labels are {}; risk model is the constant class rate",
            rate as u8
        );
        warn!("{msg}");
        let p = rate.clamp(RATE_CLAMP, 1.0 - RATE_CLAMP);
        return Ok(RiskModel {
            weights: vec![0.0; width + a],
            bias: (p / (1.0 - p)).ln(),
            action_count: a,
            class_weights,
            report: FitReport {
                converged: true,
                warnings: vec![msg],
                ..FitReport::default()
            },
        });
    }
    let sample_weights: Vec<f64> = labels
        .iter()
        .map(|&y| {
            if y > 0.5 {
                class_weights.1
            } else {
                class_weights.0
            }
        })
        .collect();
    let data = RiskData {
        features: &train.features,
        actions: &train.actions,
        labels,
        sample_weights: &sample_weights,
        action_count: a,
    };
    let mut params = vec![0.0; width + a + 1];
    let report = minimize(&mut params, hyper, |p| {
        loss_and_gradient(p, &data, hyper.l2, exec)
    });
    if !report.converged {
        warn!(
            "risk model stopped at epoch cap {} (grad norm {:.3e})",
            report.epochs_run, report.final_grad_norm
        );
    }
    let bias = params.pop().expect("bias present");
    Ok(RiskModel {
        weights: params,
        bias,
        action_count: a,
        class_weights,
        report,
    })
}
