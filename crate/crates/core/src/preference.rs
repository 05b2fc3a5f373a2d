//! Multinomial action-preference model, the conformally safe training
//! subset, and the neighbourhood blend.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::conformal::Threshold;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{dot, softmax_in_place, FeatureMatrix};
use crate::optim::{minimize, FitReport, GdHyper};
use crate::risk::RiskModel;
use crate::trajectory::TransitionSet;

/// Logit given to the only observed action of a single-action training set.
const DEGENERATE_LOGIT: f64 = 25.0;

/// Default blend weight of the neighbourhood prior.
pub const DEFAULT_ETA: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceModel {
    /// Row-major `action_count × width`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub width: usize,
    pub report: FitReport,
}

impl PreferenceModel {
    pub fn action_count(&self) -> usize {
        self.biases.len()
    }

    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        let mut z = logits(&self.weights, &self.biases, self.width, x);
        softmax_in_place(&mut z);
        z
    }
}

fn logits(weights: &[f64], biases: &[f64], width: usize, x: &[f64]) -> Vec<f64> {
    biases
        .iter()
        .enumerate()
        .map(|(a, b)| dot(&weights[a * width..(a + 1) * width], x) + b)
        .collect()
}

/// Training rows for the softmax objective.
pub struct PreferenceData<'a> {
    pub features: &'a FeatureMatrix,
    pub actions: &'a [usize],
    pub action_count: usize,
}

/// Mean NLL + `l2/2·‖W‖²` at `params = [W (row-major), b]`.
pub fn preference_objective(params: &[f64], data: &PreferenceData<'_>, l2: f64) -> f64 {
    loss_and_gradient(params, data, l2, Exec::Sequential).0
}

pub fn preference_gradient(
    params: &[f64],
    data: &PreferenceData<'_>,
    l2: f64,
    exec: Exec,
) -> Vec<f64> {
    loss_and_gradient(params, data, l2, exec).1
}

fn loss_and_gradient(
    params: &[f64],
    data: &PreferenceData<'_>,
    l2: f64,
    exec: Exec,
) -> (f64, Vec<f64>) {
    let a_count = data.action_count;
    let width = data.features.width();
    let nw = a_count * width;
    let (w, b) = params.split_at(nw);
    let n = data.actions.len();
    let acc = exec.chunked_sum(n, nw + a_count + 1, |rows, acc| {
        for i in rows {
            let x = data.features.row(i);
            let mut p = logits(w, b, width, x);
            let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + p.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            acc[nw + a_count] += lse - p[data.actions[i]];
            softmax_in_place(&mut p);
            p[data.actions[i]] -= 1.0;
            for (a, r) in p.iter().enumerate() {
                for (g, xv) in acc[a * width..(a + 1) * width].iter_mut().zip(x) {
                    *g += r * xv;
                }
                acc[nw + a] += r;
            }
        }
    });
    let inv = 1.0 / n as f64;
    let mut grad: Vec<f64> = acc[..nw + a_count].iter().map(|g| g * inv).collect();
    let mut penalty = 0.0;
    for (g, p) in grad[..nw].iter_mut().zip(w) {
        *g += l2 * p;
        penalty += p * p;
    }
    (acc[nw + a_count] * inv + 0.5 * l2 * penalty, grad)
}

/// Multinomial logistic fit by gradient descent.
pub fn fit_preference(
    features: &FeatureMatrix,
    actions: &[usize],
    action_count: usize,
    hyper: &GdHyper,
    exec: Exec,
) -> Result<PreferenceModel> {
    if actions.is_empty() {
        return Err(Error::Empty(
            "preference model needs at least one step".into(),
        ));
    }
    if features.width() > 0 && features.rows() != actions.len() {
        return Err(Error::LengthMismatch {
            expected: actions.len(),
            actual: features.rows(),
        });
    }
    if let Some(&a) = actions.iter().find(|&&a| a >= action_count) {
        return Err(Error::ActionOutOfRange {
            action: a,
            action_count,
        });
    }
    let width = features.width();
    let first = actions[0];
    if actions.iter().all(|&a| a == first) {
        let msg = format!("only action {first} present; preference model is degenerate");
        warn!("{msg}");
        let mut biases = vec![0.0; action_count];
        biases[first] = DEGENERATE_LOGIT;
        return Ok(PreferenceModel {
            weights: vec![0.0; action_count * width],
            biases,
            width,
            report: FitReport {
                converged: true,
                warnings: vec![msg],
                ..FitReport::default()
            },
        });
    }
    let data = PreferenceData {
        features,
        actions,
        action_count,
    };
    let mut params = vec![0.0; action_count * (width + 1)];
    let report = minimize(&mut params, hyper, |p| {
        loss_and_gradient(p, &data, hyper.l2, exec)
    });
    if !report.converged {
        warn!(
            "preference model stopped at epoch cap {} (grad norm {:.3e})",
            report.epochs_run, report.final_grad_norm
        );
    }
    let biases = params.split_off(action_count * width);
    Ok(PreferenceModel {
        weights: params,
        biases,
        width,
        report,
    })
}

/// Behaviour cloning: the preference fit on the unfiltered training split.
pub fn fit_bc(train: &TransitionSet, hyper: &GdHyper, exec: Exec) -> Result<PreferenceModel> {
    fit_preference(
        &train.features,
        &train.actions,
        train.action_count,
        hyper,
        exec,
    )
}

/// Rows whose logged action has `p_harm < τ`; everything under no-gate.
pub fn safe_subset(train: &TransitionSet, risk: &RiskModel, tau: Threshold) -> Result<Vec<usize>> {
    let keep: Vec<usize> = (0..train.len())
        .filter(|&i| tau.admits(risk.p_harm_all(train.row(i))[train.actions[i]]))
        .collect();
    if keep.is_empty() {
        return Err(Error::Empty(format!(
            "safe subset is empty at threshold {tau}; increase alpha to admit more steps"
        )));
    }
    Ok(keep)
}

/// `(1−η)·base + η·freq`.
pub fn blend(base: &[f64], freq: &[f64], eta: f64) -> Result<Vec<f64>> {
    if base.len() != freq.len() {
        return Err(Error::LengthMismatch {
            expected: base.len(),
            actual: freq.len(),
        });
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Config(format!("eta must lie in [0, 1], got {eta}")));
    }
    let mut out: Vec<f64> = base
        .iter()
        .zip(freq)
        .map(|(b, f)| (1.0 - eta) * b + eta * f)
        .collect();
    let sum: f64 = out.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        out.iter_mut().for_each(|p| *p /= sum);
    }
    Ok(out)
}
