//! Full-batch gradient descent with a fixed step.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GdHyper {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    /// Stop once the max-norm of the gradient falls below this.
    pub tolerance: f64,
}

impl Default for GdHyper {
    fn default() -> Self {
        Self {
            lr: 0.5,
            epochs: 500,
            l2: 1e-4,
            tolerance: 1e-6,
        }
    }
}

/// Outcome of a fit, recorded in the run manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub converged: bool,
    pub epochs_run: usize,
    pub final_loss: f64,
    pub final_grad_norm: f64,
    pub warnings: Vec<String>,
}

/// Minimizes an objective given a combined loss/gradient oracle.
pub(crate) fn minimize<F>(params: &mut [f64], hyper: &GdHyper, mut loss_grad: F) -> FitReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut report = FitReport::default();
    for epoch in 0..hyper.epochs {
        let (_, grad) = loss_grad(params);
        let norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        report.final_grad_norm = norm;
        if norm < hyper.tolerance {
            report.converged = true;
            report.epochs_run = epoch;
            break;
        }
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= hyper.lr * g;
        }
        report.epochs_run = epoch + 1;
    }
    let (loss, grad) = loss_grad(params);
    report.final_loss = loss;
    report.final_grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    report.converged |= report.final_grad_norm < hyper.tolerance;
    report
}
