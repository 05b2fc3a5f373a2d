//! Bootstrap-by-episode ensemble of linear fitted-Q models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{derive_seed, Exec};
use crate::fitted_q::{FittedQ, LinearQ, QBasis};
use crate::table::ActionTable;
use crate::trajectory::TransitionSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub members: usize,
    pub gamma: f64,
    pub iterations: usize,
    pub ridge: f64,
    pub basis: QBasis,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: 10,
            gamma: 0.99,
            iterations: 15,
            ridge: 1e-2,
            basis: QBasis::Additive,
            seed: 0,
        }
    }
}

/// Episode resampling scheme; recorded in manifests.
pub const RESAMPLING: &str = "episode bootstrap with replacement, n_episodes draws per member";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QEnsemble {
    pub members: Vec<LinearQ>,
    pub gamma: f64,
    pub iterations: usize,
}

impl QEnsemble {
    /// Mean and sample standard deviation (divisor `M − 1`) of `Q(x, a)`.
    pub fn q_stats(&self, x: &[f64], a: usize) -> (f64, f64) {
        let vals: Vec<f64> = self.members.iter().map(|m| m.q(x, a)).collect();
        mean_std(&vals)
    }

    /// Per-action means and standard deviations.
    pub fn q_stats_all(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let per_member: Vec<Vec<f64>> = self.members.iter().map(|m| m.q_all(x)).collect();
        let a_count = per_member[0].len();
        (0..a_count)
            .map(|a| {
                let vals: Vec<f64> = per_member.iter().map(|m| m[a]).collect();
                mean_std(&vals)
            })
            .unzip()
    }
}

pub(crate) fn mean_std(vals: &[f64]) -> (f64, f64) {
    let m = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / m;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
    (mean, var.sqrt())
}

/// Multiplicity of each episode in one bootstrap draw.
pub fn bootstrap_counts(n_episodes: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; n_episodes];
    for _ in 0..n_episodes {
        counts[rng.gen_range(0..n_episodes)] += 1;
    }
    counts
}

/// Fits `config.members` linear FQE models, each on an episode bootstrap of
/// `data`, evaluating next states under `policy` (one row per transition).
/// Member `m` draws from `derive_seed(config.seed, m)`, so results do not
/// depend on execution order.
pub fn fit_ensemble(
    data: &TransitionSet,
    policy: &ActionTable,
    config: &EnsembleConfig,
    exec: Exec,
) -> Result<QEnsemble> {
    if config.members < 2 {
        return Err(Error::Config(format!(
            "ensemble needs at least 2 members, got {}",
            config.members
        )));
    }
    if data.episodes.is_empty() {
        return Err(Error::Empty("ensemble needs at least one episode".into()));
    }
    let fits = exec.map(config.members, |m| -> Result<LinearQ> {
        let counts = bootstrap_counts(data.episodes.len(), derive_seed(config.seed, m as u64));
        let mut weights = vec![0.0; data.len()];
        for (ep, &c) in data.episodes.iter().zip(&counts) {
            weights[ep.clone()].fill(c as f64);
        }
        let problem = FittedQ::new(
            data,
            Some(weights),
            config.basis,
            config.ridge,
            Exec::Sequential,
        )?;
        problem.iterate(policy, config.gamma, config.iterations, Exec::Sequential)
    });
    Ok(QEnsemble {
        members: fits.into_iter().collect::<Result<_>>()?,
        gamma: config.gamma,
        iterations: config.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::FeatureMatrix;

    fn member(params: Vec<f64>) -> LinearQ {
        LinearQ {
            basis: QBasis::Additive,
            width: 0,
            action_count: 1,
            params,
            lower: None,
            upper: None,
        }
    }

    #[test]
    fn two_members_mean_and_std() {
        let e = QEnsemble {
            members: vec![member(vec![0.0, 1.0]), member(vec![0.0, 3.0])],
            gamma: 0.9,
            iterations: 1,
        };
        let (m, s) = e.q_stats(&[], 0);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_member_rejected() {
        let ts =
            TransitionSet::from_parts(FeatureMatrix::new(0), vec![0], vec![0.0], &[1], 1).unwrap();
        let cfg = EnsembleConfig {
            members: 1,
            ..EnsembleConfig::default()
        };
        assert!(fit_ensemble(
            &ts,
            &ActionTable::constant(1, &[1.0]),
            &cfg,
            Exec::Sequential
        )
        .is_err());
    }

    #[test]
    fn bootstrap_counts_sum_to_n() {
        let c = bootstrap_counts(37, 5);
        assert_eq!(c.iter().sum::<usize>(), 37);
        assert_eq!(c, bootstrap_counts(37, 5));
    }
}
