//! Off-policy evaluation: fitted Q evaluation, step-wise doubly robust
//! estimation, and episode-level paired bootstrap / sign-flip tests.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{derive_seed, Exec};
use crate::fitted_q::{FittedQ, LinearQ, QBasis};
use crate::linalg::quantile_sorted;
use crate::table::ActionTable;
use crate::trajectory::TransitionSet;

/// Behaviour probabilities below this are clipped when forming ratios.
pub const MIN_BEHAVIOR_PROB: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    Fqe,
    Dr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub v0: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub method: EstimateMethod,
    pub n_episodes: usize,
    pub seed: u64,
}

impl ValueEstimate {
    /// Mean of per-episode values with a percentile bootstrap 95% interval.
    pub fn from_episode_values(
        values: &[f64],
        method: EstimateMethod,
        resamples: usize,
        seed: u64,
        exec: Exec,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty(
                "value estimate needs at least one episode".into(),
            ));
        }
        let v0 = mean(values);
        let (ci_low, ci_high) = if resamples == 0 {
            (v0, v0)
        } else {
            percentile_ci(bootstrap_means(
                values.len(),
                resamples,
                seed,
                exec,
                |idx| idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64,
            ))
        };
        Ok(Self {
            v0,
            ci_low,
            ci_high,
            method,
            n_episodes: values.len(),
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FqeConfig {
    pub gamma: f64,
    pub iterations: usize,
    pub ridge: f64,
    pub basis: QBasis,
}

impl Default for FqeConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            iterations: 15,
            ridge: 1e-2,
            basis: QBasis::Additive,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FqeOutput {
    pub q: LinearQ,
    /// `E_{a∼π} Q(s_0, a)` for each episode.
    pub per_episode: Vec<f64>,
}

impl FqeOutput {
    pub fn v0(&self) -> f64 {
        mean(&self.per_episode)
    }
}

/// Fitted Q evaluation of `policy` (one probability row per transition).
pub fn fqe(
    data: &TransitionSet,
    policy: &ActionTable,
    config: &FqeConfig,
    exec: Exec,
) -> Result<FqeOutput> {
    let problem = FittedQ::new(data, None, config.basis, config.ridge, exec)?;
    fqe_with(
        &problem,
        data,
        policy,
        config.gamma,
        config.iterations,
        exec,
    )
}

/// FQE over an already factored problem; sweeps reuse one factorization for
/// many policies.
pub fn fqe_with(
    problem: &FittedQ<'_>,
    data: &TransitionSet,
    policy: &ActionTable,
    gamma: f64,
    iterations: usize,
    exec: Exec,
) -> Result<FqeOutput> {
    let q = problem.iterate(policy, gamma, iterations, exec)?;
    let per_episode = data
        .episodes
        .iter()
        .map(|ep| {
            let s = ep.start;
            policy
                .row(s)
                .iter()
                .zip(q.q_all(data.row(s)))
                .map(|(p, v)| p * v)
                .sum()
        })
        .collect();
    Ok(FqeOutput { q, per_episode })
}

/// Per-episode step-wise doubly robust values.
///
/// `V_t = E_{a∼π} Q(s_t, a) + ρ_t (r_t + γ V_{t+1} − Q(s_t, a_t))` with
/// `ρ_t = π(a_t|s_t) / b(a_t|s_t)` and `V` past the last step equal to 0.
/// Returns the values and any clipping warnings.
pub fn dr_per_episode(
    data: &TransitionSet,
    target: &ActionTable,
    behavior: &ActionTable,
    q_values: &ActionTable,
    gamma: f64,
) -> Result<(Vec<f64>, Vec<String>)> {
    for t in [target, behavior, q_values] {
        if t.rows() != data.len() {
            return Err(Error::LengthMismatch {
                expected: data.len(),
                actual: t.rows(),
            });
        }
    }
    let mut clipped = 0usize;
    let mut values = Vec::with_capacity(data.episodes.len());
    for ep in &data.episodes {
        let mut v = 0.0;
        for i in ep.clone().rev() {
            let a = data.actions[i];
            let mut b = behavior.row(i)[a];
            if b <= 0.0 {
                return Err(Error::NoSupport { step: i, action: a });
            }
            if b < MIN_BEHAVIOR_PROB {
                b = MIN_BEHAVIOR_PROB;
                clipped += 1;
            }
            let rho = target.row(i)[a] / b;
            let q = q_values.row(i);
            v = target.row_dot(q_values, i) + rho * (data.rewards[i] + gamma * v - q[a]);
        }
        values.push(v);
    }
    let mut warnings = Vec::new();
    if clipped > 0 {
        let msg = format!("clipped {clipped} behaviour probabilities below {MIN_BEHAVIOR_PROB}");
        warn!("{msg}");
        warnings.push(msg);
    }
    Ok((values, warnings))
}

/// Doubly robust value estimate with a bootstrap interval over episodes.
#[allow(clippy::too_many_arguments)]
pub fn dr_estimate(
    data: &TransitionSet,
    target: &ActionTable,
    behavior: &ActionTable,
    q_values: &ActionTable,
    gamma: f64,
    resamples: usize,
    seed: u64,
    exec: Exec,
) -> Result<ValueEstimate> {
    let (values, _) = dr_per_episode(data, target, behavior, q_values, gamma)?;
    ValueEstimate::from_episode_values(&values, EstimateMethod::Dr, resamples, seed, exec)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedBootstrap {
    pub delta_mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Validation(format!(
            "paired tests need at least 2 episodes, got {}",
            a.len()
        )));
    }
    Ok(())
}

/// Percentile 95% interval of `mean(a − b)` over episode resamples.
pub fn paired_bootstrap(
    a: &[f64],
    b: &[f64],
    resamples: usize,
    seed: u64,
    exec: Exec,
) -> Result<PairedBootstrap> {
    check_pair(a, b)?;
    if resamples == 0 {
        return Err(Error::Config(
            "bootstrap needs at least one resample".into(),
        ));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let stats = bootstrap_means(diffs.len(), resamples, seed, exec, |idx| {
        idx.iter().map(|&i| diffs[i]).sum::<f64>() / idx.len() as f64
    });
    let (ci_low, ci_high) = percentile_ci(stats);
    Ok(PairedBootstrap {
        delta_mean: mean(&diffs),
        ci_low,
        ci_high,
    })
}

/// Two-sided paired sign-flip test on `mean(a − b)`:
/// `p = (1 + #{|T_perm| ≥ |T_obs|}) / (R + 1)`.
pub fn randomization_test(
    a: &[f64],
    b: &[f64],
    permutations: usize,
    seed: u64,
    exec: Exec,
) -> Result<f64> {
    check_pair(a, b)?;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let observed = (diffs.iter().sum::<f64>() / n).abs();
    // sums of the same magnitudes in another order may differ in the last bits
    let tol = 1e-12 * diffs.iter().map(|d| d.abs()).sum::<f64>() / n;
    let hits = exec.map(permutations, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r as u64));
        let t: f64 = diffs
            .iter()
            .map(|d| if rng.gen::<bool>() { *d } else { -*d })
            .sum::<f64>()
            / n;
        usize::from(t.abs() >= observed - tol)
    });
    Ok((1 + hits.iter().sum::<usize>()) as f64 / (permutations + 1) as f64)
}

fn bootstrap_means<F>(n: usize, resamples: usize, seed: u64, exec: Exec, stat: F) -> Vec<f64>
where
    F: Fn(&[usize]) -> f64 + Sync + Send,
{
    exec.map(resamples, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r as u64));
        let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        stat(&idx)
    })
}

fn percentile_ci(mut stats: Vec<f64>) -> (f64, f64) {
    stats.sort_by(f64::total_cmp);
    (
        quantile_sorted(&stats, 0.025),
        quantile_sorted(&stats, 0.975),
    )
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
