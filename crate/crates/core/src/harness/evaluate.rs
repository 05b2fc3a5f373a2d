//! Policy comparison, sensitivity sweep, and efficiency frontier over a
//! featurized evaluation set.

use serde::{Deserialize, Serialize};

use super::artifact::PolicyArtifact;
use super::config::{ModelConfig, SweepConfig};
use super::train::{BOOTSTRAP_STREAM, PERMUTATION_STREAM};
use crate::baselines::{decide, PolicyName, PolicySpec, StateContext};
use crate::deliberation::DialConfig;
use crate::error::{Error, Result};
use crate::exec::{derive_seed, Exec};
use crate::fitted_q::FittedQ;
use crate::ope::{
    dr_per_episode, fqe_with, mean, paired_bootstrap, randomization_test, EstimateMethod,
    FqeConfig, FqeOutput, ValueEstimate,
};
use crate::table::ActionTable;
use crate::trajectory::TransitionSet;

/// Evaluation transitions with every per-state quantity the policies need,
/// computed once.
pub struct Evaluator<'a> {
    pub artifact: &'a PolicyArtifact,
    pub data: TransitionSet,
    pub contexts: Vec<StateContext>,
}

impl<'a> Evaluator<'a> {
    /// `max_k` bounds the neighbourhood size any later query may use.
    pub fn new(
        artifact: &'a PolicyArtifact,
        data: TransitionSet,
        max_k: usize,
        exec: Exec,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("evaluation set has no transitions".into()));
        }
        if data.width() != artifact.feature_map.width() {
            return Err(Error::LengthMismatch {
                expected: artifact.feature_map.width(),
                actual: data.width(),
            });
        }
        let contexts = exec
            .map(data.len(), |i| {
                StateContext::build(artifact, data.row(i), max_k)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            artifact,
            data,
            contexts,
        })
    }

    pub fn max_k(&self) -> usize {
        self.contexts.first().map_or(0, |c| c.neighbors.len())
    }

    pub fn n_episodes(&self) -> usize {
        self.data.episodes.len()
    }

    /// Action distribution of a policy at every evaluation row.
    pub fn policy_table(
        &self,
        name: PolicyName,
        dials: &DialConfig,
        exec: Exec,
    ) -> Result<ActionTable> {
        dials.validate()?;
        if name.uses_neighbors()
            && dials.k > self.max_k()
            && self.max_k() < self.artifact.calibration.len()
        {
            return Err(Error::Config(format!(
                "K = {} exceeds the {} neighbours precomputed for this evaluation",
                dials.k,
                self.max_k()
            )));
        }
        let rows = exec
            .map(self.contexts.len(), |i| {
                decide(name, self.artifact, &self.contexts[i], dials).map(|d| d.probs)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        ActionTable::from_rows(self.artifact.action_count, rows)
    }

    /// Mean normalized cost of the policy's action at episode-start states.
    pub fn start_cost(&self, policy: &ActionTable) -> f64 {
        let costs = &self.artifact.costs.normalized;
        let per_start: Vec<f64> = self
            .data
            .episodes
            .iter()
            .map(|ep| {
                policy
                    .row(ep.start)
                    .iter()
                    .zip(costs)
                    .map(|(p, c)| p * c)
                    .sum()
            })
            .collect();
        mean(&per_start)
    }

    pub fn fitted_q(&self, fqe: &FqeConfig, exec: Exec) -> Result<FittedQ<'_>> {
        FittedQ::new(&self.data, None, fqe.basis, fqe.ridge, exec)
    }
}

pub fn fqe_config(model: &ModelConfig, iterations: usize) -> FqeConfig {
    FqeConfig {
        gamma: model.gamma,
        iterations,
        ridge: model.ridge,
        basis: model.basis,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: String,
    pub name: String,
    pub v0: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub v0_dr: f64,
    pub dr_ci_low: f64,
    pub dr_ci_high: f64,
    pub expected_cost: f64,
    pub delta_vs_ttl_itd: f64,
    pub delta_ci_low: f64,
    pub delta_ci_high: f64,
    pub p_value: f64,
    pub n_episodes: usize,
}

pub const COMPARISON_HEADER: [&str; 14] = [
    "policy",
    "name",
    "v0",
    "ci_low",
    "ci_high",
    "v0_dr",
    "dr_ci_low",
    "dr_ci_high",
    "expected_cost",
    "delta_vs_ttl_itd",
    "delta_ci_low",
    "delta_ci_high",
    "p_value",
    "n_episodes",
];

struct PolicyEval {
    fqe: FqeOutput,
    table: ActionTable,
}

fn run_policy(
    ev: &Evaluator<'_>,
    problem: &FittedQ<'_>,
    spec: &PolicySpec,
    fqe: &FqeConfig,
    exec: Exec,
) -> Result<PolicyEval> {
    let table = ev.policy_table(spec.name, spec.dials(ev.artifact), exec)?;
    let out = fqe_with(problem, &ev.data, &table, fqe.gamma, fqe.iterations, exec)?;
    Ok(PolicyEval { fqe: out, table })
}

/// FQE and DR values, start-state cost, and paired comparison against
/// TTL+ITD under the artifact's dials; rows ascend by FQE value.
pub fn evaluate_policies(
    ev: &Evaluator<'_>,
    specs: &[PolicySpec],
    model: &ModelConfig,
    seed: u64,
    exec: Exec,
) -> Result<(Vec<ComparisonRow>, Vec<String>)> {
    let fqe = fqe_config(model, model.fqe_iterations);
    let problem = ev.fitted_q(&fqe, exec)?;
    let reference = run_policy(
        ev,
        &problem,
        &PolicySpec::new(PolicyName::TtlItd),
        &fqe,
        exec,
    )?;
    let behavior = ev.policy_table(PolicyName::Bc, &ev.artifact.dials, exec)?;
    let boot_seed = derive_seed(seed, BOOTSTRAP_STREAM);
    let perm_seed = derive_seed(seed, PERMUTATION_STREAM);
    let mut warnings = Vec::new();
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let PolicyEval { fqe: out, table } = run_policy(ev, &problem, spec, &fqe, exec)?;
        let fqe_est = ValueEstimate::from_episode_values(
            &out.per_episode,
            EstimateMethod::Fqe,
            model.bootstrap_resamples,
            boot_seed,
            exec,
        )?;
        let q_table = ActionTable::evaluate(&ev.data, exec, |x| out.q.q_all(x))?;
        let (dr_values, dr_warnings) =
            dr_per_episode(&ev.data, &table, &behavior, &q_table, fqe.gamma)?;
        warnings.extend(
            dr_warnings
                .into_iter()
                .map(|w| format!("{}: DR {w}", spec.name)),
        );
        let dr_est = ValueEstimate::from_episode_values(
            &dr_values,
            EstimateMethod::Dr,
            model.bootstrap_resamples,
            boot_seed,
            exec,
        )?;
        let (delta, p_value) = if ev.n_episodes() >= 2 && model.bootstrap_resamples > 0 {
            let pb = paired_bootstrap(
                &out.per_episode,
                &reference.fqe.per_episode,
                model.bootstrap_resamples,
                boot_seed,
                exec,
            )?;
            let p = randomization_test(
                &out.per_episode,
                &reference.fqe.per_episode,
                model.permutations,
                perm_seed,
                exec,
            )?;
            (pb, p)
        } else {
            let d = mean(&out.per_episode) - mean(&reference.fqe.per_episode);
            (
                crate::ope::PairedBootstrap {
                    delta_mean: d,
                    ci_low: d,
                    ci_high: d,
                },
                1.0,
            )
        };
        rows.push(ComparisonRow {
            policy: spec.name.as_str().to_string(),
            name: spec.name.display_name().to_string(),
            v0: fqe_est.v0,
            ci_low: fqe_est.ci_low,
            ci_high: fqe_est.ci_high,
            v0_dr: dr_est.v0,
            dr_ci_low: dr_est.ci_low,
            dr_ci_high: dr_est.ci_high,
            expected_cost: ev.start_cost(&table),
            delta_vs_ttl_itd: delta.delta_mean,
            delta_ci_low: delta.ci_low,
            delta_ci_high: delta.ci_high,
            p_value,
            n_episodes: ev.n_episodes(),
        });
    }
    // stable: equal values keep the order they were requested in
    rows.sort_by(|a, b| a.v0.total_cmp(&b.v0));
    Ok((rows, warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub beta: f64,
    pub lambda: f64,
    pub v0_ttl_itd: f64,
    pub v0_itd_only: f64,
    pub v0_ttl_only: f64,
    pub v0_bc: f64,
    pub expected_cost: f64,
}

pub const SWEEP_HEADER: [&str; 8] = [
    "k",
    "beta",
    "lambda",
    "v0_ttl_itd",
    "v0_itd_only",
    "v0_ttl_only",
    "v0_bc",
    "expected_cost",
];

/// Every `(K, β, λ)` cell in grid order (K outermost, λ innermost), each
/// evaluated with the lightweight FQE setting.
pub fn sweep(
    ev: &Evaluator<'_>,
    grid: &SweepConfig,
    dials: &DialConfig,
    model: &ModelConfig,
    exec: Exec,
) -> Result<Vec<SweepRow>> {
    if grid.k.is_empty() || grid.beta.is_empty() || grid.lambda.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let fqe = fqe_config(model, model.sweep_fqe_iterations);
    let problem = ev.fitted_q(&fqe, exec)?;
    let cells: Vec<(usize, f64, f64)> = grid
        .k
        .iter()
        .flat_map(|&k| {
            grid.beta
                .iter()
                .flat_map(move |&b| grid.lambda.iter().map(move |&l| (k, b, l)))
        })
        .collect();
    let value = |name: PolicyName, d: &DialConfig| -> Result<(f64, ActionTable)> {
        let table = ev.policy_table(name, d, Exec::Sequential)?;
        let out = fqe_with(
            &problem,
            &ev.data,
            &table,
            fqe.gamma,
            fqe.iterations,
            Exec::Sequential,
        )?;
        Ok((out.v0(), table))
    };
    let (v0_bc, _) = value(PolicyName::Bc, dials)?;
    exec.map_slice(&cells, |&(k, beta, lambda)| {
        let d = DialConfig {
            k,
            beta,
            lambda,
            ..dials.clone()
        };
        let (v0_ttl_itd, table) = value(PolicyName::TtlItd, &d)?;
        Ok(SweepRow {
            k,
            beta,
            lambda,
            v0_ttl_itd,
            v0_itd_only: value(PolicyName::ItdOnly, &d)?.0,
            v0_ttl_only: value(PolicyName::TtlOnly, &d)?.0,
            v0_bc,
            expected_cost: ev.start_cost(&table),
        })
    })
    .into_iter()
    .collect()
}

/// Sweep rows ordered by TTL+ITD value, best first.
pub fn ranked(rows: &[SweepRow]) -> Vec<SweepRow> {
    let mut out = rows.to_vec();
    out.sort_by(|a, b| b.v0_ttl_itd.total_cmp(&a.v0_ttl_itd));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub k: usize,
    pub beta: f64,
    pub lambda: f64,
    pub policy: String,
    pub v0: f64,
}

pub const HEATMAP_HEADER: [&str; 5] = ["k", "beta", "lambda", "policy", "v0"];

/// Long-format view of sweep rows, one line per cell and policy.
pub fn heatmap(rows: &[SweepRow]) -> Vec<HeatmapCell> {
    rows.iter()
        .flat_map(|r| {
            [
                (PolicyName::TtlItd, r.v0_ttl_itd),
                (PolicyName::ItdOnly, r.v0_itd_only),
                (PolicyName::TtlOnly, r.v0_ttl_only),
                (PolicyName::Bc, r.v0_bc),
            ]
            .map(|(p, v0)| HeatmapCell {
                k: r.k,
                beta: r.beta,
                lambda: r.lambda,
                policy: p.as_str().to_string(),
                v0,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub lambda_cost: f64,
    pub expected_cost: f64,
    pub v0: f64,
}

pub const FRONTIER_HEADER: [&str; 3] = ["lambda_cost", "expected_cost", "v0"];

/// TTL+ITD start-state cost and value for each cost penalty, sorted by
/// penalty.
pub fn frontier(
    ev: &Evaluator<'_>,
    lambda_costs: &[f64],
    dials: &DialConfig,
    fqe: &FqeConfig,
    exec: Exec,
) -> Result<Vec<FrontierRow>> {
    if lambda_costs.is_empty() {
        return Err(Error::Config(
            "frontier needs at least one lambda_cost".into(),
        ));
    }
    let mut lambdas = lambda_costs.to_vec();
    lambdas.sort_by(f64::total_cmp);
    let problem = ev.fitted_q(fqe, exec)?;
    exec.map_slice(&lambdas, |&lambda_cost| {
        let d = DialConfig {
            lambda_cost,
            ..dials.clone()
        };
        let table = ev.policy_table(PolicyName::TtlItd, &d, Exec::Sequential)?;
        let out = fqe_with(
            &problem,
            &ev.data,
            &table,
            fqe.gamma,
            fqe.iterations,
            Exec::Sequential,
        )?;
        Ok(FrontierRow {
            lambda_cost,
            expected_cost: ev.start_cost(&table),
            v0: out.v0(),
        })
    })
    .into_iter()
    .collect()
}
