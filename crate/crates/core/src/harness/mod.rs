//! End-to-end orchestration: training, evaluation, sweep, frontier, and
//! report emission.

mod artifact;
mod config;
mod evaluate;
mod reports;
mod train;

use std::path::Path;

pub use artifact::{component_versions, PolicyArtifact, RunManifest, SplitSummary};
pub use config::{
    default_cost_entries, CostConfig, DataConfig, ModelConfig, RunConfig, SweepConfig,
    DEFAULT_COSTS,
};
pub use evaluate::{
    evaluate_policies, fqe_config, frontier, heatmap, ranked, sweep, ComparisonRow, Evaluator,
    FrontierRow, HeatmapCell, SweepRow, COMPARISON_HEADER, FRONTIER_HEADER, HEATMAP_HEADER,
    SWEEP_HEADER,
};
pub use reports::{
    emit_reports, write_comparison, write_frontier, write_sweep, write_table, Reports,
    COMPARISON_FILE, FRONTIER_FILE, FRONTIER_PLOT_FILE, HEATMAP_FILE, HEATMAP_PLOT_FILE,
    MANIFEST_FILE, SWEEP_FILE,
};
pub use train::{load_episodes, seeds, train_pipeline, transitions, TrainOutput};

use crate::baselines::{PolicyName, PolicySpec};
use crate::error::Result;
use crate::exec::Exec;
use crate::trajectory::{write_jsonl, Episode};

pub const ARTIFACT_FILE: &str = "artifact.json";
pub const TEST_EPISODES_FILE: &str = "test_episodes.jsonl";

/// The six policies in comparison-table order.
pub fn default_specs() -> Vec<PolicySpec> {
    PolicyName::ALL.into_iter().map(PolicySpec::new).collect()
}

/// Largest neighbourhood any default query of this config will ask for.
pub fn max_k(config: &RunConfig) -> usize {
    config
        .sweep
        .k
        .iter()
        .copied()
        .chain([config.dials.k])
        .max()
        .unwrap_or(config.dials.k)
}

/// Everything a full run produces.
pub struct RunOutput {
    pub train: TrainOutput,
    pub reports: Reports,
}

/// Train, evaluate all policies, sweep, and trace the frontier.
pub fn run_all(episodes: &[Episode], config: &RunConfig, exec: Exec) -> Result<RunOutput> {
    let mut train = train_pipeline(episodes, config, exec)?;
    let data = transitions(&train.artifact, &train.test_episodes);
    let ev = Evaluator::new(&train.artifact, data, max_k(config), exec)?;
    let (comparison, warnings) =
        evaluate_policies(&ev, &default_specs(), &config.model, config.seed, exec)?;
    let sweep_rows = sweep(&ev, &config.sweep, &config.dials, &config.model, exec)?;
    let frontier_rows = frontier(
        &ev,
        &config.sweep.lambda_costs,
        &config.dials,
        &fqe_config(&config.model, config.model.fqe_iterations),
        exec,
    )?;
    drop(ev);
    train.manifest.warnings.extend(warnings);
    let reports = Reports {
        comparison,
        sweep: sweep_rows,
        frontier: frontier_rows,
        manifest: Some(train.manifest.clone()),
    };
    Ok(RunOutput { train, reports })
}

/// Writes the artifact, the test split, and the training manifest.
pub fn save_training(out: &TrainOutput, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| crate::error::Error::io(out_dir, e))?;
    out.artifact.save(&out_dir.join(ARTIFACT_FILE))?;
    write_jsonl(out_dir.join(TEST_EPISODES_FILE), &out.test_episodes)?;
    out.manifest.save(&out_dir.join(MANIFEST_FILE))
}
