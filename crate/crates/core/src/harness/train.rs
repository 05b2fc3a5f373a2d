//! Training pipeline: split → features → risk → τ → safe subset →
//! preference → calibration index → BC → Q-ensembles.

use std::collections::BTreeMap;

use super::artifact::{component_versions, PolicyArtifact, RunManifest, SplitSummary};
use super::config::RunConfig;
use crate::conformal::{global_tau, knn_batch, CalibrationIndex, LocalThresholds};
use crate::error::{Error, Result, StageExt};
use crate::exec::{derive_seed, Exec};
use crate::preference::{blend, fit_bc, fit_preference, safe_subset};
use crate::qensemble::{fit_ensemble, EnsembleConfig, RESAMPLING};
use crate::risk::fit_risk;
use crate::table::ActionTable;
use crate::trajectory::{
    build_feature_map, data_hash, generate_synthetic, ingest, DataFormat, Episode, EpisodeSlice,
    TransitionSet,
};

/// Seed streams derived from the root seed.
pub(crate) const ENSEMBLE_STREAM: u64 = 1;
pub(crate) const BOOTSTRAP_STREAM: u64 = 2;
pub(crate) const PERMUTATION_STREAM: u64 = 3;
pub(crate) const SELECTION_STREAM: u64 = 4;

pub fn seeds(root: u64) -> BTreeMap<String, u64> {
    BTreeMap::from([
        ("root".to_string(), root),
        ("ensemble".to_string(), derive_seed(root, ENSEMBLE_STREAM)),
        ("bootstrap".to_string(), derive_seed(root, BOOTSTRAP_STREAM)),
        (
            "permutation".to_string(),
            derive_seed(root, PERMUTATION_STREAM),
        ),
        ("selection".to_string(), derive_seed(root, SELECTION_STREAM)),
    ])
}

/// Reads the configured log, or generates synthetic data when no path is set.
pub fn load_episodes(config: &RunConfig) -> Result<Vec<Episode>> {
    match &config.data.path {
        Some(path) => {
            let format = DataFormat::from_path(path).ok_or_else(|| {
                Error::Config(format!("cannot infer data format of {}", path.display()))
            })?;
            ingest(path, format, config.data.action_count).stage("ingest")
        }
        None => Ok(generate_synthetic(&config.data.synthetic)
            .stage("synthetic data")?
            .episodes),
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub artifact: PolicyArtifact,
    pub manifest: RunManifest,
    /// Test split, each member's test steps as a standalone episode.
    pub test_episodes: Vec<Episode>,
}

pub fn train_pipeline(episodes: &[Episode], config: &RunConfig, exec: Exec) -> Result<TrainOutput> {
    config.validate()?;
    let a_count = config.data.action_count;
    let dials = &config.dials;
    let mut warnings = Vec::new();

    let split =
        crate::trajectory::split(episodes, config.data.split, config.data.ratios).stage("split")?;
    let train_slices = split.train_slices(episodes);
    let fm = build_feature_map(&train_slices, config.data.max_keys).stage("feature map")?;
    let train = TransitionSet::from_slices(&fm, &train_slices, a_count);
    let calibration = TransitionSet::from_slices(&fm, &split.calibration_slices(episodes), a_count);
    if train.is_empty() || calibration.is_empty() {
        return Err(Error::Empty(
            "train and calibration splits must both be non-empty".into(),
        ));
    }

    let risk = fit_risk(&train, &config.model.risk, exec).stage("risk model")?;
    let index = CalibrationIndex::build(&calibration, &risk, exec).stage("calibration index")?;
    let tau = global_tau(&index.taken_scores, dials.alpha).stage("global threshold")?;
    if tau.is_no_gate() {
        warnings.push(format!(
            "calibration slice of {} steps too small for alpha {}; global gate disabled",
            index.len(),
            dials.alpha
        ));
    }

    let safe = safe_subset(&train, &risk, tau).stage("safe subset")?;
    let safe_actions: Vec<usize> = safe.iter().map(|&i| train.actions[i]).collect();
    let preference = fit_preference(
        &train.features.select(&safe),
        &safe_actions,
        a_count,
        &config.model.preference,
        exec,
    )
    .stage("preference model")?;
    let bc = fit_bc(&train, &config.model.bc, exec).stage("behaviour cloning")?;

    let base_policy = ActionTable::evaluate(&train, exec, |x| preference.probs(x))?;
    let neighbors =
        knn_batch(&index, &train.features, dials.k, exec).stage("neighbourhood prior")?;
    let blended_rows: Vec<Vec<f64>> = exec
        .map_slice(&neighbors, |ids| {
            let local = LocalThresholds::from_neighbors(&index, ids.clone(), dials.alpha)?;
            Ok(local.action_freq)
        })
        .into_iter()
        .zip(0..train.len())
        .map(|(freq, i): (Result<Vec<f64>>, usize)| blend(base_policy.row(i), &freq?, dials.eta))
        .collect::<Result<_>>()?;
    let blended_policy = ActionTable::from_rows(a_count, blended_rows)?;

    let ens_config = EnsembleConfig {
        members: config.model.ensemble_members,
        gamma: config.model.gamma,
        iterations: config.model.ensemble_iterations,
        ridge: config.model.ridge,
        basis: config.model.basis,
        seed: derive_seed(config.seed, ENSEMBLE_STREAM),
    };
    let ensemble = fit_ensemble(&train, &blended_policy, &ens_config, exec).stage("Q-ensemble")?;
    let ensemble_base =
        fit_ensemble(&train, &base_policy, &ens_config, exec).stage("Q-ensemble (unblended)")?;
    let costs = config.cost_table().stage("cost table")?;

    let mut fit_reports = BTreeMap::new();
    for (name, report) in [
        ("risk", &risk.report),
        ("preference", &preference.report),
        ("bc", &bc.report),
    ] {
        warnings.extend(report.warnings.iter().map(|w| format!("{name}: {w}")));
        fit_reports.insert(name.to_string(), report.clone());
    }

    let artifact = PolicyArtifact {
        action_count: a_count,
        feature_map: fm,
        risk,
        global_tau: tau,
        calibration: index,
        preference,
        bc,
        ensemble,
        ensemble_base,
        costs,
        dials: dials.clone(),
        config_hash: config.hash(),
        data_hash: data_hash(episodes),
        seed: config.seed,
    };

    let test_episodes = split
        .test_slices(episodes)
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| {
            Episode::new(
                s.episode.member_id.clone(),
                s.episode.steps[s.steps.clone()].to_vec(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let (train_steps, calibration_steps, test_steps) = split.sizes();
    let artifact_hash = artifact.hash();
    let manifest = RunManifest {
        config: config.clone(),
        config_hash: artifact.config_hash.clone(),
        data_hash: artifact.data_hash.clone(),
        artifact_version: artifact_hash[..16].to_string(),
        artifact_hash,
        seeds: seeds(config.seed),
        versions: component_versions(),
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        split: SplitSummary {
            mode: split.mode,
            train_steps,
            calibration_steps,
            test_steps,
            test_episodes: test_episodes.len(),
        },
        global_tau: tau,
        safe_subset_size: safe.len(),
        dials: dials.clone(),
        costs: artifact.costs.clone(),
        resampling: RESAMPLING.to_string(),
        fit_reports,
        warnings,
    };
    Ok(TrainOutput {
        artifact,
        manifest,
        test_episodes,
    })
}

/// Featurizes whole episodes with the artifact's feature map.
pub fn transitions(artifact: &PolicyArtifact, episodes: &[Episode]) -> TransitionSet {
    let slices: Vec<EpisodeSlice<'_>> = episodes.iter().map(EpisodeSlice::whole).collect();
    TransitionSet::from_slices(&artifact.feature_map, &slices, artifact.action_count)
}
