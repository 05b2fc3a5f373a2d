//! Trained policy artifact and run manifest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::conformal::{CalibrationIndex, LocalThresholds, Threshold};
use crate::deliberation::{select, CostTable, DialConfig, Recommendation};
use crate::error::{Error, Result};
use crate::optim::FitReport;
use crate::preference::PreferenceModel;
use crate::qensemble::QEnsemble;
use crate::risk::RiskModel;
use crate::trajectory::{FeatureMap, SplitMode, StateDoc};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyArtifact {
    pub action_count: usize,
    pub feature_map: FeatureMap,
    pub risk: RiskModel,
    pub global_tau: Threshold,
    pub calibration: CalibrationIndex,
    pub preference: PreferenceModel,
    pub bc: PreferenceModel,
    /// Fitted under the neighbourhood-blended preference policy.
    pub ensemble: QEnsemble,
    /// Fitted under the unblended preference policy; used by ITD only.
    pub ensemble_base: QEnsemble,
    pub costs: CostTable,
    /// Default dials; also the dials the ensemble's blend was built with.
    pub dials: DialConfig,
    pub config_hash: String,
    pub data_hash: String,
    pub seed: u64,
}

impl PolicyArtifact {
    /// Hex SHA-256 of the serialized artifact.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(
            serde_json::to_vec(self).expect("artifact serializes"),
        ))
    }

    /// Short version id derived from the hash.
    pub fn version(&self) -> String {
        self.hash()[..16].to_string()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&text)?)
    }

    /// Featurizes a raw state document.
    pub fn featurize(&self, state: &StateDoc, t: u64, prev_reward: f64) -> Vec<f64> {
        self.feature_map.featurize_state(state, t, prev_reward).0
    }

    /// Full TTL+ITD recommendation at a featurized state.
    pub fn recommend(
        &self,
        x: &[f64],
        dials: &DialConfig,
        seed: u64,
    ) -> Result<(Recommendation, LocalThresholds)> {
        dials.validate()?;
        if x.len() != self.feature_map.width() {
            return Err(Error::LengthMismatch {
                expected: self.feature_map.width(),
                actual: x.len(),
            });
        }
        let ctx = crate::baselines::StateContext::build(self, x, dials.k)?;
        let decision =
            crate::baselines::decide(crate::baselines::PolicyName::TtlItd, self, &ctx, dials)?;
        let scored = decision.scored.expect("TTL+ITD always scores");
        let local = decision.local.expect("TTL+ITD always calibrates locally");
        Ok((select(scored, dials, seed), local))
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Everything needed to reproduce a run given the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub config_hash: String,
    pub data_hash: String,
    pub artifact_hash: String,
    pub artifact_version: String,
    pub seeds: BTreeMap<String, u64>,
    pub versions: BTreeMap<String, String>,
    pub timestamp: String,
    pub split: SplitSummary,
    pub global_tau: Threshold,
    pub safe_subset_size: usize,
    pub dials: DialConfig,
    pub costs: CostTable,
    pub resampling: String,
    pub fit_reports: BTreeMap<String, FitReport>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub mode: SplitMode,
    pub train_steps: usize,
    pub calibration_steps: usize,
    pub test_steps: usize,
    pub test_episodes: usize,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&text)?)
    }
}

pub fn component_versions() -> BTreeMap<String, String> {
    let mut v = BTreeMap::new();
    v.insert("ttl-itd-core".into(), env!("CARGO_PKG_VERSION").into());
    v.insert("parallel".into(), cfg!(feature = "parallel").to_string());
    v.insert("artifact_format".into(), "1".into());
    v
}
