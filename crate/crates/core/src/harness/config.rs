//! Declarative run configuration (YAML or JSON).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::deliberation::{CostEntry, CostId, CostTable, DialConfig};
use crate::error::{Error, Result};
use crate::fitted_q::QBasis;
use crate::optim::GdHyper;
use crate::trajectory::{SplitMode, SplitRatios, SyntheticConfig, MAX_KEYS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub dials: DialConfig,
    pub sweep: SweepConfig,
    pub costs: CostConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            dials: DialConfig::default(),
            sweep: SweepConfig::default(),
            costs: CostConfig::Default,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// CSV or JSONL log; synthetic data is generated when absent.
    pub path: Option<PathBuf>,
    pub action_count: usize,
    pub split: SplitMode,
    pub ratios: SplitRatios,
    pub max_keys: usize,
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            action_count: 9,
            split: SplitMode::Temporal,
            ratios: SplitRatios::default(),
            max_keys: MAX_KEYS,
            synthetic: SyntheticConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub risk: GdHyper,
    pub preference: GdHyper,
    pub bc: GdHyper,
    pub ensemble_members: usize,
    pub gamma: f64,
    pub ensemble_iterations: usize,
    pub ridge: f64,
    pub basis: QBasis,
    pub fqe_iterations: usize,
    pub sweep_fqe_iterations: usize,
    pub bootstrap_resamples: usize,
    pub permutations: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            risk: GdHyper::default(),
            preference: GdHyper::default(),
            bc: GdHyper::default(),
            ensemble_members: 10,
            gamma: 0.99,
            ensemble_iterations: 15,
            ridge: 1e-2,
            basis: QBasis::Additive,
            fqe_iterations: 15,
            sweep_fqe_iterations: 8,
            bootstrap_resamples: 2000,
            permutations: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub k: Vec<usize>,
    pub beta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub lambda_costs: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            k: vec![100, 200, 300],
            beta: vec![0.3, 0.6, 0.9],
            lambda: vec![0.25, 0.5, 0.75, 1.0, 1.5],
            lambda_costs: vec![0.0, 0.25, 0.5, 1.0, 2.0],
        }
    }
}

/// Where action costs come from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CostConfig {
    /// Built-in outreach costs for nine actions, uniform otherwise.
    #[default]
    Default,
    Path(PathBuf),
    Inline {
        actions: Vec<CostEntry>,
    },
}

impl RunConfig {
    pub fn from_yaml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_yaml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_yaml_str(&text)?;
        // relative paths are taken from the config file's directory
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = &cfg.data.path {
            if p.is_relative() {
                cfg.data.path = Some(base.join(p));
            }
        }
        if let CostConfig::Path(p) = &cfg.costs {
            if p.is_relative() {
                cfg.costs = CostConfig::Path(base.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dials.validate()?;
        let m = &self.model;
        if m.ensemble_members < 2 {
            return Err(Error::Config(
                "model.ensemble_members must be at least 2".into(),
            ));
        }
        if !(m.gamma >= 0.0 && m.gamma <= 1.0) {
            return Err(Error::Config(format!(
                "model.gamma must lie in [0, 1], got {}",
                m.gamma
            )));
        }
        if m.ridge.is_nan() || m.ridge <= 0.0 {
            return Err(Error::Config("model.ridge must be positive".into()));
        }
        if self.data.action_count == 0 {
            return Err(Error::Config("data.action_count must be positive".into()));
        }
        if self.data.path.is_none() && self.data.synthetic.n_actions != self.data.action_count {
            return Err(Error::Config(format!(
                "data.synthetic.n_actions ({}) differs from data.action_count ({})",
                self.data.synthetic.n_actions, self.data.action_count
            )));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(
            serde_json::to_vec(self).expect("config serializes"),
        ))
    }

    pub fn cost_table(&self) -> Result<CostTable> {
        let a = self.data.action_count;
        match &self.costs {
            CostConfig::Default if a == DEFAULT_COSTS.len() => {
                CostTable::from_entries(default_cost_entries(), a)
            }
            CostConfig::Default => Ok(CostTable::uniform(a)),
            CostConfig::Path(p) => crate::deliberation::load_costs(p, a),
            CostConfig::Inline { actions } => CostTable::from_entries(actions.clone(), a),
        }
    }
}

/// `(id, label, time_minutes, wage_per_minute, travel_minutes)`.
pub const DEFAULT_COSTS: [(&str, &str, f64, f64, f64); 9] = [
    ("text", "Text message", 3.0, 1.0, 0.0),
    ("phone", "Phone call", 12.0, 1.0, 0.0),
    ("video", "Video visit", 20.0, 1.0, 0.0),
    ("clinic", "Clinic visit", 30.0, 1.0, 10.0),
    ("home_visit", "Home visit", 45.0, 1.0, 30.0),
    ("chw", "Community health worker visit", 40.0, 0.6, 25.0),
    ("care_manager", "Care-manager escalation", 25.0, 1.2, 0.0),
    ("clinician", "Clinician escalation", 20.0, 2.0, 0.0),
    (
        "social_referral",
        "Social-services referral",
        15.0,
        0.8,
        0.0,
    ),
];

pub fn default_cost_entries() -> Vec<CostEntry> {
    DEFAULT_COSTS
        .iter()
        .map(|&(id, label, time, wage, travel)| CostEntry {
            id: CostId::Name(id.into()),
            label: label.into(),
            time_minutes: time,
            wage_per_minute: wage,
            travel_minutes: travel,
        })
        .collect()
}
