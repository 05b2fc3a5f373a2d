//! Synthetic outreach logs with a planted logistic harm model.
//!
//! Each member carries a latent risk that drifts as an AR(1) process and is
//! pushed down by protective actions. The harm probability of action `a` is
//! `sigmoid(logit(base[a]) + state_logit)`, where `state_logit` is a linear
//! function of the observed state; the state part is kept per step so tests
//! can recover the exact planted probability.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{Episode, StateDoc, StateValue, Step};
use crate::error::{Error, Result};
use crate::exec::derive_seed;
use crate::linalg::{sigmoid, softmax_in_place};

const REGIONS: [&str; 4] = ["north", "south", "east", "west"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_members: usize,
    pub mean_len: f64,
    pub n_actions: usize,
    /// Harm probability of each action for a member at the population mean.
    pub harm_base_rates: Vec<f64>,
    /// Additive shift of the latent risk after taking each action.
    pub risk_effects: Vec<f64>,
    /// Behavior-policy preference logits per action.
    pub behavior_logits: Vec<f64>,
    /// Number of pure-noise numeric keys added to each state.
    pub noise_keys: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        // text, phone, video, clinic visit, home visit, CHW visit,
        // care-manager escalation, clinician escalation, social-services referral
        Self {
            n_members: 1000,
            mean_len: 20.0,
            n_actions: 9,
            harm_base_rates: vec![0.05, 0.06, 0.06, 0.065, 0.065, 0.065, 0.07, 0.07, 0.065],
            risk_effects: vec![0.0, -0.1, -0.1, -0.5, -0.6, -0.45, -0.25, -0.35, -0.2],
            behavior_logits: vec![0.2, 0.6, 0.3, 0.4, 0.3, 0.2, -0.2, -0.4, -0.3],
            noise_keys: 6,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Uniform defaults for an arbitrary action count.
    pub fn with_actions(n_actions: usize, harm_rate: f64) -> Self {
        Self {
            n_actions,
            harm_base_rates: vec![harm_rate; n_actions],
            risk_effects: vec![0.0; n_actions],
            behavior_logits: vec![0.0; n_actions],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic: {m}")));
        if self.n_actions < 2 {
            return bad(format!(
                "n_actions must be at least 2, got {}",
                self.n_actions
            ));
        }
        if self.n_members == 0 {
            return bad("n_members must be positive".into());
        }
        if !(self.mean_len >= 1.0 && self.mean_len.is_finite()) {
            return bad(format!("mean_len must be >= 1, got {}", self.mean_len));
        }
        for (name, v) in [
            ("harm_base_rates", &self.harm_base_rates),
            ("risk_effects", &self.risk_effects),
            ("behavior_logits", &self.behavior_logits),
        ] {
            if v.len() != self.n_actions {
                return bad(format!(
                    "{name} needs {} entries, got {}",
                    self.n_actions,
                    v.len()
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return bad(format!("{name} must be finite"));
            }
        }
        if self.harm_base_rates.iter().any(|p| !(0.0..1.0).contains(p)) {
            return bad("harm_base_rates must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// Generated episodes plus the planted state logits.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub config: SyntheticConfig,
    pub episodes: Vec<Episode>,
    /// `state_logits[e][s]`: state contribution to the harm logit.
    pub state_logits: Vec<Vec<f64>>,
}

impl SyntheticData {
    /// Ground-truth harm probability of `action` at step `s` of episode `e`.
    pub fn harm_probability(&self, e: usize, s: usize, action: usize) -> f64 {
        planted_harm(self.config.harm_base_rates[action], self.state_logits[e][s])
    }
}

fn planted_harm(base: f64, state_logit: f64) -> f64 {
    if base <= 0.0 {
        return 0.0;
    }
    sigmoid((base / (1.0 - base)).ln() + state_logit)
}

struct Member {
    risk: f64,
    engagement: f64,
    chronic: f64,
    region: usize,
}

impl Member {
    fn state_logit(&self) -> f64 {
        0.9 * self.risk - 0.4 * self.engagement + 0.15 * (self.chronic - 2.0)
    }
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let len_dist =
        Geometric::new(1.0 / config.mean_len).map_err(|e| Error::Config(e.to_string()))?;
    let chronic_dist = Poisson::new(2.0).expect("positive rate");

    let mut episodes = Vec::with_capacity(config.n_members);
    let mut state_logits = Vec::with_capacity(config.n_members);
    for m in 0..config.n_members {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, m as u64));
        let id = format!("M{m:06}");
        let len = 1 + len_dist.sample(&mut rng) as usize;
        let mut member = Member {
            risk: std_normal.sample(&mut rng),
            engagement: std_normal.sample(&mut rng),
            chronic: chronic_dist.sample(&mut rng),
            region: rng.gen_range(0..REGIONS.len()),
        };
        let mut steps = Vec::with_capacity(len);
        let mut logits = Vec::with_capacity(len);
        let mut days_since_contact = rng.gen_range(0..60) as f64;
        for t in 0..len {
            let mut state = StateDoc::new();
            let obs_risk = member.risk + 0.2 * std_normal.sample(&mut rng);
            let open_tasks = Poisson::new(1.0 + member.chronic + member.risk.max(0.0))
                .expect("positive rate")
                .sample(&mut rng);
            state.insert("risk_score".into(), StateValue::Number(round3(obs_risk)));
            state.insert(
                "engagement".into(),
                StateValue::Number(round3(member.engagement)),
            );
            state.insert(
                "chronic_conditions".into(),
                StateValue::Number(member.chronic),
            );
            state.insert("open_tasks".into(), StateValue::Number(open_tasks));
            state.insert(
                "days_since_contact".into(),
                StateValue::Number(days_since_contact),
            );
            state.insert(
                "region".into(),
                StateValue::Text(REGIONS[member.region].into()),
            );
            for k in 0..config.noise_keys {
                state.insert(
                    format!("aux_{k:02}"),
                    StateValue::Number(round3(std_normal.sample(&mut rng))),
                );
            }

            let mut prefs = config.behavior_logits.clone();
            for (a, p) in prefs.iter_mut().enumerate() {
                // riskier members are steered towards higher-touch outreach
                *p += 0.5 * obs_risk * (a as f64 / config.n_actions as f64 - 0.3);
            }
            softmax_in_place(&mut prefs);
            let action = sample_index(&prefs, rng.gen::<f64>());

            let logit = member.state_logit();
            let p = planted_harm(config.harm_base_rates[action], logit);
            let harm = rng.gen::<f64>() < p;
            steps.push(Step {
                member_id: id.clone(),
                t: t as u64,
                state,
                action,
                reward: if harm { -1.0 } else { 0.0 },
            });
            logits.push(logit);

            member.risk = 0.85 * member.risk
                + config.risk_effects[action]
                + 0.35 * std_normal.sample(&mut rng);
            member.engagement = 0.9 * member.engagement + 0.3 * std_normal.sample(&mut rng);
            days_since_contact = if action == 0 {
                days_since_contact + 7.0
            } else {
                7.0
            };
        }
        episodes.push(Episode::new(id, steps)?);
        state_logits.push(logits);
    }
    Ok(SyntheticData {
        config: config.clone(),
        episodes,
        state_logits,
    })
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            n_members: 50,
            mean_len: 8.0,
            seed,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_synthetic(&small(3)).unwrap();
        let b = generate_synthetic(&small(3)).unwrap();
        assert_eq!(a.episodes, b.episodes);
        let c = generate_synthetic(&small(4)).unwrap();
        assert_ne!(a.episodes, c.episodes);
    }

    #[test]
    fn zero_base_rates_never_harm() {
        let cfg = SyntheticConfig {
            harm_base_rates: vec![0.0; 9],
            ..small(1)
        };
        let d = generate_synthetic(&cfg).unwrap();
        assert!(d
            .episodes
            .iter()
            .flat_map(|e| &e.steps)
            .all(|s| s.reward == 0.0));
    }

    #[test]
    fn rewards_are_zero_or_minus_one() {
        let d = generate_synthetic(&small(2)).unwrap();
        for s in d.episodes.iter().flat_map(|e| &e.steps) {
            assert!(s.reward == 0.0 || s.reward == -1.0);
            assert!(s.action < 9);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(generate_synthetic(&SyntheticConfig::with_actions(1, 0.1)).is_err());
        let cfg = SyntheticConfig {
            harm_base_rates: vec![0.1; 3],
            ..SyntheticConfig::default()
        };
        assert!(generate_synthetic(&cfg).is_err());
        let cfg = SyntheticConfig {
            mean_len: 0.5,
            ..SyntheticConfig::default()
        };
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn empirical_harm_within_three_sigma_of_planted() {
        // 10^5 steps; the oracle is the Poisson-binomial mean and variance of
        // the planted per-step probabilities, checked per action.
        let cfg = SyntheticConfig {
            n_members: 5000,
            mean_len: 20.0,
            harm_base_rates: vec![0.1; 9],
            seed: 11,
            ..SyntheticConfig::default()
        };
        let d = generate_synthetic(&cfg).unwrap();
        let total: usize = d.episodes.iter().map(Episode::len).sum();
        assert!(total >= 95_000, "{total}");
        let mut expected = [0.0; 9];
        let mut var = [0.0; 9];
        let mut observed = [0.0; 9];
        for (e, ep) in d.episodes.iter().enumerate() {
            for (s, st) in ep.steps.iter().enumerate() {
                let p = d.harm_probability(e, s, st.action);
                expected[st.action] += p;
                var[st.action] += p * (1.0 - p);
                if st.is_harm() {
                    observed[st.action] += 1.0;
                }
            }
        }
        for a in 0..9 {
            let z = (observed[a] - expected[a]) / var[a].sqrt();
            assert!(z.abs() < 3.0, "action {a}: z = {z}");
        }
    }
}
