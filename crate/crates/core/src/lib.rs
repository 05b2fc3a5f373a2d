//! Offline, cost-aware outreach policies learned from logged episodes.
//!
//! The crate trains a harm-risk model, a split-conformal gate, a preference
//! policy over the conformally safe subset and a bootstrap Q-ensemble, then
//! combines them at decision time: a kNN neighbourhood over calibration
//! states yields local per-action thresholds and an action prior, and each
//! action is scored as
//!
//! ```text
//! score(a) = Q_mean(s,a) − β·Q_std(s,a) − λ·p_harm(s,a) − λ_cost·c(a)
//! ```
//!
//! with actions whose harm probability reaches their local threshold masked.
//! Off-policy evaluation (FQE, doubly robust, paired bootstrap, sign-flip
//! randomization) and the sweep / frontier harness live alongside.

pub mod baselines;
pub mod conformal;
pub mod deliberation;
pub mod error;
pub mod exec;
pub mod fitted_q;
pub mod harness;
pub mod linalg;
pub mod ope;
pub mod optim;
pub mod preference;
pub mod qensemble;
pub mod risk;
pub mod table;
pub mod trajectory;

pub use error::{Error, Result};
pub use exec::Exec;
