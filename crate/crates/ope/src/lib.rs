//! Off-policy evaluation of logged contextual-bandit data.
//!
//! Given a log of (context, action, reward) rounds collected by some
//! logging policy, this crate estimates the expected reward a different
//! target policy would have obtained, together with asymptotic variances
//! and confidence intervals. The headline estimator reweights rewards by
//! an *estimated* propensity score even when the true score is known,
//! which is the variance-minimizing choice; the true-score and
//! realized-score weightings are provided as benchmarks, and a seeded
//! synthetic-environment harness verifies the variance ordering and the
//! analytic efficiency bounds end to end.
//!
//! Modules:
//!
//! * [`log`] - logged data, validation, CSV interchange.
//! * [`policy`] - target policies as signed per-context action weights.
//! * [`dgp`] - synthetic batched-bandit environments with closed-form
//!   oracles for policy values, efficiency bounds, and variance gaps.
//! * [`nuisance`] - propensity and reward-model estimation.
//! * [`estimators`] - the six IPW value estimators.
//! * [`variance`] - influence-function asymptotic variances and CIs.
//! * [`harness`] - Monte Carlo experiment runner and reporting.
//!
//! The numeric core is generic over the scalar type via [`scalar::Real`];
//! the `*64` aliases below fix it to `f64`, which is what the CLI uses.

pub mod dgp;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod log;
pub mod normal;
pub mod nuisance;
pub mod policy;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision instantiations of the core types.
pub type BanditLog64 = log::BanditLog<f64>;
pub type LogRecord64 = log::LogRecord<f64>;
pub type Context64 = log::Context<f64>;
pub type PolicySpec64 = policy::PolicySpec<f64>;
pub type SyntheticEnv64 = dgp::SyntheticEnv<f64>;
pub type GroundTruth64 = dgp::GroundTruth<f64>;
pub type BasisSpec64 = nuisance::BasisSpec<f64>;
pub type PropensityModel64 = nuisance::PropensityModel<f64>;
pub type RewardModel64 = nuisance::RewardModel<f64>;
pub type ValueEstimate64 = estimators::ValueEstimate<f64>;
pub type VarianceEstimate64 = variance::VarianceEstimate<f64>;
pub type ExperimentConfig64 = harness::ExperimentConfig<f64>;
pub type ReplicationSummary64 = harness::ReplicationSummary<f64>;

pub mod variance;
