//! Asymptotic-variance estimation and confidence intervals.
//!
//! The estimated-score estimator's asymptotic variance is the second
//! moment of `g + alpha`, where `g` is the centered weighted reward and
//! `alpha` is a correction for having estimated the score; plugging fitted
//! nuisances into the sample analogue gives a consistent estimate. The
//! true-score estimator needs only the second moment of `g`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log::{BanditLog, LogRecord};
use crate::normal::standard_normal_quantile;
use crate::nuisance::{PropensityModel, RewardModel};
use crate::policy::{policy_probabilities, PolicySpec};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarianceKind {
    #[serde(rename = "efficient")]
    Efficient,
    #[serde(rename = "true-score")]
    TrueScore,
}

/// Estimated asymptotic variance of `sqrt(T) * (estimate - truth)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct VarianceEstimate<F: Real> {
    pub kind: VarianceKind,
    pub avar: F,
    #[serde(rename = "T")]
    pub t: usize,
}

/// Report row serialized by the CLI `variance` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct VarianceReport<F: Real> {
    pub estimator_kind: crate::estimators::EstimatorKind,
    pub value: F,
    pub avar: F,
    #[serde(rename = "T")]
    pub t: usize,
    pub level: F,
    pub ci: [F; 2],
}

/// Centered weighted reward: `Y * pi(A|X) / p_A(X) - theta`.
pub fn influence_g<F: Real>(
    record: &LogRecord<F>,
    theta: F,
    probs: &[F],
    policy: &PolicySpec<F>,
) -> Result<F> {
    let pi = policy_probabilities(policy, &record.context.features)?;
    let pi_a = pi[record.action];
    if pi_a == F::zero() {
        return Ok(-theta);
    }
    let p_a = probs[record.action];
    if p_a <= F::zero() {
        return Err(Error::ZeroPropensityAtSupport);
    }
    Ok(record.reward * pi_a / p_a - theta)
}

/// Score-estimation correction:
/// `-sum_a mu(a|X) * pi(a|X) / p_a(X) * (D_a - p_a(X))`, over all actions.
pub fn correction_alpha<F: Real>(
    record: &LogRecord<F>,
    probs: &[F],
    mu: &[RewardModel<F>],
    policy: &PolicySpec<F>,
) -> Result<F> {
    let pi = policy_probabilities(policy, &record.context.features)?;
    let mut acc = F::zero();
    for (a, &pi_a) in pi.iter().enumerate() {
        if pi_a == F::zero() {
            continue;
        }
        let p_a = probs[a];
        if p_a <= F::zero() {
            return Err(Error::ZeroPropensityAtSupport);
        }
        let mu_a = mu[a].predict(&record.context.features)?;
        let d_a = if record.action == a { F::one() } else { F::zero() };
        acc += mu_a * pi_a / p_a * (d_a - p_a);
    }
    Ok(-acc)
}

/// Sample analogue of the efficient estimator's asymptotic variance:
/// the mean of `(g + alpha)^2` with fitted nuisances plugged in.
///
/// `v` is the value estimate being centered on - plain or self-normalized,
/// whichever was used.
pub fn avar_estimated<F: Real>(
    log: &BanditLog<F>,
    v: F,
    p_hat: &PropensityModel<F>,
    mu_hat: &[RewardModel<F>],
    policy: &PolicySpec<F>,
) -> Result<VarianceEstimate<F>> {
    if log.is_empty() {
        return Err(Error::InvalidLog("cannot estimate variance from an empty log".into()));
    }
    let mut acc = F::zero();
    for (idx, r) in log.records.iter().enumerate() {
        let probs = p_hat.predict(idx, &r.context.features)?;
        let g = influence_g(r, v, &probs, policy)?;
        let a = correction_alpha(r, &probs, mu_hat, policy)?;
        acc += (g + a) * (g + a);
    }
    Ok(VarianceEstimate {
        kind: VarianceKind::Efficient,
        avar: acc / F::of_usize(log.len()),
        t: log.len(),
    })
}

/// Sample analogue of the true-score estimator's asymptotic variance: the
/// mean of `g^2` with the stored true propensities.
pub fn avar_true<F: Real>(
    log: &BanditLog<F>,
    v: F,
    policy: &PolicySpec<F>,
) -> Result<VarianceEstimate<F>> {
    if log.is_empty() {
        return Err(Error::InvalidLog("cannot estimate variance from an empty log".into()));
    }
    let mut acc = F::zero();
    for (idx, r) in log.records.iter().enumerate() {
        let probs = r
            .true_propensity
            .as_ref()
            .ok_or(Error::MissingTruePropensity { record: idx })?;
        let g = influence_g(r, v, probs, policy)?;
        acc += g * g;
    }
    Ok(VarianceEstimate {
        kind: VarianceKind::TrueScore,
        avar: acc / F::of_usize(log.len()),
        t: log.len(),
    })
}

/// Normal-approximation confidence interval
/// `v ± z_{(1+level)/2} * sqrt(avar / T)`.
pub fn confidence_interval<F: Real>(
    v: F,
    avar: &VarianceEstimate<F>,
    level: F,
) -> Result<(F, F)> {
    if !(level > F::zero() && level < F::one()) {
        return Err(Error::InvalidConfig(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    if avar.avar < F::zero() {
        return Err(Error::InvalidConfig("negative variance".into()));
    }
    if avar.t == 0 {
        return Err(Error::InvalidConfig("variance with T = 0".into()));
    }
    let z = standard_normal_quantile((F::one() + level) / F::of(2.0));
    let half = z * (avar.avar / F::of_usize(avar.t)).sqrt();
    Ok((v - half, v + half))
}
