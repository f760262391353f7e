//! Inverse-probability-weighted value estimators.
//!
//! Six variants, differing in where the per-round weight denominator comes
//! from and whether the weighted sum is self-normalized:
//!
//! * estimated score (`hat`, `hat_sn`) - a fitted propensity model, the
//!   statistically efficient choice;
//! * true score (`tilde`, `tilde_sn`) - the logging policy's known
//!   context-conditional choice probabilities;
//! * realized score (`ddot`, `ddot_sn`) - the per-round probability vector
//!   the logging system actually drew.
//!
//! Weights are computed through the chosen action only, which is
//! numerically identical to summing over the one-hot action vector but
//! avoids 0 * (1/0) for unchosen zero-probability actions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log::BanditLog;
use crate::nuisance::{PropensityModel, RewardModel};
use crate::policy::{policy_probabilities, PolicySpec};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "hat")]
    EstimatedScore,
    #[serde(rename = "hat_sn")]
    EstimatedScoreSn,
    #[serde(rename = "tilde")]
    TrueScore,
    #[serde(rename = "tilde_sn")]
    TrueScoreSn,
    #[serde(rename = "ddot")]
    RealizedScore,
    #[serde(rename = "ddot_sn")]
    RealizedScoreSn,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::EstimatedScore,
        EstimatorKind::EstimatedScoreSn,
        EstimatorKind::TrueScore,
        EstimatorKind::TrueScoreSn,
        EstimatorKind::RealizedScore,
        EstimatorKind::RealizedScoreSn,
    ];

    pub fn self_normalized(self) -> bool {
        matches!(
            self,
            EstimatorKind::EstimatedScoreSn
                | EstimatorKind::TrueScoreSn
                | EstimatorKind::RealizedScoreSn
        )
    }

    /// The wire name used in JSON reports and CLI arguments.
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::EstimatedScore => "hat",
            EstimatorKind::EstimatedScoreSn => "hat_sn",
            EstimatorKind::TrueScore => "tilde",
            EstimatorKind::TrueScoreSn => "tilde_sn",
            EstimatorKind::RealizedScore => "ddot",
            EstimatorKind::RealizedScoreSn => "ddot_sn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown estimator kind {s:?}")))
    }
}

/// Weight-level diagnostics attached to every estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightDiagnostics<F> {
    /// Rounds whose chosen-action propensity was moved by clipping.
    pub clipped_rounds: usize,
    /// Largest absolute weight encountered.
    pub max_weight: F,
}

/// A policy-value estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct ValueEstimate<F: Real> {
    pub kind: EstimatorKind,
    pub value: F,
    #[serde(rename = "T")]
    pub t: usize,
    /// Mean of the weights; 1 implicitly for the non-self-normalized kinds.
    pub sn_denominator: F,
    pub diagnostics: WeightDiagnostics<F>,
}

enum ScoreSource<'a, F: Real> {
    Estimated(&'a PropensityModel<F>),
    True,
    Realized,
}

fn ipw<F: Real>(
    log: &BanditLog<F>,
    policy: &PolicySpec<F>,
    source: ScoreSource<'_, F>,
    self_normalized: bool,
) -> Result<ValueEstimate<F>> {
    if log.is_empty() {
        return Err(Error::InvalidLog("cannot estimate from an empty log".into()));
    }
    if self_normalized && !policy.normalized() {
        return Err(Error::PolicyNotNormalized);
    }

    let t = log.len();
    let mut numerator = F::zero();
    let mut denominator = F::zero();
    let mut clipped_rounds = 0usize;
    let mut max_weight = F::zero();

    for (idx, r) in log.records.iter().enumerate() {
        let pi = policy_probabilities(policy, &r.context.features)?;
        let pi_a = pi[r.action];

        // data-consistency checks that apply even when the weight is zero
        match source {
            ScoreSource::True => {
                let p = r
                    .true_propensity
                    .as_ref()
                    .ok_or(Error::MissingTruePropensity { record: idx })?;
                if p[r.action] <= F::zero() {
                    return Err(Error::ZeroTruePropensity {
                        record: idx,
                        action: r.action,
                    });
                }
            }
            ScoreSource::Realized => {
                let p = r
                    .realized_propensity
                    .as_ref()
                    .ok_or(Error::MissingRealizedPropensity { record: idx })?;
                if p[r.action] <= F::zero() {
                    return Err(Error::ZeroRealizedPropensity {
                        record: idx,
                        action: r.action,
                    });
                }
            }
            ScoreSource::Estimated(_) => {}
        }

        if pi_a == F::zero() {
            continue;
        }

        let p_a = match &source {
            ScoreSource::Estimated(model) => {
                let (p, clipped) = model.predict_detailed(idx, &r.context.features)?;
                if clipped[r.action] {
                    clipped_rounds += 1;
                }
                let v = p[r.action];
                if v <= F::zero() {
                    return Err(Error::ZeroEstimatedPropensity {
                        record: idx,
                        action: r.action,
                    });
                }
                v
            }
            ScoreSource::True => r.true_propensity.as_ref().unwrap()[r.action],
            ScoreSource::Realized => r.realized_propensity.as_ref().unwrap()[r.action],
        };

        let w = pi_a / p_a;
        max_weight = max_weight.max(w.abs());
        numerator += r.reward * w;
        denominator += w;
    }

    let tf = F::of_usize(t);
    let mean_weight = denominator / tf;
    let (value, sn_denominator) = if self_normalized {
        (numerator / denominator, mean_weight)
    } else {
        (numerator / tf, F::one())
    };

    let kind = match (&source, self_normalized) {
        (ScoreSource::Estimated(_), false) => EstimatorKind::EstimatedScore,
        (ScoreSource::Estimated(_), true) => EstimatorKind::EstimatedScoreSn,
        (ScoreSource::True, false) => EstimatorKind::TrueScore,
        (ScoreSource::True, true) => EstimatorKind::TrueScoreSn,
        (ScoreSource::Realized, false) => EstimatorKind::RealizedScore,
        (ScoreSource::Realized, true) => EstimatorKind::RealizedScoreSn,
    };

    Ok(ValueEstimate {
        kind,
        value,
        t,
        sn_denominator,
        diagnostics: WeightDiagnostics {
            clipped_rounds,
            max_weight,
        },
    })
}

/// Value estimate weighted by a fitted propensity model.
pub fn ipw_estimated<F: Real>(
    log: &BanditLog<F>,
    policy: &PolicySpec<F>,
    p_hat: &PropensityModel<F>,
    self_normalized: bool,
) -> Result<ValueEstimate<F>> {
    ipw(log, policy, ScoreSource::Estimated(p_hat), self_normalized)
}

/// Value estimate weighted by the stored true propensities.
pub fn ipw_true<F: Real>(
    log: &BanditLog<F>,
    policy: &PolicySpec<F>,
    self_normalized: bool,
) -> Result<ValueEstimate<F>> {
    ipw(log, policy, ScoreSource::True, self_normalized)
}

/// Value estimate weighted by the stored realized propensities.
pub fn ipw_realized<F: Real>(
    log: &BanditLog<F>,
    policy: &PolicySpec<F>,
    self_normalized: bool,
) -> Result<ValueEstimate<F>> {
    ipw(log, policy, ScoreSource::Realized, self_normalized)
}

/// Degenerate table policy choosing, in each context, the action whose
/// reward model predicts the highest mean; ties break to the lowest index.
pub fn best_action_policy<F: Real>(
    reward_models: &[RewardModel<F>],
    contexts: &[Vec<F>],
) -> Result<PolicySpec<F>> {
    let m1 = reward_models.len();
    let mut entries = Vec::with_capacity(contexts.len());
    for features in contexts {
        let mut best = 0usize;
        let mut best_value = F::neg_infinity();
        for (a, model) in reward_models.iter().enumerate() {
            let v = model.predict(features)?;
            if v > best_value {
                best_value = v;
                best = a;
            }
        }
        let mut w = vec![F::zero(); m1];
        w[best] = F::one();
        entries.push((features.clone(), w));
    }
    PolicySpec::table(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::{ActionSet, Context, LogRecord};
    use crate::nuisance::{fit_sieve_ls, BasisSpec, LinkKind};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn l4() -> BanditLog<f64> {
        let mk = |action: usize, reward: f64| LogRecord {
            context: Context {
                features: vec![0.0],
                batch_id: 1,
            },
            action,
            reward,
            realized_propensity: Some(vec![0.5, 0.5]),
            true_propensity: Some(vec![0.5, 0.5]),
        };
        BanditLog {
            records: vec![mk(1, 1.0), mk(1, 0.0), mk(0, 0.0), mk(1, 1.0)],
            action_set: ActionSet::new(2),
            num_batches: 1,
        }
    }

    fn p_hat_075() -> PropensityModel<f64> {
        fit_sieve_ls(&l4(), BasisSpec::InterceptOnly).unwrap()
    }

    #[test]
    fn estimated_score_value() {
        let log = l4();
        let policy = PolicySpec::always(1, 2);
        let est = ipw_estimated(&log, &policy, &p_hat_075(), false).unwrap();
        assert_relative_eq!(est.value, 2.0 / 3.0, epsilon = 1e-12);
        assert_eq!(est.kind, EstimatorKind::EstimatedScore);
        assert_eq!(est.t, 4);
        assert_eq!(est.sn_denominator, 1.0);
    }

    #[test]
    fn estimated_score_self_normalized() {
        let log = l4();
        let policy = PolicySpec::always(1, 2);
        let est = ipw_estimated(&log, &policy, &p_hat_075(), true).unwrap();
        assert_relative_eq!(est.value, 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(est.sn_denominator, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn true_score_value_and_sn() {
        let log = l4();
        let policy = PolicySpec::always(1, 2);
        let plain = ipw_true(&log, &policy, false).unwrap();
        assert_relative_eq!(plain.value, 1.0, epsilon = 1e-12);
        let sn = ipw_true(&log, &policy, true).unwrap();
        assert_relative_eq!(sn.sn_denominator, 1.5, epsilon = 1e-12);
        assert_relative_eq!(sn.value, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn true_score_uniform_policy() {
        let log = l4();
        let policy = PolicySpec::uniform(2);
        let est = ipw_true(&log, &policy, false).unwrap();
        assert_relative_eq!(est.value, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn realized_score_value() {
        let mut log = l4();
        log.records[0].realized_propensity = Some(vec![0.3, 0.7]);
        log.records[1].realized_propensity = Some(vec![0.7, 0.3]);
        log.records[2].realized_propensity = Some(vec![0.7, 0.3]);
        log.records[3].realized_propensity = Some(vec![0.3, 0.7]);
        let policy = PolicySpec::always(1, 2);
        let est = ipw_realized(&log, &policy, false).unwrap();
        assert_relative_eq!(est.value, 0.714_285_714_285_714_3, epsilon = 1e-12);
    }

    #[test]
    fn realized_equals_true_when_identical() {
        let log = l4();
        let policy = PolicySpec::uniform(2);
        let a = ipw_realized(&log, &policy, false).unwrap();
        let b = ipw_true(&log, &policy, false).unwrap();
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn degenerate_realized_weights_give_reward_mean() {
        let mut log = l4();
        for r in &mut log.records {
            // probability one on the chosen action, every round
            let mut p = vec![0.0, 0.0];
            p[r.action] = 1.0;
            r.realized_propensity = Some(p);
        }
        // make the policy match the chosen action everywhere: all rounds
        // that contribute weight choose action 1 under "always 1"
        let policy = PolicySpec::always(1, 2);
        // drop the action-0 round so weights are 1 on every record
        log.records.remove(2);
        let est = ipw_realized(&log, &policy, true).unwrap();
        let mean: f64 = log.records.iter().map(|r| r.reward).sum::<f64>() / 3.0;
        assert_relative_eq!(est.value, mean, epsilon = 1e-12);
        assert_relative_eq!(est.sn_denominator, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_policy_weight_contributes_nothing() {
        let log = l4();
        let policy = PolicySpec::always(0, 2);
        let est = ipw_estimated(&log, &policy, &p_hat_075(), false).unwrap();
        assert_relative_eq!(est.value, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sn_rejects_unnormalized_policy() {
        let log = l4();
        let ate = PolicySpec::treatment_contrast(1, 0, 2);
        let err = ipw_true(&log, &ate, true).unwrap_err();
        assert!(matches!(err, Error::PolicyNotNormalized));
        // plain estimator accepts the signed policy
        let est = ipw_true(&log, &ate, false).unwrap();
        assert_relative_eq!(est.value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn missing_true_propensity_names_record() {
        let mut log = l4();
        log.records[2].true_propensity = None;
        let err = ipw_true(&log, &PolicySpec::always(1, 2), false).unwrap_err();
        assert!(matches!(err, Error::MissingTruePropensity { record: 2 }));
    }

    #[test]
    fn zero_realized_at_chosen_action_errors() {
        let mut log = l4();
        log.records[1].realized_propensity = Some(vec![1.0, 0.0]);
        let err = ipw_realized(&log, &PolicySpec::always(1, 2), false).unwrap_err();
        assert!(matches!(
            err,
            Error::ZeroRealizedPropensity {
                record: 1,
                action: 1
            }
        ));
    }

    #[test]
    fn exact_p_hat_reproduces_true_score() {
        let log = l4();
        let policy = PolicySpec::always(1, 2);
        let exact = PropensityModel::exact_true_from_log(&log).unwrap();
        let hat = ipw_estimated(&log, &policy, &exact, false).unwrap();
        let tilde = ipw_true(&log, &policy, false).unwrap();
        assert_eq!(hat.value, tilde.value);
    }

    #[test]
    fn best_action_policy_examples() {
        let models = vec![
            RewardModel::from_table(0, vec![vec![0.0], vec![1.0], vec![2.0]], vec![0.2, 0.6, 0.5]),
            RewardModel::from_table(1, vec![vec![0.0], vec![1.0], vec![2.0]], vec![0.8, 0.4, 0.5]),
        ];
        let contexts = vec![vec![0.0], vec![1.0], vec![2.0]];
        let policy = best_action_policy(&models, &contexts).unwrap();
        assert_eq!(
            policy_probabilities(&policy, &[0.0]).unwrap(),
            vec![0.0, 1.0]
        );
        assert_eq!(
            policy_probabilities(&policy, &[1.0]).unwrap(),
            vec![1.0, 0.0]
        );
        // exact tie goes to action 0
        assert_eq!(
            policy_probabilities(&policy, &[2.0]).unwrap(),
            vec![1.0, 0.0]
        );
        assert!(policy.normalized());
    }

    #[test]
    fn intercept_only_hat_is_chosen_action_reward_mean() {
        // with an intercept-only estimated score, the estimator collapses
        // to the sample mean of rewards over rounds choosing the action
        let log = l4();
        let policy = PolicySpec::always(1, 2);
        let est = ipw_estimated(&log, &policy, &p_hat_075(), false).unwrap();
        let chosen: Vec<f64> = log
            .records
            .iter()
            .filter(|r| r.action == 1)
            .map(|r| r.reward)
            .collect();
        let mean = chosen.iter().sum::<f64>() / chosen.len() as f64;
        assert_relative_eq!(est.value, mean, epsilon = 1e-12);
    }

    #[test]
    fn argmax_reward_policy_is_usable_directly() {
        let models = vec![
            RewardModel::from_table(0, vec![vec![0.0]], vec![0.3]),
            RewardModel::from_table(1, vec![vec![0.0]], vec![0.7]),
        ];
        let policy = PolicySpec::argmax_reward(models).unwrap();
        let est = ipw_true(&l4(), &policy, false).unwrap();
        assert_relative_eq!(est.value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        let mk = |action: usize, reward: f32| LogRecord {
            context: Context {
                features: vec![0.0f32],
                batch_id: 1,
            },
            action,
            reward,
            realized_propensity: None,
            true_propensity: Some(vec![0.5, 0.5]),
        };
        let log = BanditLog {
            records: vec![mk(1, 1.0), mk(0, 0.0)],
            action_set: ActionSet::new(2),
            num_batches: 1,
        };
        let est = ipw_true(&log, &PolicySpec::<f32>::always(1, 2), false).unwrap();
        assert!((est.value - 1.0).abs() < 1e-6);
    }

    proptest! {
        /// Scaling all rewards by c scales every estimator value by c.
        #[test]
        fn scale_equivariance(c in -4.0f64..4.0, seed in 0u64..50) {
            let mut log = l4();
            // vary rewards a little so the property isn't trivial
            for (i, r) in log.records.iter_mut().enumerate() {
                r.reward += (seed as f64 * 0.1 + i as f64) * 0.01;
            }
            let mut scaled = log.clone();
            for r in &mut scaled.records {
                r.reward *= c;
            }
            let policy = PolicySpec::always(1, 2);
            for sn in [false, true] {
                let a = ipw_true(&log, &policy, sn).unwrap().value;
                let b = ipw_true(&scaled, &policy, sn).unwrap().value;
                prop_assert!((b - c * a).abs() < 1e-9 * (1.0 + a.abs() * c.abs()));
            }
        }

        /// Record order never affects the estimate (beyond float noise).
        #[test]
        fn permutation_invariance(perm in proptest::sample::select(vec![
            vec![0usize, 1, 2, 3], vec![3, 2, 1, 0], vec![2, 0, 3, 1], vec![1, 3, 0, 2],
        ])) {
            let log = l4();
            let shuffled = BanditLog {
                records: perm.iter().map(|&i| log.records[i].clone()).collect(),
                action_set: log.action_set.clone(),
                num_batches: log.num_batches,
            };
            let policy = PolicySpec::always(1, 2);
            let a = ipw_true(&log, &policy, false).unwrap().value;
            let b = ipw_true(&shuffled, &policy, false).unwrap().value;
            prop_assert!((a - b).abs() < 1e-12);
            let ha = ipw_estimated(&log, &policy, &p_hat_075(), false).unwrap().value;
            let hb = ipw_estimated(&shuffled, &policy, &p_hat_075(), false).unwrap().value;
            prop_assert!((ha - hb).abs() < 1e-12);
        }
    }

    #[test]
    fn diagnostics_report_weights_and_clipping() {
        let log = l4();
        let policy = PolicySpec::always(1, 2);
        let tilde = ipw_true(&log, &policy, false).unwrap();
        assert_eq!(tilde.diagnostics.max_weight, 2.0);
        assert_eq!(tilde.diagnostics.clipped_rounds, 0);

        // force clipping: a tiny fitted propensity on the chosen action
        let clipped_model = PropensityModel::exact_true_from_table(
            vec![vec![0.0]],
            &[vec![0.999, 0.001]],
        )
        .with_clip_floor(0.01);
        let est = ipw_estimated(&log, &policy, &clipped_model, false).unwrap();
        assert_eq!(est.diagnostics.clipped_rounds, 3);
        assert_eq!(est.diagnostics.max_weight, 100.0);
    }

    #[test]
    fn reward_model_link_used_in_argmax() {
        // smoke-check that a fitted logistic model plugs into the policy
        let log = l4();
        let m0 =
            crate::nuisance::fit_reward_model(&log, 0, BasisSpec::InterceptOnly, 1.0, LinkKind::Logistic)
                .unwrap();
        let m1 =
            crate::nuisance::fit_reward_model(&log, 1, BasisSpec::InterceptOnly, 1.0, LinkKind::Logistic)
                .unwrap();
        let policy = PolicySpec::argmax_reward(vec![m0, m1]).unwrap();
        let w = policy_probabilities(&policy, &[0.0]).unwrap();
        assert_eq!(w, vec![0.0, 1.0]);
    }
}
