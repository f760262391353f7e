//! Statistical behavior on simulated logs: weight-mean convergence,
//! training-fit dominance of fitted scores, agreement between exact and
//! fitted weightings, and the variance ordering of the two asymptotic
//! variance estimators.

use ope::dgp::{presets, run_logging};
use ope::estimators::{ipw_estimated, ipw_true};
use ope::nuisance::{
    fit_reward_models, fit_sieve_logit, fit_sieve_ls, BasisSpec, LinkKind, PropensityModel,
};
use ope::policy::PolicySpec;
use ope::variance::{avar_estimated, avar_true};

/// Self-normalization denominators with exact weights concentrate around
/// one at the usual root-T rate.
#[test]
fn sn_denominator_converges_to_one() {
    let env = presets::two_context_ab::<f64>();
    let t = 10_000;
    let log = run_logging(&env, t, 1, 21).unwrap();
    let policy = env.best_action_oracle_policy();
    let est = ipw_true(&log, &policy, true).unwrap();

    // empirical variance of the per-round weight terms
    let weights: Vec<f64> = log
        .records
        .iter()
        .map(|r| {
            let pi = ope::policy::policy_probabilities(&policy, &r.context.features).unwrap();
            pi[r.action] / r.true_propensity.as_ref().unwrap()[r.action]
        })
        .collect();
    let mean = weights.iter().sum::<f64>() / t as f64;
    let var = weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (t - 1) as f64;
    let bound = 3.0 * (var / t as f64).sqrt();
    assert!(
        (est.sn_denominator - 1.0).abs() < bound,
        "denominator {} deviates more than {bound}",
        est.sn_denominator
    );
}

/// A propensity model fitted on its own log explains the chosen actions at
/// least as well as the exact truth does.
#[test]
fn fitted_scores_dominate_truth_in_training_fit() {
    let env = presets::two_context_ab::<f64>();
    let log = run_logging(&env, 5_000, 1, 31).unwrap();
    let basis = BasisSpec::one_hot_from_log(&log);
    let exact = PropensityModel::exact_true_from_log(&log).unwrap();

    let logit = fit_sieve_logit(&log, basis.clone(), 200, 1e-10)
        .unwrap()
        .with_clip_floor(0.0);
    assert!(logit.mean_nll(&log).unwrap() <= exact.mean_nll(&log).unwrap() + 1e-12);

    let ls = fit_sieve_ls(&log, basis).unwrap().with_clip_floor(0.0);
    assert!(
        ls.mean_squared_error(&log).unwrap()
            <= exact.mean_squared_error(&log).unwrap() + 1e-12
    );
}

/// Plugging the exact score into the estimated-score path reproduces the
/// true-score estimate exactly.
#[test]
fn exact_plug_in_equals_true_score_on_simulated_logs() {
    let env = presets::uniform_ab::<f64>();
    let log = run_logging(&env, 2_000, 1, 41).unwrap();
    let policy = PolicySpec::always(1, 2);
    let exact = PropensityModel::exact_true_from_log(&log).unwrap();
    let hat = ipw_estimated(&log, &policy, &exact, false).unwrap();
    let tilde = ipw_true(&log, &policy, false).unwrap();
    assert_eq!(hat.value, tilde.value);
}

/// With exact nuisances the efficient variance estimate sits below the
/// true-score variance estimate on average (the influence correction
/// subtracts a nonnegative component).
#[test]
fn efficient_avar_below_true_avar_across_replications() {
    let env = presets::uniform_ab::<f64>();
    let policy = PolicySpec::always(1, 2);
    let reps = 200;
    let t = 1_000;
    let mut mean_eff = 0.0;
    let mut mean_true = 0.0;
    for i in 0..reps {
        let log = run_logging(&env, t, 1, 1_000 + i).unwrap();
        let p_exact = PropensityModel::exact_true_from_log(&log).unwrap();
        let mu_exact = env.exact_reward_models();
        let v_hat = ipw_estimated(&log, &policy, &p_exact, false).unwrap().value;
        let v_tilde = ipw_true(&log, &policy, false).unwrap().value;
        mean_eff += avar_estimated(&log, v_hat, &p_exact, &mu_exact, &policy)
            .unwrap()
            .avar;
        mean_true += avar_true(&log, v_tilde, &policy).unwrap().avar;
    }
    mean_eff /= reps as f64;
    mean_true /= reps as f64;
    assert!(
        mean_eff < mean_true,
        "mean efficient avar {mean_eff} not below mean true-score avar {mean_true}"
    );
    // and both sit near their oracle targets
    assert!((mean_eff - 0.48).abs() < 0.05, "mean_eff = {mean_eff}");
    assert!((mean_true - 0.84).abs() < 0.05, "mean_true = {mean_true}");
}

/// The full variance ordering on an environment where both gaps are
/// positive: estimated < true < realized, each separation wider than two
/// Monte Carlo standard errors.
#[test]
fn variance_ordering_with_separation() {
    use ope::estimators::EstimatorKind;
    use ope::harness::{
        monte_carlo, BasisConfig, EnvSource, ExperimentConfig, FamilyConfig, PolicyDirective,
        PropensityConfig, RewardConfig, TargetLabel,
    };

    let config = ExperimentConfig {
        env: EnvSource::Inline(presets::mixed_ab()),
        policy: PolicyDirective::Spec(PolicySpec::always(1, 2)),
        t: 1000,
        b: 1,
        replications: 800,
        seed: 4242,
        estimators: vec![
            EstimatorKind::EstimatedScore,
            EstimatorKind::TrueScore,
            EstimatorKind::RealizedScore,
        ],
        propensity: PropensityConfig {
            family: FamilyConfig::SieveLs,
            basis: BasisConfig::Onehot,
            ..Default::default()
        },
        reward: RewardConfig::default(),
        level: 0.95,
    };
    let summary = monte_carlo(&config, 2).unwrap();
    let var_of = |kind: EstimatorKind| {
        summary
            .estimators
            .iter()
            .find(|e| e.kind == kind && e.target == TargetLabel::TargetPolicy)
            .unwrap()
            .variance_scaled
            .unwrap()
    };
    let v_hat = var_of(EstimatorKind::EstimatedScore);
    let v_tilde = var_of(EstimatorKind::TrueScore);
    let v_ddot = var_of(EstimatorKind::RealizedScore);
    let r = summary.replications as f64;
    let se = |a: f64, b: f64| ((a * a + b * b) * 2.0 / (r - 1.0)).sqrt();
    assert!(
        v_tilde - v_hat > 2.0 * se(v_hat, v_tilde),
        "hat {v_hat} vs tilde {v_tilde}"
    );
    assert!(
        v_ddot - v_tilde > 2.0 * se(v_tilde, v_ddot),
        "tilde {v_tilde} vs ddot {v_ddot}"
    );
}

/// Reward models fitted per action converge to the true arm means.
#[test]
fn reward_models_converge_to_arm_means() {
    let env = presets::two_context_ab::<f64>();
    let log = run_logging(&env, 50_000, 1, 51).unwrap();
    let basis = BasisSpec::one_hot_from_log(&log);
    let models = fit_reward_models(&log, &basis, 1.0, LinkKind::Logistic).unwrap();
    for (i, features) in env.context_features().iter().enumerate() {
        for (a, model) in models.iter().enumerate() {
            let mu = model.predict(features).unwrap();
            let truth = env.arm(i, a).mean();
            assert!(
                (mu - truth).abs() < 0.02,
                "context {i}, action {a}: {mu} vs {truth}"
            );
        }
    }
}
