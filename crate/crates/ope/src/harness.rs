//! Monte Carlo experiment runner.
//!
//! Ties the pieces together: simulate a batched-bandit log, fit the
//! first-step models, compute the requested value estimates and variances,
//! and aggregate across seeded replications. Also hosts the two-stage
//! best-action pipeline (reward models and the policy built on earlier
//! batches, value and variance estimated on later ones) and the report
//! renderer.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{run_logging, variance_gaps, GroundTruth, SyntheticEnv};
use crate::error::{Error, Result};
use crate::estimators::{
    best_action_policy, ipw_estimated, ipw_realized, ipw_true, EstimatorKind, ValueEstimate,
};
use crate::log::{BanditLog, ContextKey};
use crate::nuisance::{
    fit_reward_models_with_fallback, fit_ridge_logistic_propensity, fit_sieve_logit,
    fit_sieve_ls, BasisSpec, LinkKind, PropensityModel, RewardModel,
};
use crate::policy::{policy_probabilities, PolicySpec};
use crate::scalar::Real;
use crate::variance::{avar_estimated, avar_true, confidence_interval, VarianceEstimate};

// ── configuration ───────────────────────────────────────────────────────

/// Environment given inline or as a path to a JSON file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
#[serde(bound = "F: Real")]
pub enum EnvSource<F: Real> {
    Path(String),
    Inline(SyntheticEnv<F>),
}

impl<F: Real> EnvSource<F> {
    /// Load the environment; relative paths resolve against `base_dir`.
    pub fn resolve(&self, base_dir: Option<&Path>) -> Result<SyntheticEnv<F>> {
        match self {
            EnvSource::Inline(env) => Ok(env.clone()),
            EnvSource::Path(p) => {
                let path = Path::new(p);
                let full = match base_dir {
                    Some(base) if path.is_relative() => base.join(path),
                    _ => path.to_path_buf(),
                };
                let text = std::fs::read_to_string(&full)?;
                Ok(serde_json::from_str(&text)?)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyConfig {
    SieveLs,
    SieveLogit,
    Ridge,
    Import,
    ExactTrue,
}

/// Basis requested by configuration; instantiated per log since the
/// one-hot vocabulary comes from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BasisConfig {
    Intercept,
    Onehot,
    Poly { degree: usize },
}

impl BasisConfig {
    pub fn instantiate<F: Real>(&self, log: &BanditLog<F>) -> BasisSpec<F> {
        match self {
            BasisConfig::Intercept => BasisSpec::InterceptOnly,
            BasisConfig::Onehot => BasisSpec::one_hot_from_log(log),
            BasisConfig::Poly { degree } => BasisSpec::Polynomial { degree: *degree },
        }
    }

    /// CLI spelling: `intercept`, `onehot`, or `poly:<degree>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "intercept" => Ok(BasisConfig::Intercept),
            "onehot" => Ok(BasisConfig::Onehot),
            _ => {
                if let Some(d) = s.strip_prefix("poly:") {
                    let degree: usize = d
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("bad poly degree {d:?}")))?;
                    if degree == 0 {
                        return Err(Error::InvalidConfig("poly degree must be >= 1".into()));
                    }
                    Ok(BasisConfig::Poly { degree })
                } else {
                    Err(Error::InvalidConfig(format!(
                        "unknown basis {s:?} (expected intercept, onehot, or poly:<d>)"
                    )))
                }
            }
        }
    }
}

fn default_clip<F: Real>() -> F {
    F::of(crate::nuisance::DEFAULT_CLIP_FLOOR)
}
fn default_lambda<F: Real>() -> F {
    F::one()
}
fn default_max_iter() -> usize {
    crate::nuisance::DEFAULT_MAX_ITER
}
fn default_tol<F: Real>() -> F {
    F::of(crate::nuisance::DEFAULT_TOL)
}
fn default_onehot() -> BasisConfig {
    BasisConfig::Onehot
}
fn default_level<F: Real>() -> F {
    F::of(0.95)
}
fn default_batches() -> usize {
    1
}
fn default_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::EstimatedScore, EstimatorKind::TrueScore]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct PropensityConfig<F: Real> {
    pub family: FamilyConfig,
    #[serde(default = "default_onehot")]
    pub basis: BasisConfig,
    /// Ridge penalty (ridge family only).
    #[serde(default = "default_lambda")]
    pub lambda: F,
    #[serde(default = "default_clip")]
    pub clip_floor: F,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: F,
}

impl<F: Real> Default for PropensityConfig<F> {
    fn default() -> Self {
        PropensityConfig {
            family: FamilyConfig::SieveLogit,
            basis: default_onehot(),
            lambda: default_lambda(),
            clip_floor: default_clip(),
            max_iter: default_max_iter(),
            tol: default_tol(),
        }
    }
}

impl<F: Real> PropensityConfig<F> {
    pub fn fit(&self, log: &BanditLog<F>) -> Result<PropensityModel<F>> {
        let basis = self.basis.instantiate(log);
        Ok(match self.family {
            FamilyConfig::SieveLs => {
                fit_sieve_ls(log, basis)?.with_clip_floor(self.clip_floor)
            }
            FamilyConfig::SieveLogit => fit_sieve_logit(log, basis, self.max_iter, self.tol)?
                .with_clip_floor(self.clip_floor),
            FamilyConfig::Ridge => fit_ridge_logistic_propensity(log, basis, self.lambda)?
                .with_clip_floor(self.clip_floor),
            FamilyConfig::ExactTrue => PropensityModel::exact_true_from_log(log)?,
            FamilyConfig::Import => {
                return Err(Error::InvalidConfig(
                    "the import family needs a precomputed score file; \
                     fit it via the CLI instead"
                        .into(),
                ))
            }
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct RewardConfig<F: Real> {
    #[serde(default = "default_onehot")]
    pub basis: BasisConfig,
    #[serde(default = "default_lambda")]
    pub lambda: F,
    pub link: LinkKind,
}

impl<F: Real> Default for RewardConfig<F> {
    fn default() -> Self {
        RewardConfig {
            basis: default_onehot(),
            lambda: default_lambda(),
            link: LinkKind::Logistic,
        }
    }
}

impl<F: Real> RewardConfig<F> {
    pub fn fit(&self, log: &BanditLog<F>) -> Result<Vec<RewardModel<F>>> {
        let basis = self.basis.instantiate(log);
        fit_reward_models_with_fallback(log, &basis, self.lambda, self.link)
    }
}

/// Marker for the best-action policy directive in config files.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub enum BestActionTag {
    #[serde(rename = "best_action")]
    BestAction,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct BestActionDirective<F: Real> {
    pub kind: BestActionTag,
    /// Leading fraction of batches used to fit the best-action map.
    pub train_fraction: F,
    /// Trailing fraction used for value estimation; defaults to the
    /// complement of `train_fraction`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_fraction: Option<F>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
#[serde(bound = "F: Real")]
pub enum PolicyDirective<F: Real> {
    BestAction(BestActionDirective<F>),
    Spec(PolicySpec<F>),
}

/// Everything a Monte Carlo run needs; serialized as the `monte-carlo`
/// subcommand's JSON config.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct ExperimentConfig<F: Real> {
    pub env: EnvSource<F>,
    pub policy: PolicyDirective<F>,
    pub t: usize,
    #[serde(default = "default_batches")]
    pub b: usize,
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default)]
    pub propensity: PropensityConfig<F>,
    #[serde(default)]
    pub reward: RewardConfig<F>,
    #[serde(default = "default_level")]
    pub level: F,
}

// ── summaries ───────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetLabel {
    #[serde(rename = "target-policy")]
    TargetPolicy,
    #[serde(rename = "logging-policy")]
    LoggingPolicy,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct EstimatorSummary<F: Real> {
    pub kind: EstimatorKind,
    pub target: TargetLabel,
    pub mean: F,
    pub bias: F,
    /// Empirical variance of `sqrt(T) * (estimate - truth)` across
    /// replications; absent (flagged) with a single replication.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance_scaled: Option<F>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_avar: Option<F>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_ci_half_width: Option<F>,
    /// Fraction of replications whose CI covered the truth.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<F>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct ReplicationSummary<F: Real> {
    pub t: usize,
    pub b: usize,
    pub replications: usize,
    pub seed: u64,
    pub level: F,
    /// Closed-form oracle for the target policy.
    pub oracle: GroundTruth<F>,
    /// Exact logging-policy value (best-action mode only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logging_truth: Option<F>,
    /// Fraction of replications recovering the oracle best-action map.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recovery_rate: Option<F>,
    /// Fraction of replications where the target policy's lower CI bound
    /// exceeded the logging policy's point estimate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub improvement_rate: Option<F>,
    pub estimators: Vec<EstimatorSummary<F>>,
}

// ── per-replication plumbing ────────────────────────────────────────────

struct RepRow<F> {
    kind: EstimatorKind,
    target: TargetLabel,
    value: F,
    t: usize,
    avar: Option<F>,
    half_width: Option<F>,
    covered: Option<bool>,
}

struct RepOutcome<F> {
    rows: Vec<RepRow<F>>,
    recovered: Option<bool>,
    improved: Option<bool>,
}

type RepRunner<F> = Box<dyn Fn(usize) -> Result<RepOutcome<F>> + Sync>;

fn estimate_for_kind<F: Real>(
    kind: EstimatorKind,
    log: &BanditLog<F>,
    policy: &PolicySpec<F>,
    p_hat: Option<&PropensityModel<F>>,
    mu_hat: Option<&[RewardModel<F>]>,
) -> Result<(ValueEstimate<F>, Option<VarianceEstimate<F>>)> {
    let sn = kind.self_normalized();
    match kind {
        EstimatorKind::EstimatedScore | EstimatorKind::EstimatedScoreSn => {
            let model = p_hat.ok_or_else(|| {
                Error::InvalidConfig("estimated-score kinds need a propensity model".into())
            })?;
            let est = ipw_estimated(log, policy, model, sn)?;
            let mu = mu_hat.ok_or_else(|| {
                Error::InvalidConfig("estimated-score kinds need reward models".into())
            })?;
            let avar = avar_estimated(log, est.value, model, mu, policy)?;
            Ok((est, Some(avar)))
        }
        EstimatorKind::TrueScore | EstimatorKind::TrueScoreSn => {
            let est = ipw_true(log, policy, sn)?;
            let avar = avar_true(log, est.value, policy)?;
            Ok((est, Some(avar)))
        }
        EstimatorKind::RealizedScore | EstimatorKind::RealizedScoreSn => {
            // no asymptotic-variance estimator exists for realized weights
            Ok((ipw_realized(log, policy, sn)?, None))
        }
    }
}

fn rep_row<F: Real>(
    kind: EstimatorKind,
    target: TargetLabel,
    truth: F,
    level: F,
    est: &ValueEstimate<F>,
    avar: Option<&VarianceEstimate<F>>,
) -> Result<RepRow<F>> {
    let (half_width, covered) = match avar {
        Some(a) => {
            let (lo, hi) = confidence_interval(est.value, a, level)?;
            (
                Some((hi - lo) / F::of(2.0)),
                Some(lo <= truth && truth <= hi),
            )
        }
        None => (None, None),
    };
    Ok(RepRow {
        kind,
        target,
        value: est.value,
        t: est.t,
        avar: avar.map(|a| a.avar),
        half_width,
        covered,
    })
}

// ── the Monte Carlo loop ────────────────────────────────────────────────

/// Run `replications` independent simulations of the experiment and
/// aggregate. Replication `i` is seeded with `seed + i`, so summaries are
/// bit-identical across runs and across worker counts.
pub fn monte_carlo<F: Real>(
    config: &ExperimentConfig<F>,
    workers: usize,
) -> Result<ReplicationSummary<F>> {
    if config.replications < 1 {
        return Err(Error::InvalidConfig("replications must be >= 1".into()));
    }
    if config.t < 1 {
        return Err(Error::InvalidConfig("t must be >= 1".into()));
    }
    if config.estimators.is_empty() {
        return Err(Error::InvalidConfig("no estimators requested".into()));
    }
    let env = config.env.resolve(None)?;

    let (oracle, logging_truth, run): (GroundTruth<F>, Option<F>, RepRunner<F>) =
        match &config.policy {
        PolicyDirective::Spec(policy) => {
            let oracle = variance_gaps(&env, policy)?;
            let needs_estimated = config.estimators.iter().any(|k| {
                matches!(
                    k,
                    EstimatorKind::EstimatedScore | EstimatorKind::EstimatedScoreSn
                )
            });
            let env_ref = env.clone();
            let cfg = config.clone();
            let policy = policy.clone();
            let run = move |i: usize| -> Result<RepOutcome<F>> {
                let log = run_logging(&env_ref, cfg.t, cfg.b, cfg.seed.wrapping_add(i as u64))?;
                let p_hat = if needs_estimated {
                    Some(cfg.propensity.fit(&log)?)
                } else {
                    None
                };
                let mu_hat = if needs_estimated {
                    Some(cfg.reward.fit(&log)?)
                } else {
                    None
                };
                let mut rows = Vec::with_capacity(cfg.estimators.len());
                for &kind in &cfg.estimators {
                    let (est, avar) =
                        estimate_for_kind(kind, &log, &policy, p_hat.as_ref(), mu_hat.as_deref())?;
                    rows.push(rep_row(
                        kind,
                        TargetLabel::TargetPolicy,
                        oracle.true_value,
                        cfg.level,
                        &est,
                        avar.as_ref(),
                    )?);
                }
                Ok(RepOutcome {
                    rows,
                    recovered: None,
                    improved: None,
                })
            };
            (oracle, None, Box::new(run))
        }
        PolicyDirective::BestAction(directive) => {
            let oracle_policy = env.best_action_oracle_policy();
            let oracle = variance_gaps(&env, &oracle_policy)?;
            let logging_truth = env.logging_policy_value()?;
            let kind = *config.estimators.first().unwrap();
            let pipe = PipelineConfig {
                train_fraction: directive.train_fraction,
                eval_fraction: directive.eval_fraction,
                estimator: kind,
                propensity: config.propensity.clone(),
                reward: config.reward.clone(),
                level: config.level,
            };
            let best_map = env.best_action_map();
            let contexts = env.context_features();
            let env_ref = env.clone();
            let cfg = config.clone();
            let run = move |i: usize| -> Result<RepOutcome<F>> {
                let log = run_logging(&env_ref, cfg.t, cfg.b, cfg.seed.wrapping_add(i as u64))?;
                let outcome = best_action_pipeline(&log, &pipe)?;
                let recovered = policy_matches_map(&outcome.policy, &contexts, &best_map)?;
                let rows = vec![
                    rep_row(
                        kind,
                        TargetLabel::TargetPolicy,
                        oracle.true_value,
                        cfg.level,
                        &outcome.policy_value,
                        Some(&outcome.policy_variance),
                    )?,
                    rep_row(
                        kind,
                        TargetLabel::LoggingPolicy,
                        logging_truth,
                        cfg.level,
                        &outcome.logging_value,
                        Some(&outcome.logging_variance),
                    )?,
                ];
                let improved = outcome.policy_ci.0 > outcome.logging_value.value;
                Ok(RepOutcome {
                    rows,
                    recovered: Some(recovered),
                    improved: Some(improved),
                })
            };
            (oracle, Some(logging_truth), Box::new(run))
        }
    };

    let wrap = |i: usize| {
        run(i).map_err(|e| Error::Replication {
            index: i,
            source: Box::new(e),
        })
    };

    let outcomes: Vec<RepOutcome<F>> = if workers <= 1 {
        (0..config.replications)
            .map(wrap)
            .collect::<Result<Vec<_>>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| {
            (0..config.replications)
                .into_par_iter()
                .map(wrap)
                .collect::<Result<Vec<_>>>()
        })?
    };

    Ok(aggregate(config, &env, oracle, logging_truth, &outcomes))
}

fn policy_matches_map<F: Real>(
    policy: &PolicySpec<F>,
    contexts: &[Vec<F>],
    best_map: &[usize],
) -> Result<bool> {
    for (features, &best) in contexts.iter().zip(best_map.iter()) {
        let w = policy_probabilities(policy, features)?;
        let argmax = w
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if argmax != best {
            return Ok(false);
        }
    }
    Ok(true)
}

fn mean_of<F: Real>(values: &[F]) -> F {
    values.iter().copied().sum::<F>() / F::of_usize(values.len().max(1))
}

fn aggregate<F: Real>(
    config: &ExperimentConfig<F>,
    _env: &SyntheticEnv<F>,
    oracle: GroundTruth<F>,
    logging_truth: Option<F>,
    outcomes: &[RepOutcome<F>],
) -> ReplicationSummary<F> {
    let r = outcomes.len();
    let row_count = outcomes[0].rows.len();
    let mut estimators = Vec::with_capacity(row_count);
    for slot in 0..row_count {
        let kind = outcomes[0].rows[slot].kind;
        let target = outcomes[0].rows[slot].target;
        let truth = match target {
            TargetLabel::TargetPolicy => oracle.true_value,
            TargetLabel::LoggingPolicy => logging_truth.unwrap_or(oracle.true_value),
        };
        let values: Vec<F> = outcomes.iter().map(|o| o.rows[slot].value).collect();
        let mean = mean_of(&values);

        let variance_scaled = if r >= 2 {
            let scaled: Vec<F> = outcomes
                .iter()
                .map(|o| {
                    let row = &o.rows[slot];
                    F::of_usize(row.t).sqrt() * (row.value - truth)
                })
                .collect();
            let m = mean_of(&scaled);
            let ss: F = scaled.iter().map(|v| (*v - m) * (*v - m)).sum();
            Some(ss / F::of_usize(r - 1))
        } else {
            None
        };

        let avars: Vec<F> = outcomes.iter().filter_map(|o| o.rows[slot].avar).collect();
        let hws: Vec<F> = outcomes
            .iter()
            .filter_map(|o| o.rows[slot].half_width)
            .collect();
        let covers: Vec<bool> = outcomes
            .iter()
            .filter_map(|o| o.rows[slot].covered)
            .collect();

        estimators.push(EstimatorSummary {
            kind,
            target,
            mean,
            bias: mean - truth,
            variance_scaled,
            mean_avar: (avars.len() == r).then(|| mean_of(&avars)),
            mean_ci_half_width: (hws.len() == r).then(|| mean_of(&hws)),
            coverage: (covers.len() == r).then(|| {
                F::of_usize(covers.iter().filter(|c| **c).count()) / F::of_usize(r)
            }),
        });
    }

    let rate = |flags: Vec<Option<bool>>| -> Option<F> {
        let known: Vec<bool> = flags.into_iter().flatten().collect();
        (known.len() == r).then(|| {
            F::of_usize(known.iter().filter(|c| **c).count()) / F::of_usize(r)
        })
    };

    ReplicationSummary {
        t: config.t,
        b: config.b,
        replications: r,
        seed: config.seed,
        level: config.level,
        oracle,
        logging_truth,
        recovery_rate: rate(outcomes.iter().map(|o| o.recovered).collect()),
        improvement_rate: rate(outcomes.iter().map(|o| o.improved).collect()),
        estimators,
    }
}

// ── the best-action pipeline ────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct PipelineConfig<F: Real> {
    pub train_fraction: F,
    pub eval_fraction: Option<F>,
    pub estimator: EstimatorKind,
    pub propensity: PropensityConfig<F>,
    pub reward: RewardConfig<F>,
    pub level: F,
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome<F: Real> {
    /// The fitted best-action policy (a degenerate table).
    pub policy: PolicySpec<F>,
    pub policy_value: ValueEstimate<F>,
    pub policy_variance: VarianceEstimate<F>,
    pub policy_ci: (F, F),
    pub logging_value: ValueEstimate<F>,
    pub logging_variance: VarianceEstimate<F>,
    pub logging_ci: (F, F),
    /// Actions whose reward model fell back to intercept-only.
    pub fallback_actions: Vec<usize>,
    pub train_rounds: usize,
    pub eval_rounds: usize,
}

/// Split the log at a batch boundary, learn the best-action policy on the
/// leading batches, and estimate its value (and the logging policy's) on
/// the trailing batches only.
pub fn best_action_pipeline<F: Real>(
    log: &BanditLog<F>,
    cfg: &PipelineConfig<F>,
) -> Result<PipelineOutcome<F>> {
    let b = log.num_batches;
    if b < 2 {
        return Err(Error::InvalidConfig(
            "the best-action pipeline needs at least two batches to split".into(),
        ));
    }
    let f_train = cfg.train_fraction;
    if !(f_train > F::zero() && f_train < F::one()) {
        return Err(Error::InvalidConfig(format!(
            "train fraction {f_train} outside (0, 1)"
        )));
    }
    let f_eval = cfg.eval_fraction.unwrap_or(F::one() - f_train);
    if !(f_eval > F::zero() && f_eval < F::one()) || f_train + f_eval > F::one() + F::of(1e-9) {
        return Err(Error::InvalidConfig(
            "split fractions must lie in (0, 1) and sum to at most 1".into(),
        ));
    }

    let bf = F::of_usize(b);
    let clamp = |x: F, lo: usize, hi: usize| -> usize {
        let rounded = x.round().to_f64().unwrap_or(1.0) as usize;
        rounded.clamp(lo, hi)
    };
    let train_batches = clamp(f_train * bf, 1, b - 1);
    let eval_batches = clamp(f_eval * bf, 1, b - train_batches);
    let eval_start = b - eval_batches + 1;

    let train = log.filter_batches(|bid| bid <= train_batches);
    let eval = log.filter_batches(|bid| bid >= eval_start);
    if train.is_empty() {
        return Err(Error::EmptyPartition("train"));
    }
    if eval.is_empty() {
        return Err(Error::EmptyPartition("eval"));
    }

    // best-action map from the train partition only; the basis covers the
    // whole log's contexts so the policy table can serve the eval rounds
    let contexts = log.distinct_contexts();
    let reward_basis = match cfg.reward.basis {
        BasisConfig::Onehot => BasisSpec::one_hot(contexts.clone()),
        ref other => other.instantiate(log),
    };
    let train_models = fit_reward_models_with_fallback(
        &train,
        &reward_basis,
        cfg.reward.lambda,
        cfg.reward.link,
    )?;
    let fallback_actions: Vec<usize> = train_models
        .iter()
        .filter(|m| m.intercept_fallback)
        .map(|m| m.action)
        .collect();
    let policy = best_action_policy(&train_models, &contexts)?;

    // estimation-side nuisances come from the eval partition alone
    let needs_estimated = matches!(
        cfg.estimator,
        EstimatorKind::EstimatedScore | EstimatorKind::EstimatedScoreSn
    );
    let needs_true = matches!(
        cfg.estimator,
        EstimatorKind::TrueScore | EstimatorKind::TrueScoreSn
    );
    if !needs_estimated && !needs_true {
        return Err(Error::InvalidConfig(
            "the pipeline needs an estimator with a variance estimator \
             (hat, hat_sn, tilde, or tilde_sn)"
                .into(),
        ));
    }
    let p_hat = cfg.propensity.fit(&eval)?;
    let mu_eval = cfg.reward.fit(&eval)?;

    let (policy_value, policy_variance) = estimate_for_kind(
        cfg.estimator,
        &eval,
        &policy,
        Some(&p_hat),
        Some(&mu_eval),
    )?;
    let policy_variance = policy_variance.expect("kind checked above");
    let policy_ci = confidence_interval(policy_value.value, &policy_variance, cfg.level)?;

    // the logging policy, evaluated as a stochastic target whose weights
    // are the fitted scores themselves (rows renormalized after clipping)
    let logging_policy = logging_policy_from_model(&p_hat, &eval)?;
    let (logging_value, logging_variance) = estimate_for_kind(
        cfg.estimator,
        &eval,
        &logging_policy,
        Some(&p_hat),
        Some(&mu_eval),
    )?;
    let logging_variance = logging_variance.expect("kind checked above");
    let logging_ci = confidence_interval(logging_value.value, &logging_variance, cfg.level)?;

    Ok(PipelineOutcome {
        policy,
        policy_value,
        policy_variance,
        policy_ci,
        logging_value,
        logging_variance,
        logging_ci,
        fallback_actions,
        train_rounds: train.len(),
        eval_rounds: eval.len(),
    })
}

/// Table policy whose weights are the fitted propensities at each eval
/// context, renormalized to sum to exactly one.
fn logging_policy_from_model<F: Real>(
    p_hat: &PropensityModel<F>,
    eval: &BanditLog<F>,
) -> Result<PolicySpec<F>> {
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for r in &eval.records {
        let key = ContextKey::of(&r.context.features);
        if !seen.insert(key) {
            continue;
        }
        let mut w = p_hat.predict(0, &r.context.features)?;
        let total: F = w.iter().copied().sum();
        if total <= F::zero() {
            return Err(Error::InvalidConfig(
                "fitted propensities sum to zero at a context".into(),
            ));
        }
        for v in w.iter_mut() {
            *v /= total;
        }
        entries.push((r.context.features.clone(), w));
    }
    PolicySpec::table(entries)
}

// ── reporting ───────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            _ => Err(Error::InvalidConfig(format!("unknown report format {s:?}"))),
        }
    }
}

/// Percentage change of a CI half-width relative to the true-score
/// baseline, e.g. `-23.4%`.
fn shrinkage_cell<F: Real>(hw: Option<F>, baseline: Option<F>) -> String {
    match (hw, baseline) {
        (Some(h), Some(b)) if b > F::zero() => {
            let pct = ((h / b).to_f64().unwrap_or(f64::NAN) - 1.0) * 100.0;
            if pct.abs() < 0.05 {
                "0%".to_string()
            } else {
                format!("{pct:.1}%")
            }
        }
        _ => "-".to_string(),
    }
}

fn fmt_opt<F: Real>(v: Option<F>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => "-".to_string(),
    }
}

/// Render a summary. The markdown table mirrors the usual
/// estimator-comparison layout: one row per estimator with its CI
/// half-width and the shrinkage relative to the true-score estimator
/// (omitted when there is no baseline to compare against).
pub fn report<F: Real>(summary: &ReplicationSummary<F>, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(summary)?),
        ReportFormat::Csv => {
            let mut out = String::from(
                "target,kind,mean,bias,variance_scaled,mean_avar,mean_ci_half_width,coverage\n",
            );
            for e in &summary.estimators {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    label(e.target),
                    e.kind.name(),
                    e.mean,
                    e.bias,
                    opt_raw(e.variance_scaled),
                    opt_raw(e.mean_avar),
                    opt_raw(e.mean_ci_half_width),
                    opt_raw(e.coverage),
                ));
            }
            Ok(out)
        }
        ReportFormat::Markdown => Ok(render_markdown(summary)),
    }
}

fn label(target: TargetLabel) -> &'static str {
    match target {
        TargetLabel::TargetPolicy => "target-policy",
        TargetLabel::LoggingPolicy => "logging-policy",
    }
}

fn opt_raw<F: Real>(v: Option<F>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

fn render_markdown<F: Real>(summary: &ReplicationSummary<F>) -> String {
    let baseline_for = |target: TargetLabel| -> Option<F> {
        let find = |kind: EstimatorKind| {
            summary
                .estimators
                .iter()
                .find(|e| e.target == target && e.kind == kind)
                .and_then(|e| e.mean_ci_half_width)
        };
        find(EstimatorKind::TrueScore).or_else(|| find(EstimatorKind::TrueScoreSn))
    };
    let with_shrinkage = summary.estimators.len() > 1
        && summary
            .estimators
            .iter()
            .any(|e| baseline_for(e.target).is_some());

    let mut out = String::new();
    out.push_str(&format!(
        "| truth {:.6} | bound {:.6} | tilde avar {:.6} | T {} | R {} |\n\n",
        summary.oracle.true_value,
        summary.oracle.efficiency_bound,
        summary.oracle.tilde_avar,
        summary.t,
        summary.replications,
    ));
    if with_shrinkage {
        out.push_str(
            "| target | estimator | mean | bias | var(sqrtT err) | mean avar | CI half-width | shrinkage | coverage |\n",
        );
        out.push_str("|---|---|---|---|---|---|---|---|---|\n");
    } else {
        out.push_str(
            "| target | estimator | mean | bias | var(sqrtT err) | mean avar | CI half-width | coverage |\n",
        );
        out.push_str("|---|---|---|---|---|---|---|---|\n");
    }
    for e in &summary.estimators {
        let mut row = format!(
            "| {} | {} | {:.6} | {:.6} | {} | {} | {} |",
            label(e.target),
            e.kind.name(),
            e.mean,
            e.bias,
            fmt_opt(e.variance_scaled),
            fmt_opt(e.mean_avar),
            fmt_opt(e.mean_ci_half_width),
        );
        if with_shrinkage {
            row.push_str(&format!(
                " {} |",
                shrinkage_cell(e.mean_ci_half_width, baseline_for(e.target))
            ));
        }
        row.push_str(&format!(" {} |\n", fmt_opt(e.coverage)));
        out.push_str(&row);
    }
    if let Some(rate) = summary.recovery_rate {
        out.push_str(&format!("\nbest-action recovery rate: {rate:.4}\n"));
    }
    if let Some(rate) = summary.improvement_rate {
        out.push_str(&format!(
            "target-policy lower CI above logging point estimate: {rate:.4}\n"
        ));
    }
    out
}
