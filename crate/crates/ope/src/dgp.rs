//! Synthetic batched-bandit environments with closed-form oracles.
//!
//! Environments have finitely many discrete contexts, so every oracle
//! (the target-policy value, the semiparametric efficiency bound, and the
//! variance penalties paid by the true-score and realized-score
//! estimators) is an exact sum. The Monte Carlo harness checks the
//! estimators against these numbers.
//!
//! Logging rules cover random A/B testing, per-batch epsilon-greedy,
//! per-batch Gaussian Thompson sampling, and an explicit stochastic rule
//! that draws the per-round probability vector from a finite mixture (the
//! one rule whose realized vectors differ from their mean, which is what
//! separates the realized-score estimator from the true-score one).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log::{ActionSet, BanditLog, Context, LogRecord};
use crate::normal::standard_normal_cdf;
use crate::nuisance::{PropensityModel, RewardModel};
use crate::policy::{policy_probabilities, PolicySpec};
use crate::scalar::Real;

/// Initial mean estimate for batched rules before any data arrives.
const INITIAL_MEAN: f64 = 0.5;
/// Initial variance estimate, the Bernoulli maximum-entropy value.
const INITIAL_VARIANCE: f64 = 0.25;
/// Floor on estimated variances inside Thompson sampling, keeping every
/// action reachable (Assumption-1-style positivity) even when an arm's
/// observed rewards are constant.
const THOMPSON_VARIANCE_FLOOR: f64 = 1e-6;

// ── environment definition ──────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct DiscreteContext<F: Real> {
    pub probability: F,
    pub features: Vec<F>,
}

/// Reward distribution of one (action, context) arm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ArmDist<F> {
    Bernoulli { mean: F },
    Gaussian { mean: F, var: F },
}

impl<F: Real> ArmDist<F> {
    pub fn mean(&self) -> F {
        match self {
            ArmDist::Bernoulli { mean } | ArmDist::Gaussian { mean, .. } => *mean,
        }
    }

    pub fn variance(&self) -> F {
        match self {
            ArmDist::Bernoulli { mean } => *mean * (F::one() - *mean),
            ArmDist::Gaussian { var, .. } => *var,
        }
    }

    pub fn second_moment(&self) -> F {
        self.variance() + self.mean() * self.mean()
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> F {
        match self {
            ArmDist::Bernoulli { mean } => {
                if F::sample_uniform(rng) < *mean {
                    F::one()
                } else {
                    F::zero()
                }
            }
            ArmDist::Gaussian { mean, var } => {
                *mean + var.sqrt() * F::sample_standard_normal(rng)
            }
        }
    }
}

/// One candidate probability vector of a stochastic logging rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct MixtureComponent<F: Real> {
    pub weight: F,
    pub probs: Vec<F>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
#[serde(bound = "F: Real")]
pub enum LoggingRule<F: Real> {
    /// Every action uniformly at random, all rounds.
    Uniform,
    /// Per batch, the empirically best action with probability `1 - eps`,
    /// the rest uniformly. One epsilon per batch.
    EpsGreedy {
        eps_per_batch: Vec<F>,
        /// Refit estimates every round instead of freezing them per batch.
        #[serde(default)]
        adaptive: bool,
    },
    /// Per batch, Gaussian Thompson sampling on estimated arm means and
    /// variances.
    ThompsonGaussian {
        batches: usize,
        /// Monte Carlo draws used when there are more than two actions.
        num_draws: usize,
        #[serde(default)]
        adaptive: bool,
    },
    /// Per context, the round's probability vector is drawn from a finite
    /// mixture of candidate vectors. `mixtures[i]` belongs to context `i`.
    FixedStochastic {
        mixtures: Vec<Vec<MixtureComponent<F>>>,
    },
}

impl<F: Real> LoggingRule<F> {
    fn is_batched(&self) -> bool {
        matches!(
            self,
            LoggingRule::EpsGreedy { .. } | LoggingRule::ThompsonGaussian { .. }
        )
    }
}

/// A discrete-context ground-truth environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvJson<F>", into = "EnvJson<F>")]
#[serde(bound = "F: Real")]
pub struct SyntheticEnv<F: Real> {
    contexts: Vec<DiscreteContext<F>>,
    /// `arms[context][action]`
    arms: Vec<Vec<ArmDist<F>>>,
    logging: LoggingRule<F>,
}

impl<F: Real> SyntheticEnv<F> {
    pub fn new(
        contexts: Vec<DiscreteContext<F>>,
        arms: Vec<Vec<ArmDist<F>>>,
        logging: LoggingRule<F>,
    ) -> Result<Self> {
        let env = SyntheticEnv {
            contexts,
            arms,
            logging,
        };
        env.validate()?;
        Ok(env)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidEnv(msg));
        if self.contexts.is_empty() {
            return bad("no contexts".into());
        }
        let qsum: F = self.contexts.iter().map(|c| c.probability).sum();
        if (qsum - F::one()).abs() > F::of(1e-9) {
            return bad(format!("context probabilities sum to {qsum}, expected 1"));
        }
        if self.contexts.iter().any(|c| c.probability < F::zero()) {
            return bad("negative context probability".into());
        }
        let dim = self.contexts[0].features.len();
        if self.contexts.iter().any(|c| c.features.len() != dim) {
            return bad("inconsistent feature dimensions".into());
        }
        if self.arms.len() != self.contexts.len() {
            return bad("arm grid does not cover every context".into());
        }
        let m1 = self.arms[0].len();
        if m1 < 2 {
            return bad("environments need at least two actions".into());
        }
        for (i, row) in self.arms.iter().enumerate() {
            if row.len() != m1 {
                return bad(format!("context {i} has {} arms, expected {m1}", row.len()));
            }
            for (a, arm) in row.iter().enumerate() {
                match arm {
                    ArmDist::Bernoulli { mean } => {
                        if *mean < F::zero() || *mean > F::one() {
                            return bad(format!(
                                "Bernoulli mean {mean} outside [0,1] at context {i}, action {a}"
                            ));
                        }
                    }
                    ArmDist::Gaussian { var, .. } => {
                        if *var < F::zero() {
                            return bad(format!(
                                "negative variance at context {i}, action {a}"
                            ));
                        }
                    }
                }
            }
        }
        match &self.logging {
            LoggingRule::Uniform => {}
            LoggingRule::EpsGreedy { eps_per_batch, .. } => {
                if eps_per_batch.is_empty() {
                    return bad("eps-greedy needs at least one batch".into());
                }
                // eps in (0, 1) keeps every action's probability positive
                for e in eps_per_batch {
                    if !(*e > F::zero() && *e < F::one()) {
                        return bad(format!("eps {e} outside (0, 1)"));
                    }
                }
            }
            LoggingRule::ThompsonGaussian {
                batches, num_draws, ..
            } => {
                if *batches < 1 {
                    return bad("thompson-gaussian needs at least one batch".into());
                }
                if *num_draws < 1 {
                    return bad("num_draws must be at least 1".into());
                }
            }
            LoggingRule::FixedStochastic { mixtures } => {
                if mixtures.len() != self.contexts.len() {
                    return bad("one mixture per context required".into());
                }
                for (i, mixture) in mixtures.iter().enumerate() {
                    if mixture.is_empty() {
                        return bad(format!("empty mixture for context {i}"));
                    }
                    let wsum: F = mixture.iter().map(|c| c.weight).sum();
                    if (wsum - F::one()).abs() > F::of(1e-9) {
                        return bad(format!(
                            "mixture weights for context {i} sum to {wsum}"
                        ));
                    }
                    let mut mean = vec![F::zero(); m1];
                    for comp in mixture {
                        if comp.weight < F::zero() {
                            return bad(format!("negative mixture weight at context {i}"));
                        }
                        if comp.probs.len() != m1 {
                            return bad(format!(
                                "candidate vector of length {} at context {i}, expected {m1}",
                                comp.probs.len()
                            ));
                        }
                        let psum: F = comp.probs.iter().copied().sum();
                        if (psum - F::one()).abs() > F::of(1e-9)
                            || comp.probs.iter().any(|p| *p < F::zero())
                        {
                            return bad(format!(
                                "candidate vector at context {i} is not a distribution"
                            ));
                        }
                        for (m, p) in mean.iter_mut().zip(comp.probs.iter()) {
                            *m += comp.weight * *p;
                        }
                    }
                    // Assumption-1 positivity on the mean, not the components
                    if let Some(a) = mean.iter().position(|p| *p <= F::zero()) {
                        return bad(format!(
                            "logging probability of action {a} at context {i} is zero"
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn contexts(&self) -> &[DiscreteContext<F>] {
        &self.contexts
    }

    pub fn logging(&self) -> &LoggingRule<F> {
        &self.logging
    }

    pub fn action_count(&self) -> usize {
        self.arms[0].len()
    }

    pub fn arm(&self, context: usize, action: usize) -> &ArmDist<F> {
        &self.arms[context][action]
    }

    pub fn context_features(&self) -> Vec<Vec<F>> {
        self.contexts.iter().map(|c| c.features.clone()).collect()
    }

    /// Exact conditional-mean reward models, one per action.
    pub fn exact_reward_models(&self) -> Vec<RewardModel<F>> {
        let contexts = self.context_features();
        (0..self.action_count())
            .map(|a| {
                let values = (0..self.contexts.len())
                    .map(|i| self.arms[i][a].mean())
                    .collect();
                RewardModel::from_table(a, contexts.clone(), values)
            })
            .collect()
    }

    /// Exact propensity model for batch-invariant logging rules.
    pub fn true_propensity_model(&self) -> Result<PropensityModel<F>> {
        if self.logging.is_batched() {
            return Err(Error::InvalidEnv(
                "true propensity varies by batch; no single context table exists".into(),
            ));
        }
        let probs: Vec<Vec<F>> = (0..self.contexts.len())
            .map(|i| self.marginal_probs_static(i))
            .collect();
        Ok(PropensityModel::exact_true_from_table(
            self.context_features(),
            &probs,
        ))
    }

    /// Context-conditional mean choice probabilities for the batch-invariant
    /// rules.
    fn marginal_probs_static(&self, context: usize) -> Vec<F> {
        let m1 = self.action_count();
        match &self.logging {
            LoggingRule::Uniform => vec![F::one() / F::of_usize(m1); m1],
            LoggingRule::FixedStochastic { mixtures } => {
                let mut mean = vec![F::zero(); m1];
                for comp in &mixtures[context] {
                    for (m, p) in mean.iter_mut().zip(comp.probs.iter()) {
                        *m += comp.weight * *p;
                    }
                }
                mean
            }
            _ => unreachable!("batched rules handled via logging_marginals"),
        }
    }

    /// Oracle best action per context under the true means.
    pub fn best_action_map(&self) -> Vec<usize> {
        (0..self.contexts.len())
            .map(|i| {
                let mut best = 0;
                let mut best_mean = F::neg_infinity();
                for (a, arm) in self.arms[i].iter().enumerate() {
                    let mu = arm.mean();
                    if mu > best_mean {
                        best_mean = mu;
                        best = a;
                    }
                }
                best
            })
            .collect()
    }

    /// Degenerate oracle policy playing the true best action per context.
    pub fn best_action_oracle_policy(&self) -> PolicySpec<F> {
        let m1 = self.action_count();
        let entries = self
            .best_action_map()
            .into_iter()
            .zip(self.contexts.iter())
            .map(|(a, c)| {
                let mut w = vec![F::zero(); m1];
                w[a] = F::one();
                (c.features.clone(), w)
            })
            .collect();
        PolicySpec::table(entries).expect("degenerate rows are valid")
    }

    /// Exact expected reward of the logging policy itself.
    pub fn logging_policy_value(&self) -> Result<F> {
        let mut acc = F::zero();
        for m in self.logging_marginals()? {
            for (a, &p) in m.probs.iter().enumerate() {
                acc += m.weight * p * self.arms[m.context][a].mean();
            }
        }
        Ok(acc)
    }
}

// ── logging-rule probability vectors ────────────────────────────────────

/// Epsilon-greedy probability vector: the action with the best estimated
/// mean gets `1 - eps`, every other action `eps / m`. Ties break to the
/// lowest index.
pub fn choose_eps_greedy<F: Real>(mu_hat: &[F], eps: F) -> Vec<F> {
    let m1 = mu_hat.len();
    if m1 == 1 {
        return vec![F::one()];
    }
    let best = argmax(mu_hat);
    let other = eps / F::of_usize(m1 - 1);
    (0..m1)
        .map(|a| if a == best { F::one() - eps } else { other })
        .collect()
}

/// Gaussian Thompson-sampling probability vector:
/// `p_a = Pr(a = argmax_a' N(mu_a', sigma2_a'))`.
///
/// With two actions this is the exact normal-CDF closed form; with more it
/// is a Monte Carlo estimate from `num_draws` samples whose coordinates
/// sum to exactly one. Ties in sampled values break to the lowest index.
pub fn choose_thompson_gaussian<F: Real, R: Rng + ?Sized>(
    mu_hat: &[F],
    sigma2_hat: &[F],
    num_draws: usize,
    rng: &mut R,
) -> Vec<F> {
    let m1 = mu_hat.len();
    debug_assert_eq!(sigma2_hat.len(), m1);
    if m1 == 2 {
        let denom2 = sigma2_hat[0] + sigma2_hat[1];
        if denom2 <= F::zero() {
            // degenerate: the higher mean wins, ties to action 0
            return if mu_hat[1] > mu_hat[0] {
                vec![F::zero(), F::one()]
            } else {
                vec![F::one(), F::zero()]
            };
        }
        let p1 = standard_normal_cdf((mu_hat[1] - mu_hat[0]) / denom2.sqrt());
        return vec![F::one() - p1, p1];
    }

    let mut counts = vec![0usize; m1];
    let mut draw = vec![F::zero(); m1];
    for _ in 0..num_draws {
        for a in 0..m1 {
            draw[a] = mu_hat[a] + sigma2_hat[a].sqrt() * F::sample_standard_normal(rng);
        }
        counts[argmax(&draw)] += 1;
    }
    let n = F::of_usize(num_draws);
    let mut probs: Vec<F> = counts.iter().map(|&c| F::of_usize(c) / n).collect();
    // pin the exact unit sum on the most frequent coordinate
    let top = argmax_usize(&counts);
    let rest: F = probs
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != top)
        .map(|(_, p)| *p)
        .sum();
    probs[top] = F::one() - rest;
    probs
}

fn argmax<F: Real>(values: &[F]) -> usize {
    let mut best = 0;
    let mut best_value = F::neg_infinity();
    for (i, &v) in values.iter().enumerate() {
        if v > best_value {
            best_value = v;
            best = i;
        }
    }
    best
}

fn argmax_usize(values: &[usize]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn sample_categorical<F: Real, R: Rng + ?Sized>(rng: &mut R, probs: &[F]) -> usize {
    let u = F::sample_uniform(rng);
    let mut acc = F::zero();
    let mut last_positive = 0usize;
    for (i, &p) in probs.iter().enumerate() {
        if p > F::zero() {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

// ── simulation ──────────────────────────────────────────────────────────

/// Running per-(context, action) reward moments for the batched rules.
struct MomentTracker<F> {
    count: Vec<Vec<usize>>,
    mean: Vec<Vec<F>>,
    m2: Vec<Vec<F>>,
}

impl<F: Real> MomentTracker<F> {
    fn new(contexts: usize, actions: usize) -> Self {
        MomentTracker {
            count: vec![vec![0; actions]; contexts],
            mean: vec![vec![F::zero(); actions]; contexts],
            m2: vec![vec![F::zero(); actions]; contexts],
        }
    }

    fn update(&mut self, context: usize, action: usize, reward: F) {
        let n = self.count[context][action] + 1;
        self.count[context][action] = n;
        let delta = reward - self.mean[context][action];
        self.mean[context][action] += delta / F::of_usize(n);
        let delta2 = reward - self.mean[context][action];
        self.m2[context][action] += delta * delta2;
    }

    /// Estimated means for a context; unobserved arms keep the initial
    /// estimate.
    fn means(&self, context: usize) -> Vec<F> {
        self.count[context]
            .iter()
            .zip(self.mean[context].iter())
            .map(|(&n, &m)| if n == 0 { F::of(INITIAL_MEAN) } else { m })
            .collect()
    }

    /// Estimated (population) variances, floored away from zero.
    fn variances(&self, context: usize) -> Vec<F> {
        self.count[context]
            .iter()
            .zip(self.m2[context].iter())
            .map(|(&n, &m2)| {
                if n == 0 {
                    F::of(INITIAL_VARIANCE)
                } else {
                    (m2 / F::of_usize(n)).max(F::of(THOMPSON_VARIANCE_FLOOR))
                }
            })
            .collect()
    }
}

/// Simulate `t` rounds in `b` batches. Identical `(env, t, b, seed)` inputs
/// produce bit-identical logs.
///
/// Every record stores both the realized probability vector of its round
/// and the context-conditional mean vector (for the frozen batched rules
/// the two coincide, the rule being deterministic given the frozen
/// estimates).
pub fn run_logging<F: Real>(
    env: &SyntheticEnv<F>,
    t: usize,
    b: usize,
    seed: u64,
) -> Result<BanditLog<F>> {
    if b < 1 {
        return Err(Error::InvalidConfig("need at least one batch".into()));
    }
    match env.logging() {
        LoggingRule::EpsGreedy { eps_per_batch, .. } if eps_per_batch.len() != b => {
            return Err(Error::InvalidConfig(format!(
                "eps-greedy rule defines {} batches but {b} were requested",
                eps_per_batch.len()
            )));
        }
        LoggingRule::ThompsonGaussian { batches, .. } if *batches != b => {
            return Err(Error::InvalidConfig(format!(
                "thompson-gaussian rule defines {batches} batches but {b} were requested"
            )));
        }
        _ => {}
    }

    let m1 = env.action_count();
    let n_ctx = env.contexts.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(t);

    let q: Vec<F> = env.contexts.iter().map(|c| c.probability).collect();
    let batch_size = if t == 0 { 1 } else { t.div_ceil(b) };

    let mut tracker = MomentTracker::<F>::new(n_ctx, m1);
    // per-context probability vectors frozen at the current batch's start
    let mut frozen: Vec<Option<Vec<F>>> = vec![None; n_ctx];
    let mut current_batch = 0usize;

    let static_true: Option<Vec<Vec<F>>> = if env.logging.is_batched() {
        None
    } else {
        Some((0..n_ctx).map(|i| env.marginal_probs_static(i)).collect())
    };

    for idx in 0..t {
        let batch_id = idx / batch_size + 1;
        if batch_id != current_batch {
            current_batch = batch_id;
            frozen.iter_mut().for_each(|f| *f = None);
        }

        let ctx = sample_categorical(&mut rng, &q);
        let (realized, true_p): (Vec<F>, Vec<F>) = match &env.logging {
            LoggingRule::Uniform => {
                let p = static_true.as_ref().unwrap()[ctx].clone();
                (p.clone(), p)
            }
            LoggingRule::FixedStochastic { mixtures } => {
                let weights: Vec<F> = mixtures[ctx].iter().map(|c| c.weight).collect();
                let k = sample_categorical(&mut rng, &weights);
                (
                    mixtures[ctx][k].probs.clone(),
                    static_true.as_ref().unwrap()[ctx].clone(),
                )
            }
            LoggingRule::EpsGreedy {
                eps_per_batch,
                adaptive,
            } => {
                let eps = eps_per_batch[batch_id - 1];
                let p = if *adaptive {
                    choose_eps_greedy(&tracker.means(ctx), eps)
                } else {
                    frozen[ctx]
                        .get_or_insert_with(|| choose_eps_greedy(&tracker.means(ctx), eps))
                        .clone()
                };
                (p.clone(), p)
            }
            LoggingRule::ThompsonGaussian {
                num_draws, adaptive, ..
            } => {
                let p = if *adaptive {
                    choose_thompson_gaussian(
                        &tracker.means(ctx),
                        &tracker.variances(ctx),
                        *num_draws,
                        &mut rng,
                    )
                } else if let Some(p) = &frozen[ctx] {
                    p.clone()
                } else {
                    let p = choose_thompson_gaussian(
                        &tracker.means(ctx),
                        &tracker.variances(ctx),
                        *num_draws,
                        &mut rng,
                    );
                    frozen[ctx] = Some(p.clone());
                    p
                };
                (p.clone(), p)
            }
        };

        let action = sample_categorical(&mut rng, &realized);
        let reward = env.arms[ctx][action].sample(&mut rng);
        if env.logging.is_batched() {
            tracker.update(ctx, action, reward);
        }
        records.push(LogRecord {
            context: Context {
                features: env.contexts[ctx].features.clone(),
                batch_id,
            },
            action,
            reward,
            realized_propensity: Some(realized),
            true_propensity: Some(true_p),
        });
    }

    Ok(BanditLog {
        records,
        action_set: ActionSet::new(m1),
        num_batches: b,
    })
}

// ── oracles ─────────────────────────────────────────────────────────────

/// Closed-form ground truth for one (environment, policy) pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct GroundTruth<F: Real> {
    pub true_value: F,
    pub efficiency_bound: F,
    /// Asymptotic variance of the true-score estimator.
    pub tilde_avar: F,
    /// `tilde_avar - efficiency_bound`: the price of using the true score.
    pub gap_part1: F,
    /// Extra variance of the realized-score estimator over the true-score
    /// one; zero unless the realized vectors genuinely fluctuate.
    pub gap_part2: F,
}

impl<F: Real> GroundTruth<F> {
    /// Asymptotic variance of the realized-score estimator.
    pub fn ddot_avar(&self) -> F {
        self.tilde_avar + self.gap_part2
    }
}

/// One cell of the logging policy's context marginal: a context paired
/// with its probability weight and mean choice probabilities. Batched
/// rules contribute one cell per (context, batch); the batch holds
/// initial estimates in batch 1 and the large-sample limits afterwards.
struct Marginal<F> {
    weight: F,
    context: usize,
    probs: Vec<F>,
}

impl<F: Real> SyntheticEnv<F> {
    fn logging_marginals(&self) -> Result<Vec<Marginal<F>>> {
        match &self.logging {
            LoggingRule::Uniform | LoggingRule::FixedStochastic { .. } => Ok((0..self
                .contexts
                .len())
                .map(|i| Marginal {
                    weight: self.contexts[i].probability,
                    context: i,
                    probs: self.marginal_probs_static(i),
                })
                .collect()),
            LoggingRule::EpsGreedy { eps_per_batch, .. } => {
                let b = eps_per_batch.len();
                let wb = F::one() / F::of_usize(b);
                let mut out = Vec::with_capacity(self.contexts.len() * b);
                for (i, ctx) in self.contexts.iter().enumerate() {
                    for (bi, &eps) in eps_per_batch.iter().enumerate() {
                        let mu = self.limit_means(i, bi);
                        out.push(Marginal {
                            weight: ctx.probability * wb,
                            context: i,
                            probs: choose_eps_greedy(&mu, eps),
                        });
                    }
                }
                Ok(out)
            }
            LoggingRule::ThompsonGaussian {
                batches, num_draws, ..
            } => {
                let wb = F::one() / F::of_usize(*batches);
                // fixed stream so the oracle is a pure function
                let mut rng = ChaCha8Rng::seed_from_u64(ORACLE_MC_SEED);
                let mut out = Vec::with_capacity(self.contexts.len() * batches);
                for (i, ctx) in self.contexts.iter().enumerate() {
                    for bi in 0..*batches {
                        let mu = self.limit_means(i, bi);
                        let s2 = self.limit_variances(i, bi);
                        out.push(Marginal {
                            weight: ctx.probability * wb,
                            context: i,
                            probs: choose_thompson_gaussian(&mu, &s2, *num_draws, &mut rng),
                        });
                    }
                }
                Ok(out)
            }
        }
    }

    /// Large-sample estimated means entering batch `batch_index` (0-based):
    /// the initial estimates before any data, the true means afterwards.
    fn limit_means(&self, context: usize, batch_index: usize) -> Vec<F> {
        if batch_index == 0 {
            vec![F::of(INITIAL_MEAN); self.action_count()]
        } else {
            self.arms[context].iter().map(|a| a.mean()).collect()
        }
    }

    fn limit_variances(&self, context: usize, batch_index: usize) -> Vec<F> {
        if batch_index == 0 {
            vec![F::of(INITIAL_VARIANCE); self.action_count()]
        } else {
            self.arms[context]
                .iter()
                .map(|a| a.variance().max(F::of(THOMPSON_VARIANCE_FLOOR)))
                .collect()
        }
    }

    /// Mean of `1 / p_a` over the realized-vector distribution at one
    /// marginal cell; `None` marks an infinite mean (a candidate vector
    /// putting zero mass on the action).
    fn inverse_prob_mean(&self, marginal: &Marginal<F>, action: usize) -> Option<F> {
        match &self.logging {
            LoggingRule::FixedStochastic { mixtures } => {
                let mut acc = F::zero();
                for comp in &mixtures[marginal.context] {
                    if comp.weight == F::zero() {
                        continue;
                    }
                    if comp.probs[action] <= F::zero() {
                        return None;
                    }
                    acc += comp.weight / comp.probs[action];
                }
                Some(acc)
            }
            // remaining rules are degenerate given the (frozen) batch
            _ => Some(marginal.probs[action].recip()),
        }
    }
}

/// Seed for the Monte Carlo step inside the Thompson oracle (only needed
/// beyond two actions, where no closed form exists).
const ORACLE_MC_SEED: u64 = 0x07ac1e;

/// Exact expected reward of the target policy:
/// `sum_x q(x) sum_a mu(a|x) pi(a|x)`.
pub fn true_value<F: Real>(env: &SyntheticEnv<F>, policy: &PolicySpec<F>) -> Result<F> {
    let mut acc = F::zero();
    for (i, ctx) in env.contexts.iter().enumerate() {
        let pi = policy_probabilities(policy, &ctx.features)?;
        for (a, &w) in pi.iter().enumerate() {
            acc += ctx.probability * w * env.arms[i][a].mean();
        }
    }
    Ok(acc)
}

/// Semiparametric efficiency bound:
/// `E[sum_a V[Y(a)|X] pi(a|X)^2 / p0_a(X) + (theta(X) - V)^2]`.
pub fn efficiency_bound<F: Real>(env: &SyntheticEnv<F>, policy: &PolicySpec<F>) -> Result<F> {
    let v = true_value(env, policy)?;
    let mut acc = F::zero();
    for m in env.logging_marginals()? {
        let features = &env.contexts[m.context].features;
        let pi = policy_probabilities(policy, features)?;
        let mut theta = F::zero();
        let mut inner = F::zero();
        for (a, &w) in pi.iter().enumerate() {
            let arm = &env.arms[m.context][a];
            theta += w * arm.mean();
            if w != F::zero() {
                if m.probs[a] <= F::zero() {
                    return Err(Error::BoundUndefined {
                        context: m.context,
                        action: a,
                    });
                }
                inner += arm.variance() * w * w / m.probs[a];
            }
        }
        acc += m.weight * (inner + (theta - v) * (theta - v));
    }
    Ok(acc)
}

/// All closed-form oracle quantities for one (environment, policy) pair.
///
/// `tilde_avar` is computed by its own route (the second moment of the
/// true-score influence term) rather than as `bound + gap1`, so the
/// decomposition identity is a genuine cross-check; it is asserted here to
/// 1e-9 in debug builds and exercised by the acceptance suite.
pub fn variance_gaps<F: Real>(
    env: &SyntheticEnv<F>,
    policy: &PolicySpec<F>,
) -> Result<GroundTruth<F>> {
    let v = true_value(env, policy)?;
    let bound = efficiency_bound(env, policy)?;

    let mut tilde = F::zero();
    let mut gap1 = F::zero();
    let mut gap2 = F::zero();
    for m in env.logging_marginals()? {
        let features = &env.contexts[m.context].features;
        let pi = policy_probabilities(policy, features)?;
        let arms = &env.arms[m.context];

        let mut theta = F::zero();
        for (a, &w) in pi.iter().enumerate() {
            theta += w * arms[a].mean();
        }

        // E[g^2 | cell] = sum_a E[Y(a)^2] pi_a^2 / p0_a - 2 v theta + v^2
        let mut second = F::zero();
        for (a, &w) in pi.iter().enumerate() {
            if w != F::zero() {
                second += arms[a].second_moment() * w * w / m.probs[a];
            }
        }
        tilde += m.weight * (second - F::of(2.0) * v * theta + v * v);

        // gap 1: sum_a p0_a (mu_a pi_a / p0_a - theta)^2, all actions
        for (a, &p0) in m.probs.iter().enumerate() {
            let ratio = if pi[a] == F::zero() {
                F::zero()
            } else {
                arms[a].mean() * pi[a] / p0
            };
            gap1 += m.weight * p0 * (ratio - theta) * (ratio - theta);
        }

        // gap 2: sum_a E[Y(a)^2] pi_a^2 (E[1/p_a] - 1/p0_a)
        for (a, &w) in pi.iter().enumerate() {
            let scale = arms[a].second_moment() * w * w;
            if scale == F::zero() {
                continue;
            }
            match env.inverse_prob_mean(&m, a) {
                Some(inv_mean) => {
                    gap2 += m.weight * scale * (inv_mean - m.probs[a].recip());
                }
                None => {
                    gap2 = F::infinity();
                }
            }
        }
    }

    let truth = GroundTruth {
        true_value: v,
        efficiency_bound: bound,
        tilde_avar: tilde,
        gap_part1: gap1,
        gap_part2: gap2,
    };
    // decomposition identity, 1e-9 in f64 and scaled to the scalar's
    // precision otherwise
    let tol = F::of(1e-9).max(F::epsilon() * F::of(128.0));
    debug_assert!(
        (truth.tilde_avar - (truth.efficiency_bound + truth.gap_part1)).abs()
            <= tol * (F::one() + truth.tilde_avar.abs()),
        "variance decomposition identity violated"
    );
    Ok(truth)
}

// ── serde form (the documented JSON schema) ─────────────────────────────

#[derive(Serialize, Deserialize)]
#[serde(bound = "F: Real")]
struct EnvJson<F: Real> {
    contexts: Vec<DiscreteContext<F>>,
    arms: Vec<ArmJson<F>>,
    logging: LoggingRule<F>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "F: Real")]
struct ArmJson<F: Real> {
    context_index: usize,
    action: usize,
    dist: DistName,
    mean: F,
    #[serde(skip_serializing_if = "Option::is_none")]
    var: Option<F>,
}

#[derive(Serialize, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum DistName {
    Bernoulli,
    Gaussian,
}

impl<F: Real> TryFrom<EnvJson<F>> for SyntheticEnv<F> {
    type Error = Error;

    fn try_from(json: EnvJson<F>) -> Result<Self> {
        let n_ctx = json.contexts.len();
        if n_ctx == 0 {
            return Err(Error::InvalidEnv("no contexts".into()));
        }
        let m1 = json
            .arms
            .iter()
            .map(|a| a.action + 1)
            .max()
            .unwrap_or(0);
        let mut grid: Vec<Vec<Option<ArmDist<F>>>> = vec![vec![None; m1]; n_ctx];
        for arm in &json.arms {
            if arm.context_index >= n_ctx {
                return Err(Error::InvalidEnv(format!(
                    "arm references context {} of {n_ctx}",
                    arm.context_index
                )));
            }
            let slot = &mut grid[arm.context_index][arm.action];
            if slot.is_some() {
                return Err(Error::InvalidEnv(format!(
                    "duplicate arm (context {}, action {})",
                    arm.context_index, arm.action
                )));
            }
            *slot = Some(match arm.dist {
                DistName::Bernoulli => ArmDist::Bernoulli { mean: arm.mean },
                DistName::Gaussian => ArmDist::Gaussian {
                    mean: arm.mean,
                    var: arm.var.ok_or_else(|| {
                        Error::InvalidEnv("gaussian arm without var".into())
                    })?,
                },
            });
        }
        let arms: Vec<Vec<ArmDist<F>>> = grid
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                row.into_iter()
                    .enumerate()
                    .map(|(a, slot)| {
                        slot.ok_or_else(|| {
                            Error::InvalidEnv(format!(
                                "missing arm (context {i}, action {a})"
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        SyntheticEnv::new(json.contexts, arms, json.logging)
    }
}

impl<F: Real> From<SyntheticEnv<F>> for EnvJson<F> {
    fn from(env: SyntheticEnv<F>) -> Self {
        let arms = env
            .arms
            .iter()
            .enumerate()
            .flat_map(|(i, row)| {
                row.iter().enumerate().map(move |(a, arm)| match arm {
                    ArmDist::Bernoulli { mean } => ArmJson {
                        context_index: i,
                        action: a,
                        dist: DistName::Bernoulli,
                        mean: *mean,
                        var: None,
                    },
                    ArmDist::Gaussian { mean, var } => ArmJson {
                        context_index: i,
                        action: a,
                        dist: DistName::Gaussian,
                        mean: *mean,
                        var: Some(*var),
                    },
                })
            })
            .collect();
        EnvJson {
            contexts: env.contexts,
            arms,
            logging: env.logging,
        }
    }
}

// ── shipped environments ────────────────────────────────────────────────

/// Ready-made environments used by the test harness and the examples under
/// `envs/`.
pub mod presets {
    use super::*;

    /// One context, Bernoulli arms with means 0.4 / 0.6, uniform logging.
    pub fn uniform_ab<F: Real>() -> SyntheticEnv<F> {
        SyntheticEnv::new(
            vec![DiscreteContext {
                probability: F::one(),
                features: vec![F::zero()],
            }],
            vec![vec![
                ArmDist::Bernoulli { mean: F::of(0.4) },
                ArmDist::Bernoulli { mean: F::of(0.6) },
            ]],
            LoggingRule::Uniform,
        )
        .expect("valid preset")
    }

    /// Like [`uniform_ab`], but the per-round probability of action 1 is
    /// drawn uniformly from {0.3, 0.7} (mean 0.5), so the realized vectors
    /// genuinely fluctuate around the true score.
    pub fn mixed_ab<F: Real>() -> SyntheticEnv<F> {
        SyntheticEnv::new(
            vec![DiscreteContext {
                probability: F::one(),
                features: vec![F::zero()],
            }],
            vec![vec![
                ArmDist::Bernoulli { mean: F::of(0.4) },
                ArmDist::Bernoulli { mean: F::of(0.6) },
            ]],
            LoggingRule::FixedStochastic {
                mixtures: vec![vec![
                    MixtureComponent {
                        weight: F::of(0.5),
                        probs: vec![F::of(0.7), F::of(0.3)],
                    },
                    MixtureComponent {
                        weight: F::of(0.5),
                        probs: vec![F::of(0.3), F::of(0.7)],
                    },
                ]],
            },
        )
        .expect("valid preset")
    }

    /// Two equally likely contexts with opposite best actions and a
    /// context-dependent logging rule (action 1 with probability 0.7 in
    /// the first context, 0.3 in the second).
    pub fn two_context_ab<F: Real>() -> SyntheticEnv<F> {
        SyntheticEnv::new(
            vec![
                DiscreteContext {
                    probability: F::of(0.5),
                    features: vec![F::zero()],
                },
                DiscreteContext {
                    probability: F::of(0.5),
                    features: vec![F::one()],
                },
            ],
            vec![
                vec![
                    ArmDist::Bernoulli { mean: F::of(0.2) },
                    ArmDist::Bernoulli { mean: F::of(0.8) },
                ],
                vec![
                    ArmDist::Bernoulli { mean: F::of(0.6) },
                    ArmDist::Bernoulli { mean: F::of(0.4) },
                ],
            ],
            LoggingRule::FixedStochastic {
                mixtures: vec![
                    vec![MixtureComponent {
                        weight: F::one(),
                        probs: vec![F::of(0.3), F::of(0.7)],
                    }],
                    vec![MixtureComponent {
                        weight: F::one(),
                        probs: vec![F::of(0.7), F::of(0.3)],
                    }],
                ],
            },
        )
        .expect("valid preset")
    }

    /// One context, two batches of epsilon-greedy logging.
    pub fn eps_greedy_ab<F: Real>() -> SyntheticEnv<F> {
        SyntheticEnv::new(
            vec![DiscreteContext {
                probability: F::one(),
                features: vec![F::zero()],
            }],
            vec![vec![
                ArmDist::Bernoulli { mean: F::of(0.4) },
                ArmDist::Bernoulli { mean: F::of(0.6) },
            ]],
            LoggingRule::EpsGreedy {
                eps_per_batch: vec![F::of(0.5), F::of(0.2)],
                adaptive: false,
            },
        )
        .expect("valid preset")
    }

    /// One context, two batches of Gaussian Thompson sampling on Gaussian
    /// arms.
    pub fn thompson_ab<F: Real>() -> SyntheticEnv<F> {
        SyntheticEnv::new(
            vec![DiscreteContext {
                probability: F::one(),
                features: vec![F::zero()],
            }],
            vec![vec![
                ArmDist::Gaussian {
                    mean: F::of(0.4),
                    var: F::one(),
                },
                ArmDist::Gaussian {
                    mean: F::of(0.6),
                    var: F::one(),
                },
            ]],
            LoggingRule::ThompsonGaussian {
                batches: 2,
                num_draws: 10_000,
                adaptive: false,
            },
        )
        .expect("valid preset")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::validate_log;
    use approx::assert_relative_eq;

    #[test]
    fn eps_greedy_examples() {
        let p = choose_eps_greedy(&[0.4, 0.6], 0.2);
        assert_eq!(p, vec![0.2, 0.8]);
        // tie breaks to the lowest index
        let tie = choose_eps_greedy(&[0.5, 0.5], 0.2);
        assert_eq!(tie, vec![0.8, 0.2]);
        let three = choose_eps_greedy(&[0.1, 0.9, 0.3], 0.3);
        assert_relative_eq!(three[0], 0.15, epsilon = 1e-15);
        assert_relative_eq!(three[1], 0.7, epsilon = 1e-15);
        assert_relative_eq!(three[2], 0.15, epsilon = 1e-15);
    }

    #[test]
    fn thompson_closed_form_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let symmetric = choose_thompson_gaussian(&[0.0, 0.0], &[1.0, 1.0], 1, &mut rng);
        assert_relative_eq!(symmetric[1], 0.5, epsilon = 1e-12);

        let shifted = choose_thompson_gaussian(&[0.0, 1.0], &[1.0, 1.0], 1, &mut rng);
        assert_relative_eq!(shifted[1], 0.760_249_938_906_523_3, epsilon = 1e-9);

        let degenerate = choose_thompson_gaussian(&[0.0, 1.0], &[0.0, 0.0], 1, &mut rng);
        assert_eq!(degenerate, vec![0.0, 1.0]);
        let tied = choose_thompson_gaussian(&[0.3, 0.3], &[0.0, 0.0], 1, &mut rng);
        assert_eq!(tied, vec![1.0, 0.0]);
    }

    #[test]
    fn thompson_monte_carlo_sums_to_one_and_tracks_closed_form() {
        // action 2 is unwinnable, so the draw reduces to the 2-action case
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 40_000usize;
        let p = choose_thompson_gaussian(
            &[0.0, 1.0, -1e9],
            &[1.0, 1.0, 0.0],
            n,
            &mut rng,
        );
        let total: f64 = p.iter().sum();
        assert_eq!(total, 1.0);
        assert_eq!(p[2], 0.0);
        let closed = 0.760_249_938_906_523_3;
        let tol = 3.0 / (n as f64).sqrt();
        assert!((p[1] - closed).abs() < tol, "p1 = {}, tol = {tol}", p[1]);
    }

    #[test]
    fn run_logging_is_deterministic_and_batched() {
        let env = presets::uniform_ab::<f64>();
        let a = run_logging(&env, 100, 4, 42).unwrap();
        let b = run_logging(&env, 100, 4, 42).unwrap();
        assert_eq!(a, b);
        let c = run_logging(&env, 100, 4, 43).unwrap();
        assert_ne!(a, c);

        assert_eq!(a.len(), 100);
        assert!(validate_log(&a).is_empty());
        for (i, r) in a.records.iter().enumerate() {
            assert_eq!(r.context.batch_id, i / 25 + 1);
        }
    }

    #[test]
    fn run_logging_empty() {
        let env = presets::uniform_ab::<f64>();
        let log = run_logging(&env, 0, 3, 1).unwrap();
        assert!(log.is_empty());
        assert!(validate_log(&log).is_empty());
    }

    #[test]
    fn uniform_action_frequency_concentrates() {
        let env = presets::uniform_ab::<f64>();
        let log = run_logging(&env, 10_000, 1, 7).unwrap();
        let freq = log.records.iter().filter(|r| r.action == 1).count() as f64 / 10_000.0;
        assert!((freq - 0.5).abs() < 0.02, "freq = {freq}");
    }

    #[test]
    fn fixed_stochastic_stores_mixture_mean() {
        let env = presets::mixed_ab::<f64>();
        let log = run_logging(&env, 50, 1, 3).unwrap();
        for r in &log.records {
            assert_eq!(r.true_propensity.as_ref().unwrap(), &vec![0.5, 0.5]);
            let realized = r.realized_propensity.as_ref().unwrap();
            assert!(realized == &vec![0.7, 0.3] || realized == &vec![0.3, 0.7]);
        }
    }

    #[test]
    fn empirical_frequencies_converge_to_stored_truth() {
        let env = presets::two_context_ab::<f64>();
        let log = run_logging(&env, 100_000, 1, 11).unwrap();
        for (features, expected) in [
            (vec![0.0], vec![0.3, 0.7]),
            (vec![1.0], vec![0.7, 0.3]),
        ] {
            let rounds: Vec<_> = log
                .records
                .iter()
                .filter(|r| r.context.features == features)
                .collect();
            let freq =
                rounds.iter().filter(|r| r.action == 1).count() as f64 / rounds.len() as f64;
            assert!((freq - expected[1]).abs() < 0.01, "freq = {freq}");
            assert_eq!(rounds[0].true_propensity.as_ref().unwrap(), &expected);
        }
    }

    #[test]
    fn true_value_examples() {
        let env = presets::uniform_ab::<f64>();
        let always1 = PolicySpec::always(1, 2);
        assert_relative_eq!(true_value(&env, &always1).unwrap(), 0.6, epsilon = 1e-12);
        let contrast = PolicySpec::treatment_contrast(1, 0, 2);
        assert_relative_eq!(true_value(&env, &contrast).unwrap(), 0.2, epsilon = 1e-12);

        let two = presets::two_context_ab::<f64>();
        let best = two.best_action_oracle_policy();
        assert_relative_eq!(true_value(&two, &best).unwrap(), 0.7, epsilon = 1e-12);
    }

    #[test]
    fn true_value_uncovered_context_errors() {
        let env = presets::two_context_ab::<f64>();
        let partial = PolicySpec::table(vec![(vec![0.0], vec![0.0, 1.0])]).unwrap();
        assert!(matches!(
            true_value(&env, &partial),
            Err(Error::ContextNotCovered { .. })
        ));
    }

    #[test]
    fn efficiency_bound_examples() {
        let env = presets::uniform_ab::<f64>();
        let always1 = PolicySpec::always(1, 2);
        assert_relative_eq!(
            efficiency_bound(&env, &always1).unwrap(),
            0.48,
            epsilon = 1e-12
        );
        let contrast = PolicySpec::treatment_contrast(1, 0, 2);
        assert_relative_eq!(
            efficiency_bound(&env, &contrast).unwrap(),
            0.96,
            epsilon = 1e-12
        );

        let two = presets::two_context_ab::<f64>();
        let best = two.best_action_oracle_policy();
        assert_relative_eq!(
            efficiency_bound(&two, &best).unwrap(),
            0.295_714_285_714_285_7,
            epsilon = 1e-12
        );
    }

    #[test]
    fn variance_gap_examples() {
        let env = presets::uniform_ab::<f64>();
        let always1 = PolicySpec::always(1, 2);
        let truth = variance_gaps(&env, &always1).unwrap();
        assert_relative_eq!(truth.gap_part1, 0.36, epsilon = 1e-12);
        assert_relative_eq!(truth.tilde_avar, 0.84, epsilon = 1e-12);
        // degenerate realized vectors: no extra price for using them
        assert_relative_eq!(truth.gap_part2, 0.0, epsilon = 1e-12);

        let mixed = presets::mixed_ab::<f64>();
        let truth = variance_gaps(&mixed, &always1).unwrap();
        assert_relative_eq!(
            truth.gap_part2,
            0.228_571_428_571_428_6,
            epsilon = 1e-9
        );
        assert_relative_eq!(truth.ddot_avar(), 0.84 + 0.228_571_428_571_428_6, epsilon = 1e-9);
    }

    #[test]
    fn decomposition_identity_across_presets() {
        let policies = |env: &SyntheticEnv<f64>| {
            vec![
                PolicySpec::always(1, env.action_count()),
                PolicySpec::always(0, env.action_count()),
                PolicySpec::uniform(env.action_count()),
                PolicySpec::treatment_contrast(1, 0, env.action_count()),
                env.best_action_oracle_policy(),
            ]
        };
        for env in [
            presets::uniform_ab::<f64>(),
            presets::mixed_ab(),
            presets::two_context_ab(),
            presets::eps_greedy_ab(),
            presets::thompson_ab(),
        ] {
            for policy in policies(&env) {
                let truth = variance_gaps(&env, &policy).unwrap();
                assert!(truth.efficiency_bound >= 0.0);
                assert!(truth.gap_part1 >= -1e-15);
                assert!(truth.gap_part2 >= -1e-15);
                assert_relative_eq!(
                    truth.tilde_avar,
                    truth.efficiency_bound + truth.gap_part1,
                    epsilon = 1e-9
                );
            }
        }
    }

    #[test]
    fn eps_greedy_marginals_by_hand() {
        // batch 1 ties on the initial estimates (action 0 wins, eps 0.5);
        // batch 2 uses the true means (action 1 wins, eps 0.2)
        let env = presets::eps_greedy_ab::<f64>();
        let ms = env.logging_marginals().unwrap();
        assert_eq!(ms.len(), 2);
        assert_eq!(ms[0].probs, vec![0.5, 0.5]);
        assert_eq!(ms[1].probs, vec![0.2, 0.8]);
        assert_relative_eq!(ms[0].weight, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn batched_rules_produce_valid_logs() {
        for env in [presets::eps_greedy_ab::<f64>(), presets::thompson_ab()] {
            let log = run_logging(&env, 400, 2, 5).unwrap();
            assert!(validate_log(&log).is_empty());
            // frozen rules store the same true vector within (context, batch)
            let b2: Vec<_> = log
                .records
                .iter()
                .filter(|r| r.context.batch_id == 2)
                .collect();
            assert!(!b2.is_empty());
            let first = b2[0].true_propensity.as_ref().unwrap();
            for r in &b2 {
                assert_eq!(r.true_propensity.as_ref().unwrap(), first);
            }
        }
    }

    #[test]
    fn adaptive_variant_runs_and_validates() {
        let env = SyntheticEnv::new(
            presets::eps_greedy_ab::<f64>().contexts().to_vec(),
            vec![vec![
                ArmDist::Bernoulli { mean: 0.4 },
                ArmDist::Bernoulli { mean: 0.6 },
            ]],
            LoggingRule::EpsGreedy {
                eps_per_batch: vec![0.3, 0.3],
                adaptive: true,
            },
        )
        .unwrap();
        let log = run_logging(&env, 200, 2, 9).unwrap();
        assert!(validate_log(&log).is_empty());
    }

    #[test]
    fn bound_undefined_when_support_unreachable() {
        // logging never plays action 1, policy demands it
        let env = SyntheticEnv::new(
            vec![DiscreteContext {
                probability: 1.0,
                features: vec![0.0],
            }],
            vec![vec![
                ArmDist::Bernoulli { mean: 0.4 },
                ArmDist::Bernoulli { mean: 0.6 },
                ArmDist::Bernoulli { mean: 0.5 },
            ]],
            LoggingRule::FixedStochastic {
                mixtures: vec![vec![MixtureComponent {
                    weight: 1.0,
                    probs: vec![0.5, 0.0, 0.5],
                }]],
            },
        );
        // validation already rejects the zero-probability action
        assert!(matches!(env, Err(Error::InvalidEnv(_))));
    }

    #[test]
    fn env_json_round_trip_matches_schema() {
        let env = presets::mixed_ab::<f64>();
        let text = serde_json::to_string_pretty(&env).unwrap();
        assert!(text.contains("\"contexts\""));
        assert!(text.contains("\"probability\""));
        assert!(text.contains("\"context_index\""));
        assert!(text.contains("\"dist\": \"bernoulli\""));
        assert!(text.contains("\"rule\": \"fixed-stochastic\""));
        let back: SyntheticEnv<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, env);
    }

    #[test]
    fn env_json_rejects_missing_arm() {
        let text = r#"{
            "contexts": [{"probability": 1.0, "features": [0.0]}],
            "arms": [{"context_index": 0, "action": 1, "dist": "bernoulli", "mean": 0.5}],
            "logging": {"rule": "uniform"}
        }"#;
        let err = serde_json::from_str::<SyntheticEnv<f64>>(text).unwrap_err();
        assert!(err.to_string().contains("missing arm"));
    }

    #[test]
    fn logging_policy_value_closed_form() {
        let env = presets::two_context_ab::<f64>();
        assert_relative_eq!(env.logging_policy_value().unwrap(), 0.58, epsilon = 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        let env = presets::uniform_ab::<f32>();
        let truth = variance_gaps(&env, &PolicySpec::always(1, 2)).unwrap();
        assert!((truth.efficiency_bound - 0.48).abs() < 1e-5);
        assert!((truth.tilde_avar - 0.84).abs() < 1e-5);
        let log = run_logging(&env, 100, 2, 3).unwrap();
        assert_eq!(log.len(), 100);
        assert!(validate_log(&log).is_empty());
    }

    /// Three Gaussian arms, one context, three batches of Thompson
    /// sampling; the argmax probabilities come from the Monte Carlo path.
    fn three_arm_thompson() -> SyntheticEnv<f64> {
        SyntheticEnv::new(
            vec![DiscreteContext {
                probability: 1.0,
                features: vec![0.0],
            }],
            vec![vec![
                ArmDist::Gaussian { mean: 0.2, var: 1.0 },
                ArmDist::Gaussian { mean: 0.5, var: 1.0 },
                ArmDist::Gaussian { mean: 0.8, var: 1.0 },
            ]],
            LoggingRule::ThompsonGaussian {
                batches: 3,
                num_draws: 4000,
                adaptive: false,
            },
        )
        .unwrap()
    }

    #[test]
    fn three_action_thompson_simulates_and_freezes() {
        let env = three_arm_thompson();
        let log = run_logging(&env, 600, 3, 17).unwrap();
        assert!(validate_log(&log).is_empty());
        // realized equals stored truth (the frozen rule is deterministic
        // within a batch) and every batch keeps a single vector
        for batch in 1..=3 {
            let rounds: Vec<_> = log
                .records
                .iter()
                .filter(|r| r.context.batch_id == batch)
                .collect();
            let first = rounds[0].true_propensity.as_ref().unwrap();
            assert!((first.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for r in &rounds {
                assert_eq!(r.realized_propensity.as_ref().unwrap(), first);
            }
        }
        // determinism holds through the Monte Carlo draws
        assert_eq!(log, run_logging(&env, 600, 3, 17).unwrap());
    }

    #[test]
    fn three_action_oracles_hold() {
        let env = three_arm_thompson();
        for policy in [
            PolicySpec::always(2, 3),
            PolicySpec::uniform(3),
            PolicySpec::treatment_contrast(2, 0, 3),
        ] {
            let truth = variance_gaps(&env, &policy).unwrap();
            assert!(truth.efficiency_bound > 0.0);
            assert_relative_eq!(
                truth.tilde_avar,
                truth.efficiency_bound + truth.gap_part1,
                epsilon = 1e-9
            );
            // frozen batched rules pay no realized-score penalty
            assert_relative_eq!(truth.gap_part2, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn adaptive_thompson_runs_and_validates() {
        let env = SyntheticEnv::new(
            presets::thompson_ab::<f64>().contexts().to_vec(),
            vec![vec![
                ArmDist::Gaussian { mean: 0.4, var: 1.0 },
                ArmDist::Gaussian { mean: 0.6, var: 1.0 },
            ]],
            LoggingRule::ThompsonGaussian {
                batches: 2,
                num_draws: 100,
                adaptive: true,
            },
        )
        .unwrap();
        let log = run_logging(&env, 300, 2, 23).unwrap();
        assert!(validate_log(&log).is_empty());
        assert_eq!(log, run_logging(&env, 300, 2, 23).unwrap());
    }

    /// Independent oracle: enumerate the joint distribution of
    /// (context, candidate vector, action, Bernoulli reward) and average
    /// the squared influence terms outcome by outcome. No shared code with
    /// the closed-form decompositions above.
    mod enumeration_oracle {
        use super::*;

        struct Outcome {
            prob: f64,
            context: usize,
            realized: Vec<f64>,
            action: usize,
            reward: f64,
        }

        fn enumerate(env: &SyntheticEnv<f64>) -> Vec<Outcome> {
            let mut out = Vec::new();
            for (i, ctx) in env.contexts().iter().enumerate() {
                let components: Vec<(f64, Vec<f64>)> = match env.logging() {
                    LoggingRule::Uniform => {
                        let m1 = env.action_count();
                        vec![(1.0, vec![1.0 / m1 as f64; m1])]
                    }
                    LoggingRule::FixedStochastic { mixtures } => mixtures[i]
                        .iter()
                        .map(|c| (c.weight, c.probs.clone()))
                        .collect(),
                    _ => panic!("enumeration oracle covers the static rules only"),
                };
                for (w, realized) in components {
                    for a in 0..env.action_count() {
                        let mean = match env.arm(i, a) {
                            ArmDist::Bernoulli { mean } => *mean,
                            _ => panic!("Bernoulli arms only"),
                        };
                        for (reward, rp) in [(1.0, mean), (0.0, 1.0 - mean)] {
                            out.push(Outcome {
                                prob: ctx.probability * w * realized[a] * rp,
                                context: i,
                                realized: realized.clone(),
                                action: a,
                                reward,
                            });
                        }
                    }
                }
            }
            out
        }

        fn marginal_p0(env: &SyntheticEnv<f64>, context: usize) -> Vec<f64> {
            match env.logging() {
                LoggingRule::Uniform => {
                    let m1 = env.action_count();
                    vec![1.0 / m1 as f64; m1]
                }
                LoggingRule::FixedStochastic { mixtures } => {
                    let m1 = env.action_count();
                    let mut p = vec![0.0; m1];
                    for c in &mixtures[context] {
                        for (acc, v) in p.iter_mut().zip(c.probs.iter()) {
                            *acc += c.weight * *v;
                        }
                    }
                    p
                }
                _ => panic!(),
            }
        }

        fn check(env: &SyntheticEnv<f64>, policy: &PolicySpec<f64>) {
            let outcomes = enumerate(env);
            let total: f64 = outcomes.iter().map(|o| o.prob).sum();
            assert_relative_eq!(total, 1.0, epsilon = 1e-12);

            let v = true_value(env, policy).unwrap();
            let mut e_g2 = 0.0;
            let mut e_psi2 = 0.0;
            let mut e_gdd2 = 0.0;
            for o in &outcomes {
                let features = &env.contexts()[o.context].features;
                let pi = policy_probabilities(policy, features).unwrap();
                let p0 = marginal_p0(env, o.context);
                let theta: f64 = (0..env.action_count())
                    .map(|a| pi[a] * env.arm(o.context, a).mean())
                    .sum();
                let g = o.reward * pi[o.action] / p0[o.action] - v;
                let mu_a = env.arm(o.context, o.action).mean();
                let psi = (o.reward - mu_a) * pi[o.action] / p0[o.action] + theta - v;
                let gdd = o.reward * pi[o.action] / o.realized[o.action] - v;
                e_g2 += o.prob * g * g;
                e_psi2 += o.prob * psi * psi;
                e_gdd2 += o.prob * gdd * gdd;
            }

            let truth = variance_gaps(env, policy).unwrap();
            assert_relative_eq!(truth.tilde_avar, e_g2, epsilon = 1e-10);
            assert_relative_eq!(truth.efficiency_bound, e_psi2, epsilon = 1e-10);
            assert_relative_eq!(truth.ddot_avar(), e_gdd2, epsilon = 1e-10);
        }

        #[test]
        fn closed_forms_match_enumeration() {
            let envs = [
                presets::uniform_ab::<f64>(),
                presets::mixed_ab(),
                presets::two_context_ab(),
            ];
            for env in &envs {
                for policy in [
                    PolicySpec::always(1, 2),
                    PolicySpec::always(0, 2),
                    PolicySpec::uniform(2),
                    PolicySpec::treatment_contrast(1, 0, 2),
                    env.best_action_oracle_policy(),
                ] {
                    check(env, &policy);
                }
            }
        }
    }
}

