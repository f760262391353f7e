//! First-step estimation: propensity-score models, per-action reward
//! models, basis expansions, and propensity clipping.

use std::io::Read as IoRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_in_place;
use crate::log::{BanditLog, ContextKey};
use crate::scalar::Real;

/// Default clipping floor applied to estimated propensities.
pub const DEFAULT_CLIP_FLOOR: f64 = 0.01;
/// Default Newton iteration cap for the logit fits.
pub const DEFAULT_MAX_ITER: usize = 200;
/// Default convergence tolerance on the gradient max-norm.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Coefficient norm beyond which a logit fit is declared separated.
const SEPARATION_NORM: f64 = 1e3;

// ── basis expansions ────────────────────────────────────────────────────

/// Basis functions evaluated on the context feature vector.
///
/// The batch number is deliberately not a basis input; models that need it
/// can carry it as an ordinary feature coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
#[serde(bound = "F: Real")]
pub enum BasisSpec<F: Real> {
    /// A single constant column.
    InterceptOnly,
    /// One indicator column per distinct context, in first-appearance order.
    /// Saturated (exactly nonparametric) on discrete context spaces.
    OneHotDiscrete { contexts: Vec<Vec<F>> },
    /// Intercept plus per-coordinate powers `x_i, x_i^2, ..., x_i^degree`.
    Polynomial { degree: usize },
}

impl<F: Real> BasisSpec<F> {
    /// One-hot basis over the distinct contexts of a log.
    pub fn one_hot_from_log(log: &BanditLog<F>) -> Self {
        BasisSpec::OneHotDiscrete {
            contexts: log.distinct_contexts(),
        }
    }

    /// One-hot basis over an explicit context list.
    pub fn one_hot(contexts: Vec<Vec<F>>) -> Self {
        BasisSpec::OneHotDiscrete { contexts }
    }

    pub fn dimension(&self, feature_len: usize) -> usize {
        match self {
            BasisSpec::InterceptOnly => 1,
            BasisSpec::OneHotDiscrete { contexts } => contexts.len(),
            BasisSpec::Polynomial { degree } => 1 + feature_len * degree,
        }
    }

    /// Index of the constant column, if the basis has one. Ridge penalties
    /// skip this column.
    pub fn intercept_column(&self) -> Option<usize> {
        match self {
            BasisSpec::InterceptOnly | BasisSpec::Polynomial { .. } => Some(0),
            BasisSpec::OneHotDiscrete { .. } => None,
        }
    }

    pub fn eval(&self, features: &[F]) -> Result<Vec<F>> {
        match self {
            BasisSpec::InterceptOnly => Ok(vec![F::one()]),
            BasisSpec::OneHotDiscrete { contexts } => {
                let key = ContextKey::of(features);
                let mut row = vec![F::zero(); contexts.len()];
                let hit = contexts
                    .iter()
                    .position(|c| ContextKey::of(c) == key)
                    .ok_or_else(|| Error::ContextNotInBasis {
                        context: format!("{features:?}"),
                    })?;
                row[hit] = F::one();
                Ok(row)
            }
            BasisSpec::Polynomial { degree } => {
                let mut row = Vec::with_capacity(1 + features.len() * degree);
                row.push(F::one());
                for &x in features {
                    let mut pow = F::one();
                    for _ in 0..*degree {
                        pow *= x;
                        row.push(pow);
                    }
                }
                Ok(row)
            }
        }
    }
}

// ── propensity models ───────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropensityFamily {
    SieveLs,
    SieveLogit,
    RidgeLogistic,
    ExternalImport,
    ExactTrue,
}

/// A fitted map from context to a probability vector over actions.
///
/// For the linear families `coefficients[a]` is the per-action coefficient
/// vector over the basis; for `external-import` it holds one probability
/// row per logged round instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct PropensityModel<F: Real> {
    pub family: PropensityFamily,
    pub basis: BasisSpec<F>,
    pub clip_floor: F,
    pub coefficients: Vec<Vec<F>>,
}

impl<F: Real> PropensityModel<F> {
    /// Replace the clipping floor (builder style).
    pub fn with_clip_floor(mut self, floor: F) -> Self {
        self.clip_floor = floor;
        self
    }

    pub fn action_count(&self) -> usize {
        match self.family {
            PropensityFamily::ExternalImport => {
                self.coefficients.first().map(|r| r.len()).unwrap_or(0)
            }
            _ => self.coefficients.len(),
        }
    }

    /// Predicted propensity vector for one round, clipping applied.
    ///
    /// `round` is the record index; only the `external-import` family uses
    /// it, the fitted families depend on the features alone.
    pub fn predict(&self, round: usize, features: &[F]) -> Result<Vec<F>> {
        Ok(self.predict_detailed(round, features)?.0)
    }

    /// As [`predict`](Self::predict), also reporting which coordinates were
    /// moved by clipping.
    pub fn predict_detailed(&self, round: usize, features: &[F]) -> Result<(Vec<F>, Vec<bool>)> {
        match self.family {
            PropensityFamily::SieveLs | PropensityFamily::ExactTrue => {
                let q = self.basis.eval(features)?;
                let raw: Vec<F> = self.coefficients.iter().map(|c| dot(c, &q)).collect();
                // LS is not range-respecting: clamp into [floor, 1].
                let mut clipped = vec![false; raw.len()];
                let out: Vec<F> = raw
                    .iter()
                    .zip(clipped.iter_mut())
                    .map(|(&v, flag)| {
                        let c = v.max(self.clip_floor).min(F::one());
                        *flag = c != v;
                        c
                    })
                    .collect();
                Ok((out, clipped))
            }
            PropensityFamily::SieveLogit | PropensityFamily::RidgeLogistic => {
                let q = self.basis.eval(features)?;
                let logits: Vec<F> = self.coefficients.iter().map(|c| dot(c, &q)).collect();
                let raw = softmax(&logits);
                Ok(apply_floor(raw, self.clip_floor))
            }
            PropensityFamily::ExternalImport => {
                let rows = self.coefficients.len();
                let row = self.coefficients.get(round).ok_or(Error::ImportMisaligned {
                    rows,
                    records: round + 1,
                })?;
                Ok(apply_floor(row.clone(), self.clip_floor))
            }
        }
    }

    /// Mean negative log-likelihood of the chosen actions on a log.
    pub fn mean_nll(&self, log: &BanditLog<F>) -> Result<F> {
        let mut acc = F::zero();
        for (i, r) in log.records.iter().enumerate() {
            let p = self.predict(i, &r.context.features)?;
            acc -= p[r.action].ln();
        }
        Ok(acc / F::of_usize(log.len().max(1)))
    }

    /// Mean squared error of the one-hot action indicators on a log.
    pub fn mean_squared_error(&self, log: &BanditLog<F>) -> Result<F> {
        let mut acc = F::zero();
        for (i, r) in log.records.iter().enumerate() {
            let p = self.predict(i, &r.context.features)?;
            for (a, &pa) in p.iter().enumerate() {
                let d = if a == r.action { F::one() } else { F::zero() };
                acc += (d - pa) * (d - pa);
            }
        }
        Ok(acc / F::of_usize(log.len().max(1)))
    }

    /// Exact-truth model read off a log's stored true propensities.
    ///
    /// Requires the true propensity to be constant within each discrete
    /// context; batch-varying logging rules do not satisfy that.
    pub fn exact_true_from_log(log: &BanditLog<F>) -> Result<Self> {
        let contexts = log.distinct_contexts();
        let mut per_context: Vec<Option<Vec<F>>> = vec![None; contexts.len()];
        for (i, r) in log.records.iter().enumerate() {
            let p = r
                .true_propensity
                .as_ref()
                .ok_or(Error::MissingTruePropensity { record: i })?;
            let key = ContextKey::of(&r.context.features);
            let slot = contexts
                .iter()
                .position(|c| ContextKey::of(c) == key)
                .expect("context came from the same log");
            match &per_context[slot] {
                None => per_context[slot] = Some(p.clone()),
                Some(seen) => {
                    let same = seen
                        .iter()
                        .zip(p.iter())
                        .all(|(a, b)| (*a - *b).abs() <= F::of(1e-12));
                    if !same {
                        return Err(Error::InvalidLog(format!(
                            "true propensity varies within context {:?}; \
                             an exact-true model needs a batch-invariant logging rule",
                            r.context.features
                        )));
                    }
                }
            }
        }
        let m1 = log.action_set.count;
        let mut coefficients = vec![vec![F::zero(); contexts.len()]; m1];
        for (j, p) in per_context.iter().enumerate() {
            let p = p.as_ref().expect("every distinct context has a record");
            for a in 0..m1 {
                coefficients[a][j] = p[a];
            }
        }
        Ok(PropensityModel {
            family: PropensityFamily::ExactTrue,
            basis: BasisSpec::one_hot(contexts),
            clip_floor: F::zero(),
            coefficients,
        })
    }

    /// Exact model over an explicit context table.
    pub fn exact_true_from_table(contexts: Vec<Vec<F>>, probs: &[Vec<F>]) -> Self {
        let m1 = probs.first().map(|p| p.len()).unwrap_or(0);
        let mut coefficients = vec![vec![F::zero(); contexts.len()]; m1];
        for (j, p) in probs.iter().enumerate() {
            for a in 0..m1 {
                coefficients[a][j] = p[a];
            }
        }
        PropensityModel {
            family: PropensityFamily::ExactTrue,
            basis: BasisSpec::one_hot(contexts),
            clip_floor: F::zero(),
            coefficients,
        }
    }

    /// Load per-round probability rows from a `round,p_0..p_m` CSV.
    pub fn from_import_csv<R: IoRead>(reader: R, clip_floor: F) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        let names: Vec<&str> = header.iter().collect();
        let p_cols: Vec<usize> = (0..names.len())
            .filter(|i| {
                names[*i]
                    .strip_prefix("p_")
                    .is_some_and(|s| s.parse::<usize>().is_ok())
            })
            .collect();
        if p_cols.is_empty() {
            return Err(Error::Parse("no p_* columns in import file".into()));
        }
        let mut rows = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let mut p = Vec::with_capacity(p_cols.len());
            for &c in &p_cols {
                p.push(row[c].trim().parse::<F>().map_err(|e| {
                    Error::Parse(format!("import row {}, column {}: {e}", i + 1, names[c]))
                })?);
            }
            rows.push(p);
        }
        Ok(PropensityModel {
            family: PropensityFamily::ExternalImport,
            basis: BasisSpec::InterceptOnly,
            clip_floor,
            coefficients: rows,
        })
    }
}

fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b.iter()).map(|(x, y)| *x * *y).sum()
}

fn softmax<F: Real>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|z| (*z - max).exp()).collect();
    let total: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn apply_floor<F: Real>(p: Vec<F>, floor: F) -> (Vec<F>, Vec<bool>) {
    let mut flags = vec![false; p.len()];
    let out = p
        .into_iter()
        .zip(flags.iter_mut())
        .map(|(v, flag)| {
            if v < floor {
                *flag = true;
                floor
            } else {
                v
            }
        })
        .collect();
    (out, flags)
}

/// Raise every coordinate to at least `floor`, without renormalizing.
///
/// Only the chosen-action coordinate ever enters an IPW weight, so
/// renormalizing would perturb the untouched coordinates for no benefit.
pub fn clip_propensity<F: Real>(p: &[F], floor: F) -> Vec<F> {
    p.iter().map(|v| v.max(floor)).collect()
}

// ── sieve least squares ─────────────────────────────────────────────────

fn design_rows<F: Real>(log: &BanditLog<F>, basis: &BasisSpec<F>) -> Result<Vec<Vec<F>>> {
    log.records
        .iter()
        .map(|r| basis.eval(&r.context.features))
        .collect()
}

fn check_dimension<F: Real>(log: &BanditLog<F>, basis: &BasisSpec<F>) -> Result<usize> {
    let feature_len = log
        .records
        .first()
        .map(|r| r.context.features.len())
        .unwrap_or(0);
    let k = basis.dimension(feature_len);
    if log.is_empty() || k > log.len() {
        return Err(Error::BasisTooLarge {
            dim: k,
            records: log.len(),
        });
    }
    Ok(k)
}

/// Per-action least-squares regression of the action indicator on the
/// basis. Predictions are clamped into `[clip_floor, 1]` at predict time.
pub fn fit_sieve_ls<F: Real>(log: &BanditLog<F>, basis: BasisSpec<F>) -> Result<PropensityModel<F>> {
    let k = check_dimension(log, &basis)?;
    let rows = design_rows(log, &basis)?;
    let m1 = log.action_set.count;

    // shared normal matrix Q'Q
    let mut qtq = vec![F::zero(); k * k];
    for q in &rows {
        for i in 0..k {
            for j in 0..k {
                qtq[i * k + j] += q[i] * q[j];
            }
        }
    }

    let mut coefficients = Vec::with_capacity(m1);
    for a in 0..m1 {
        let mut rhs = vec![F::zero(); k];
        for (q, r) in rows.iter().zip(log.records.iter()) {
            if r.action == a {
                for i in 0..k {
                    rhs[i] += q[i];
                }
            }
        }
        let mut mat = qtq.clone();
        solve_in_place(&mut mat, &mut rhs, k)?;
        coefficients.push(rhs);
    }

    Ok(PropensityModel {
        family: PropensityFamily::SieveLs,
        basis,
        clip_floor: F::of(DEFAULT_CLIP_FLOOR),
        coefficients,
    })
}

// ── multinomial logit (shared Newton core) ──────────────────────────────

/// Class-probability targets per row. One-hot for propensity fits; a
/// fractional two-class split for logistic reward regressions.
struct LogitData<'a, F> {
    rows: &'a [Vec<F>],
    /// `weights[t][a]`, each row summing to one.
    weights: &'a [Vec<F>],
}

struct LogitOptions<F> {
    penalty: F,
    intercept_column: Option<usize>,
    max_iter: usize,
    tol: F,
}

/// Maximize the mean multinomial log-likelihood minus `penalty/T` times the
/// squared coefficient norm (intercept column exempt) by damped Newton with
/// step-halving, falling back to gradient ascent when the Newton system is
/// singular. Class 0 is the base category with coefficients pinned at zero.
fn fit_multinomial_logit<F: Real>(
    data: &LogitData<'_, F>,
    classes: usize,
    k: usize,
    opts: &LogitOptions<F>,
) -> Result<Vec<Vec<F>>> {
    let t = data.rows.len();
    let tf = F::of_usize(t);
    let m = classes - 1; // free classes
    let n = m * k;
    let mut theta = vec![F::zero(); n];

    // a gradient below the scalar's resolution is as converged as it gets
    let tol = opts.tol.max(F::epsilon());

    let penalized = |j: usize| opts.intercept_column != Some(j);
    let pen_scale = F::of(2.0) * opts.penalty / tf;

    let probs_for = |theta: &[F], q: &[F]| -> Vec<F> {
        let mut logits = Vec::with_capacity(classes);
        logits.push(F::zero());
        for a in 0..m {
            logits.push(dot(&theta[a * k..(a + 1) * k], q));
        }
        softmax(&logits)
    };

    // compensated summation: the line search compares objective values
    // whose true difference can sit at machine precision, so naive
    // accumulation noise (which grows with T) would drown it out
    let objective = |theta: &[F]| -> F {
        let mut ll = F::zero();
        let mut comp = F::zero();
        for (q, w) in data.rows.iter().zip(data.weights.iter()) {
            let p = probs_for(theta, q);
            let mut term = F::zero();
            for a in 0..classes {
                if w[a] != F::zero() {
                    term += w[a] * p[a].ln();
                }
            }
            let y = term - comp;
            let next = ll + y;
            comp = (next - ll) - y;
            ll = next;
        }
        let mut pen = F::zero();
        for a in 0..m {
            for j in 0..k {
                if penalized(j) {
                    let c = theta[a * k + j];
                    pen += c * c;
                }
            }
        }
        ll / tf - opts.penalty * pen / tf
    };

    let mut obj = objective(&theta);
    let mut last_grad_norm = F::infinity();
    for iter in 0..opts.max_iter {
        // gradient and curvature at the current point
        let mut grad = vec![F::zero(); n];
        let mut neg_h = vec![F::zero(); n * n];
        for (q, w) in data.rows.iter().zip(data.weights.iter()) {
            let p = probs_for(&theta, q);
            for a in 0..m {
                let resid = w[a + 1] - p[a + 1];
                for j in 0..k {
                    grad[a * k + j] += resid * q[j];
                }
                for b in 0..m {
                    let delta = if a == b { F::one() } else { F::zero() };
                    let curv = p[a + 1] * (delta - p[b + 1]);
                    if curv == F::zero() {
                        continue;
                    }
                    for j in 0..k {
                        let row = a * k + j;
                        for l in 0..k {
                            neg_h[row * n + b * k + l] += curv * q[j] * q[l];
                        }
                    }
                }
            }
        }
        let mut grad_norm = F::zero();
        for a in 0..m {
            for j in 0..k {
                let idx = a * k + j;
                grad[idx] /= tf;
                if penalized(j) {
                    grad[idx] -= pen_scale * theta[idx];
                    neg_h[idx * n + idx] += F::of(2.0) * opts.penalty;
                }
                grad_norm = grad_norm.max(grad[idx].abs());
            }
        }
        for v in neg_h.iter_mut() {
            *v /= tf;
        }

        last_grad_norm = grad_norm;
        if grad_norm < tol {
            return Ok(unstack(&theta, classes, k));
        }

        let norm: F = theta.iter().map(|c| *c * *c).sum::<F>().sqrt();
        if norm > F::of(SEPARATION_NORM) {
            return Err(Error::PerfectSeparation {
                norm: norm.to_f64().unwrap_or(f64::NAN),
            });
        }

        // Newton direction, gradient ascent as fallback
        let mut step = grad.clone();
        let mut mat = neg_h;
        if solve_in_place(&mut mat, &mut step, n).is_err() {
            step = grad.clone();
        }

        // step-halving line search; near the optimum the objective change
        // can sit below float resolution, so allow a tiny slack
        let slack = F::epsilon() * (obj.abs() + F::one()) * F::of(16.0);
        let mut eta = F::one();
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<F> = theta
                .iter()
                .zip(step.iter())
                .map(|(t, s)| *t + eta * *s)
                .collect();
            let trial_obj = objective(&trial);
            if trial_obj >= obj - slack {
                theta = trial;
                obj = trial_obj;
                accepted = true;
                break;
            }
            eta /= F::of(2.0);
        }
        if !accepted {
            return Err(Error::NonConvergence {
                iterations: iter + 1,
                grad_norm: grad_norm.to_f64().unwrap_or(f64::NAN),
                last_coefficients: theta.iter().map(|c| c.to_f64().unwrap_or(f64::NAN)).collect(),
            });
        }
    }

    // out of iterations; report the gradient norm at the last evaluated iterate
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        grad_norm: last_grad_norm.to_f64().unwrap_or(f64::NAN),
        last_coefficients: theta.iter().map(|c| c.to_f64().unwrap_or(f64::NAN)).collect(),
    })
}

fn unstack<F: Real>(theta: &[F], classes: usize, k: usize) -> Vec<Vec<F>> {
    let mut out = vec![vec![F::zero(); k]];
    for a in 0..classes - 1 {
        out.push(theta[a * k..(a + 1) * k].to_vec());
    }
    out
}

fn fit_logit_propensity<F: Real>(
    log: &BanditLog<F>,
    basis: BasisSpec<F>,
    penalty: F,
    max_iter: usize,
    tol: F,
    family: PropensityFamily,
) -> Result<PropensityModel<F>> {
    let k = check_dimension(log, &basis)?;
    let m1 = log.action_set.count;
    if penalty == F::zero() {
        // an action with no records at all sends its coefficients to
        // infinity; the likelihood has no maximizer
        let mut seen = vec![false; m1];
        for r in &log.records {
            seen[r.action] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::PerfectSeparation { norm: f64::INFINITY });
        }
    }
    let rows = design_rows(log, &basis)?;
    let weights: Vec<Vec<F>> = log
        .records
        .iter()
        .map(|r| {
            let mut w = vec![F::zero(); m1];
            w[r.action] = F::one();
            w
        })
        .collect();
    let coefficients = fit_multinomial_logit(
        &LogitData {
            rows: &rows,
            weights: &weights,
        },
        m1,
        k,
        &LogitOptions {
            penalty,
            intercept_column: basis.intercept_column(),
            max_iter,
            tol,
        },
    )?;
    Ok(PropensityModel {
        family,
        basis,
        clip_floor: F::of(DEFAULT_CLIP_FLOOR),
        coefficients,
    })
}

/// Multinomial logit maximum likelihood over the basis, action 0 as the
/// base category.
pub fn fit_sieve_logit<F: Real>(
    log: &BanditLog<F>,
    basis: BasisSpec<F>,
    max_iter: usize,
    tol: F,
) -> Result<PropensityModel<F>> {
    fit_logit_propensity(
        log,
        basis,
        F::zero(),
        max_iter,
        tol,
        PropensityFamily::SieveLogit,
    )
}

/// Multinomial logit with an L2 penalty `lambda * sum_a |coef_a|^2` on the
/// unnormalized log-likelihood; the intercept column is unpenalized. With
/// `lambda = 0` this is exactly [`fit_sieve_logit`].
pub fn fit_ridge_logistic_propensity<F: Real>(
    log: &BanditLog<F>,
    basis: BasisSpec<F>,
    lambda: F,
) -> Result<PropensityModel<F>> {
    fit_logit_propensity(
        log,
        basis,
        lambda,
        DEFAULT_MAX_ITER,
        F::of(DEFAULT_TOL),
        PropensityFamily::RidgeLogistic,
    )
}

// ── reward models ───────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkKind {
    /// Sigmoid link for rewards in [0, 1].
    Logistic,
    /// Plain linear regression for real-valued rewards.
    Identity,
}

/// A fitted conditional-mean reward model for one action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct RewardModel<F: Real> {
    pub action: usize,
    pub basis: BasisSpec<F>,
    pub link: LinkKind,
    pub lambda: F,
    pub coefficients: Vec<F>,
    /// Set when a richer basis was requested but the fit fell back to
    /// intercept-only (e.g. an action unseen in some context).
    #[serde(default)]
    pub intercept_fallback: bool,
}

impl<F: Real> RewardModel<F> {
    pub fn predict(&self, features: &[F]) -> Result<F> {
        let q = self.basis.eval(features)?;
        let eta = dot(&self.coefficients, &q);
        Ok(match self.link {
            LinkKind::Identity => eta,
            LinkKind::Logistic => F::one() / (F::one() + (-eta).exp()),
        })
    }

    /// Exact lookup-table model: identity link over a one-hot basis.
    pub fn from_table(action: usize, contexts: Vec<Vec<F>>, values: Vec<F>) -> Self {
        RewardModel {
            action,
            basis: BasisSpec::one_hot(contexts),
            link: LinkKind::Identity,
            lambda: F::zero(),
            coefficients: values,
            intercept_fallback: false,
        }
    }
}

/// Ridge regression of the reward on the basis, using only the rounds in
/// which `action` was chosen. The penalty applies to the unnormalized
/// objective and skips the intercept column.
pub fn fit_reward_model<F: Real>(
    log: &BanditLog<F>,
    action: usize,
    basis: BasisSpec<F>,
    lambda: F,
    link: LinkKind,
) -> Result<RewardModel<F>> {
    let sub: Vec<&crate::log::LogRecord<F>> = log
        .records
        .iter()
        .filter(|r| r.action == action)
        .collect();
    if sub.is_empty() {
        return Err(Error::NoObservations { action });
    }
    let feature_len = sub[0].context.features.len();
    let k = basis.dimension(feature_len);

    let rows: Vec<Vec<F>> = sub
        .iter()
        .map(|r| basis.eval(&r.context.features))
        .collect::<Result<_>>()?;

    let coefficients = match link {
        LinkKind::Identity => {
            // (Q'Q + lambda * mask) beta = Q'y
            let mut qtq = vec![F::zero(); k * k];
            let mut rhs = vec![F::zero(); k];
            for (q, r) in rows.iter().zip(sub.iter()) {
                for i in 0..k {
                    for j in 0..k {
                        qtq[i * k + j] += q[i] * q[j];
                    }
                    rhs[i] += q[i] * r.reward;
                }
            }
            for j in 0..k {
                if basis.intercept_column() != Some(j) {
                    qtq[j * k + j] += lambda;
                }
            }
            solve_in_place(&mut qtq, &mut rhs, k)?;
            rhs
        }
        LinkKind::Logistic => {
            if sub
                .iter()
                .any(|r| r.reward < F::zero() || r.reward > F::one())
            {
                return Err(Error::InvalidConfig(
                    "logistic link requires rewards in [0, 1]; use the identity link".into(),
                ));
            }
            let weights: Vec<Vec<F>> = sub
                .iter()
                .map(|r| vec![F::one() - r.reward, r.reward])
                .collect();
            let coefs = fit_multinomial_logit(
                &LogitData {
                    rows: &rows,
                    weights: &weights,
                },
                2,
                k,
                &LogitOptions {
                    penalty: lambda,
                    intercept_column: basis.intercept_column(),
                    max_iter: DEFAULT_MAX_ITER,
                    tol: F::of(DEFAULT_TOL),
                },
            )?;
            coefs.into_iter().nth(1).unwrap()
        }
    };

    Ok(RewardModel {
        action,
        basis,
        link,
        lambda,
        coefficients,
        intercept_fallback: false,
    })
}

/// Fit one reward model per action with a shared configuration.
pub fn fit_reward_models<F: Real>(
    log: &BanditLog<F>,
    basis: &BasisSpec<F>,
    lambda: F,
    link: LinkKind,
) -> Result<Vec<RewardModel<F>>> {
    (0..log.action_set.count)
        .map(|a| fit_reward_model(log, a, basis.clone(), lambda, link))
        .collect()
}

/// As [`fit_reward_models`], but an action whose design is singular under
/// the requested basis falls back to an intercept-only fit, flagged on the
/// returned model.
pub fn fit_reward_models_with_fallback<F: Real>(
    log: &BanditLog<F>,
    basis: &BasisSpec<F>,
    lambda: F,
    link: LinkKind,
) -> Result<Vec<RewardModel<F>>> {
    (0..log.action_set.count)
        .map(|a| {
            match fit_reward_model(log, a, basis.clone(), lambda, link) {
                Ok(m) => Ok(m),
                Err(Error::SingularBasis { .. }) => {
                    let mut m =
                        fit_reward_model(log, a, BasisSpec::InterceptOnly, lambda, link)?;
                    m.intercept_fallback = true;
                    Ok(m)
                }
                Err(e) => Err(e),
            }
        })
        .collect()
}
