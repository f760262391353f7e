//! Counterfactual target policies.
//!
//! A policy assigns each context a vector of signed action weights summing
//! to at most one. Ordinary stochastic and degenerate policies use weights
//! in [0, 1] summing to one; treatment-effect contrasts use signed weights
//! (+1 on the treatment, -1 on the control) summing to zero.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log::ContextKey;
use crate::nuisance::RewardModel;
use crate::scalar::Real;

/// Weight-sum tolerance shared by the policy invariants.
const WEIGHT_TOL: f64 = 1e-9;

/// A target policy: per-context signed action weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyJson<F>", into = "PolicyJson<F>")]
#[serde(bound = "F: Real")]
pub enum PolicySpec<F: Real> {
    /// The same weight vector at every context.
    Fixed(Vec<F>),
    /// A lookup table keyed by the discrete context feature vector.
    Table(TablePolicy<F>),
    /// Chooses the action with the highest predicted reward at each
    /// context; always degenerate.
    ArgmaxReward(Vec<RewardModel<F>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TablePolicy<F: Real> {
    entries: Vec<(Vec<F>, Vec<F>)>,
    index: HashMap<ContextKey, usize>,
}

impl<F: Real> TablePolicy<F> {
    pub fn entries(&self) -> &[(Vec<F>, Vec<F>)] {
        &self.entries
    }
}

fn check_weights<F: Real>(weights: &[F], what: &str) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidPolicy(format!("{what}: empty weight vector")));
    }
    let sum: F = weights.iter().copied().sum();
    if sum > F::one() + F::of(WEIGHT_TOL) {
        return Err(Error::InvalidPolicy(format!(
            "{what}: weights sum to {sum}, above the allowed total of 1"
        )));
    }
    Ok(())
}

impl<F: Real> PolicySpec<F> {
    /// Any fixed signed weight vector.
    pub fn fixed(weights: Vec<F>) -> Result<Self> {
        check_weights(&weights, "fixed policy")?;
        Ok(PolicySpec::Fixed(weights))
    }

    /// Degenerate policy that always plays `action`.
    pub fn always(action: usize, action_count: usize) -> Self {
        let mut w = vec![F::zero(); action_count];
        w[action] = F::one();
        PolicySpec::Fixed(w)
    }

    /// Uniform policy over all actions.
    pub fn uniform(action_count: usize) -> Self {
        let w = F::one() / F::of_usize(action_count);
        PolicySpec::Fixed(vec![w; action_count])
    }

    /// Treatment-effect contrast: +1 on `treatment`, -1 on `control`.
    pub fn treatment_contrast(treatment: usize, control: usize, action_count: usize) -> Self {
        let mut w = vec![F::zero(); action_count];
        w[treatment] = F::one();
        w[control] = -F::one();
        PolicySpec::Fixed(w)
    }

    /// Per-context table policy.
    pub fn table(entries: Vec<(Vec<F>, Vec<F>)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (features, weights)) in entries.iter().enumerate() {
            check_weights(weights, &format!("table row {i}"))?;
            if index.insert(ContextKey::of(features), i).is_some() {
                return Err(Error::InvalidPolicy(format!(
                    "duplicate table context {features:?}"
                )));
            }
        }
        Ok(PolicySpec::Table(TablePolicy { entries, index }))
    }

    /// Argmax-of-reward-model policy. Models must cover actions `0..=m` in
    /// order.
    pub fn argmax_reward(models: Vec<RewardModel<F>>) -> Result<Self> {
        for (i, m) in models.iter().enumerate() {
            if m.action != i {
                return Err(Error::InvalidPolicy(format!(
                    "reward model at position {i} is for action {}",
                    m.action
                )));
            }
        }
        if models.len() < 2 {
            return Err(Error::InvalidPolicy(
                "argmax policy needs at least two actions".into(),
            ));
        }
        Ok(PolicySpec::ArgmaxReward(models))
    }

    pub fn action_count(&self) -> usize {
        match self {
            PolicySpec::Fixed(w) => w.len(),
            PolicySpec::Table(t) => t.entries.first().map(|(_, w)| w.len()).unwrap_or(0),
            PolicySpec::ArgmaxReward(models) => models.len(),
        }
    }

    /// True iff the weights sum to one at every covered context, as the
    /// self-normalized estimators require.
    pub fn normalized(&self) -> bool {
        let tol = F::of(WEIGHT_TOL);
        let is_norm = |w: &[F]| ((w.iter().copied().sum::<F>()) - F::one()).abs() <= tol;
        match self {
            PolicySpec::Fixed(w) => is_norm(w),
            PolicySpec::Table(t) => t.entries.iter().all(|(_, w)| is_norm(w)),
            PolicySpec::ArgmaxReward(_) => true,
        }
    }
}

/// Evaluate the policy's signed weight vector at a context.
pub fn policy_probabilities<F: Real>(policy: &PolicySpec<F>, features: &[F]) -> Result<Vec<F>> {
    match policy {
        PolicySpec::Fixed(w) => Ok(w.clone()),
        PolicySpec::Table(t) => {
            let idx = t
                .index
                .get(&ContextKey::of(features))
                .ok_or_else(|| Error::ContextNotCovered {
                    context: format!("{features:?}"),
                })?;
            Ok(t.entries[*idx].1.clone())
        }
        PolicySpec::ArgmaxReward(models) => {
            let mut best = 0usize;
            let mut best_value = F::neg_infinity();
            for (a, model) in models.iter().enumerate() {
                let v = model.predict(features)?;
                if v > best_value {
                    best_value = v;
                    best = a;
                }
            }
            let mut w = vec![F::zero(); models.len()];
            w[best] = F::one();
            Ok(w)
        }
    }
}

// ── serde form ──────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[serde(bound = "F: Real")]
enum PolicyJson<F: Real> {
    Fixed {
        weights: Vec<F>,
    },
    Table {
        entries: Vec<TableEntryJson<F>>,
    },
    ArgmaxReward {
        models: Vec<RewardModel<F>>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "F: Real")]
struct TableEntryJson<F: Real> {
    features: Vec<F>,
    weights: Vec<F>,
}

impl<F: Real> TryFrom<PolicyJson<F>> for PolicySpec<F> {
    type Error = Error;

    fn try_from(json: PolicyJson<F>) -> Result<Self> {
        match json {
            PolicyJson::Fixed { weights } => PolicySpec::fixed(weights),
            PolicyJson::Table { entries } => PolicySpec::table(
                entries
                    .into_iter()
                    .map(|e| (e.features, e.weights))
                    .collect(),
            ),
            PolicyJson::ArgmaxReward { models } => PolicySpec::argmax_reward(models),
        }
    }
}

impl<F: Real> From<PolicySpec<F>> for PolicyJson<F> {
    fn from(policy: PolicySpec<F>) -> Self {
        match policy {
            PolicySpec::Fixed(weights) => PolicyJson::Fixed { weights },
            PolicySpec::Table(t) => PolicyJson::Table {
                entries: t
                    .entries
                    .into_iter()
                    .map(|(features, weights)| TableEntryJson { features, weights })
                    .collect(),
            },
            PolicySpec::ArgmaxReward(models) => PolicyJson::ArgmaxReward { models },
        }
    }
}
