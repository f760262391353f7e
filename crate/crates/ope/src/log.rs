//! Logged bandit data: contexts, rounds, whole logs, validation, and the
//! CSV interchange format.
//!
//! One CSV row per round:
//!
//! ```text
//! round,batch,action,reward,x_0..x_{k-1}[,p_real_0..p_real_m][,p_true_0..p_true_m]
//! ```
//!
//! The header row is mandatory; the optional propensity column groups are
//! present all-or-nothing.

use std::io::{Read as IoRead, Write as IoWrite};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Tolerance for "this vector is a probability distribution" checks.
pub const PROBABILITY_SUM_TOL: f64 = 1e-9;

/// Covariates observed when an action was picked. The batch number is part
/// of the context but kept in its own field; `features` holds the rest.
#[derive(Clone, Debug, PartialEq)]
pub struct Context<F> {
    pub features: Vec<F>,
    /// 1-based batch number.
    pub batch_id: usize,
}

/// Hashable identity of a discrete context (features only, not the batch).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ContextKey(Vec<u64>);

impl ContextKey {
    pub fn of<F: Real>(features: &[F]) -> Self {
        ContextKey(features.iter().map(|v| v.key_bits()).collect())
    }
}

/// The finite action set.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSet {
    /// Number of actions, m + 1.
    pub count: usize,
    /// Optional display names; purely cosmetic.
    pub labels: Option<Vec<String>>,
}

impl ActionSet {
    pub fn new(count: usize) -> Self {
        ActionSet {
            count,
            labels: None,
        }
    }
}

/// One logged round.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord<F> {
    pub context: Context<F>,
    /// Chosen action index in `0..=m` (the one-hot choice vector, implicit).
    pub action: usize,
    pub reward: F,
    /// The probability vector the logging system actually drew this round,
    /// if recorded. May be degenerate.
    pub realized_propensity: Option<Vec<F>>,
    /// The context-conditional mean choice probability, if known. Absent
    /// propensities are represented as `None`, never as zeros.
    pub true_propensity: Option<Vec<F>>,
}

/// An ordered collection of logged rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct BanditLog<F> {
    pub records: Vec<LogRecord<F>>,
    pub action_set: ActionSet,
    pub num_batches: usize,
}

impl<F: Real> BanditLog<F> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct context feature vectors in order of first appearance.
    pub fn distinct_contexts(&self) -> Vec<Vec<F>> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for r in &self.records {
            let key = ContextKey::of(&r.context.features);
            if seen.insert(key) {
                out.push(r.context.features.clone());
            }
        }
        out
    }

    /// A new log holding only the records whose batch id satisfies `keep`.
    pub fn filter_batches(&self, keep: impl Fn(usize) -> bool) -> BanditLog<F> {
        BanditLog {
            records: self
                .records
                .iter()
                .filter(|r| keep(r.context.batch_id))
                .cloned()
                .collect(),
            action_set: self.action_set.clone(),
            num_batches: self.num_batches,
        }
    }
}

// ── validation ──────────────────────────────────────────────────────────

/// A single rule violation found by [`validate_log`]. Violations are data,
/// not failures: callers decide what to do with them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    /// Offending record index, when the rule is per-record.
    pub record: Option<usize>,
    pub rule: &'static str,
    pub detail: String,
}

fn violation(record: Option<usize>, rule: &'static str, detail: String) -> Violation {
    Violation {
        record,
        rule,
        detail,
    }
}

fn check_propensity<F: Real>(
    out: &mut Vec<Violation>,
    idx: usize,
    name: &str,
    p: &[F],
    count: usize,
) {
    if p.len() != count {
        out.push(violation(
            Some(idx),
            "propensity length",
            format!("{name} has {} entries, expected {count}", p.len()),
        ));
        return;
    }
    if p.iter().any(|v| *v < F::zero()) {
        out.push(violation(
            Some(idx),
            "propensity nonnegative",
            format!("{name} has a negative coordinate"),
        ));
    }
    let sum: F = p.iter().copied().sum();
    if (sum - F::one()).abs() > F::of(PROBABILITY_SUM_TOL) {
        out.push(violation(
            Some(idx),
            "propensity sum",
            format!("{name} sums to {sum}, expected 1"),
        ));
    }
}

/// Check every log invariant and report all violations found.
///
/// Pure and idempotent: the same log always yields the same report. An
/// empty report means the log is well-formed.
pub fn validate_log<F: Real>(log: &BanditLog<F>) -> Vec<Violation> {
    let mut out = Vec::new();
    let dim = log.records.first().map(|r| r.context.features.len());
    let mut prev_batch = 0usize;

    for (idx, r) in log.records.iter().enumerate() {
        if Some(r.context.features.len()) != dim {
            out.push(violation(
                Some(idx),
                "feature dimensionality",
                format!(
                    "record has {} features, expected {}",
                    r.context.features.len(),
                    dim.unwrap_or(0)
                ),
            ));
        }
        if r.context.batch_id < 1 || r.context.batch_id > log.num_batches {
            out.push(violation(
                Some(idx),
                "batch id range",
                format!(
                    "batch id {} outside 1..={}",
                    r.context.batch_id, log.num_batches
                ),
            ));
        }
        if r.context.batch_id < prev_batch {
            out.push(violation(
                Some(idx),
                "batch order not nondecreasing",
                format!(
                    "batch id {} follows batch id {}",
                    r.context.batch_id, prev_batch
                ),
            ));
        }
        prev_batch = r.context.batch_id;

        if r.action >= log.action_set.count {
            out.push(violation(
                Some(idx),
                "action range",
                format!(
                    "action {} outside 0..{}",
                    r.action, log.action_set.count
                ),
            ));
        }
        if let Some(p) = &r.realized_propensity {
            check_propensity(&mut out, idx, "realized propensity", p, log.action_set.count);
        }
        if let Some(p) = &r.true_propensity {
            check_propensity(&mut out, idx, "true propensity", p, log.action_set.count);
        }
    }
    out
}

// ── CSV interchange ─────────────────────────────────────────────────────

/// Write a log in the CSV interchange schema.
///
/// Propensity column groups are emitted only when *every* record carries
/// the corresponding vector; a mix is rejected.
pub fn write_csv<F: Real, W: IoWrite>(log: &BanditLog<F>, writer: W) -> Result<()> {
    let n_real = log
        .records
        .iter()
        .filter(|r| r.realized_propensity.is_some())
        .count();
    let n_true = log
        .records
        .iter()
        .filter(|r| r.true_propensity.is_some())
        .count();
    let with_real = n_real == log.len() && !log.is_empty();
    let with_true = n_true == log.len() && !log.is_empty();
    if !with_real && n_real > 0 {
        return Err(Error::InvalidLog(
            "realized propensities present on some records but not all".into(),
        ));
    }
    if !with_true && n_true > 0 {
        return Err(Error::InvalidLog(
            "true propensities present on some records but not all".into(),
        ));
    }

    let k = log
        .records
        .first()
        .map(|r| r.context.features.len())
        .unwrap_or(0);
    let m1 = log.action_set.count;

    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "round".to_string(),
        "batch".to_string(),
        "action".to_string(),
        "reward".to_string(),
    ];
    header.extend((0..k).map(|i| format!("x_{i}")));
    if with_real {
        header.extend((0..m1).map(|a| format!("p_real_{a}")));
    }
    if with_true {
        header.extend((0..m1).map(|a| format!("p_true_{a}")));
    }
    w.write_record(&header)?;

    for (idx, r) in log.records.iter().enumerate() {
        let mut row = vec![
            (idx + 1).to_string(),
            r.context.batch_id.to_string(),
            r.action.to_string(),
            format!("{}", r.reward),
        ];
        row.extend(r.context.features.iter().map(|v| format!("{v}")));
        if with_real {
            let p = r.realized_propensity.as_ref().unwrap();
            row.extend(p.iter().map(|v| format!("{v}")));
        }
        if with_true {
            let p = r.true_propensity.as_ref().unwrap();
            row.extend(p.iter().map(|v| format!("{v}")));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_field<F: Real>(s: &str, row: usize, col: &str) -> Result<F> {
    s.trim()
        .parse::<F>()
        .map_err(|e| Error::Parse(format!("row {row}, column {col}: {e}")))
}

fn parse_usize(s: &str, row: usize, col: &str) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|e| Error::Parse(format!("row {row}, column {col}: {e}")))
}

/// Read a log from the CSV interchange schema.
///
/// The action count is taken from the propensity column groups when
/// present, otherwise from the largest action index seen.
pub fn read_csv<F: Real, R: IoRead>(reader: R) -> Result<BanditLog<F>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();

    let find = |name: &str| -> Result<usize> {
        names
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::Parse(format!("missing column {name}")))
    };
    let col_batch = find("batch")?;
    let col_action = find("action")?;
    let col_reward = find("reward")?;

    let contiguous_group = |prefix: &str| -> Result<Option<(usize, usize)>> {
        let cols: Vec<usize> = (0..names.len())
            .filter(|i| {
                names[*i]
                    .strip_prefix(prefix)
                    .is_some_and(|s| s.parse::<usize>().is_ok())
            })
            .collect();
        if cols.is_empty() {
            return Ok(None);
        }
        let start = cols[0];
        for (offset, c) in cols.iter().enumerate() {
            let suffix: usize = names[*c].strip_prefix(prefix).unwrap().parse().unwrap();
            if *c != start + offset || suffix != offset {
                return Err(Error::Parse(format!(
                    "{prefix}* columns must be contiguous and numbered from 0"
                )));
            }
        }
        Ok(Some((start, cols.len())))
    };

    let x_group = contiguous_group("x_")?;
    let real_group = contiguous_group("p_real_")?;
    let true_group = contiguous_group("p_true_")?;
    if let (Some((_, a)), Some((_, b))) = (real_group, true_group) {
        if a != b {
            return Err(Error::Parse(
                "p_real_* and p_true_* groups have different widths".into(),
            ));
        }
    }

    let mut records: Vec<LogRecord<F>> = Vec::new();
    let mut max_action = 0usize;
    let mut max_batch = 0usize;
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let rownum = i + 1;
        let batch_id = parse_usize(&row[col_batch], rownum, "batch")?;
        let action = parse_usize(&row[col_action], rownum, "action")?;
        let reward = parse_field::<F>(&row[col_reward], rownum, "reward")?;
        let features = match x_group {
            Some((start, k)) => (0..k)
                .map(|j| parse_field::<F>(&row[start + j], rownum, names[start + j]))
                .collect::<Result<Vec<F>>>()?,
            None => Vec::new(),
        };
        let read_group = |group: Option<(usize, usize)>| -> Result<Option<Vec<F>>> {
            match group {
                Some((start, w)) => Ok(Some(
                    (0..w)
                        .map(|j| parse_field::<F>(&row[start + j], rownum, names[start + j]))
                        .collect::<Result<Vec<F>>>()?,
                )),
                None => Ok(None),
            }
        };
        let realized_propensity = read_group(real_group)?;
        let true_propensity = read_group(true_group)?;
        max_action = max_action.max(action);
        max_batch = max_batch.max(batch_id);
        records.push(LogRecord {
            context: Context {
                features,
                batch_id,
            },
            action,
            reward,
            realized_propensity,
            true_propensity,
        });
    }

    let count = real_group
        .or(true_group)
        .map(|(_, w)| w)
        .unwrap_or(max_action + 1)
        .max(max_action + 1)
        .max(2);
    Ok(BanditLog {
        records,
        action_set: ActionSet::new(count),
        num_batches: max_batch,
    })
}
