//! Crate-wide error type.
//!
//! Errors are split into two broad classes so the CLI can map them to exit
//! codes: input/validation problems (exit code 2) and numerical failures
//! (exit code 3).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    // ── input / validation problems ─────────────────────────────────────
    #[error("context {context} not covered by the policy")]
    ContextNotCovered { context: String },

    #[error("context {context} not covered by the one-hot basis")]
    ContextNotInBasis { context: String },

    #[error("self-normalized estimators require policy weights that sum to 1 at every context")]
    PolicyNotNormalized,

    #[error("record {record}: true propensity missing")]
    MissingTruePropensity { record: usize },

    #[error("record {record}: realized propensity missing")]
    MissingRealizedPropensity { record: usize },

    #[error("record {record}: realized propensity is zero at the chosen action {action}")]
    ZeroRealizedPropensity { record: usize, action: usize },

    #[error("record {record}: true propensity is zero at the chosen action {action}")]
    ZeroTruePropensity { record: usize, action: usize },

    #[error("no observations for action {action}")]
    NoObservations { action: usize },

    #[error("basis dimension {dim} exceeds the {records} available records")]
    BasisTooLarge { dim: usize, records: usize },

    #[error("the {0} partition is empty")]
    EmptyPartition(&'static str),

    #[error("invalid log: {0}")]
    InvalidLog(String),

    #[error("invalid environment: {0}")]
    InvalidEnv(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    // ── numerical failures ──────────────────────────────────────────────
    #[error("singular basis: column {column} is linearly dependent given the data")]
    SingularBasis { column: usize },

    #[error(
        "optimizer did not converge after {iterations} iterations \
         (gradient max-norm {grad_norm:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        /// Flattened last iterate, for post-mortems.
        last_coefficients: Vec<f64>,
    },

    #[error(
        "perfect separation detected (coefficient norm {norm:.3e}); \
         use ridge-logistic with a positive penalty"
    )]
    PerfectSeparation { norm: f64 },

    #[error("record {record}: estimated propensity is zero at the chosen action {action}")]
    ZeroEstimatedPropensity { record: usize, action: usize },

    #[error("propensity is zero at an action with nonzero policy weight")]
    ZeroPropensityAtSupport,

    #[error(
        "efficiency bound undefined: logging probability is zero at context {context}, \
         action {action}, where the policy weight is nonzero"
    )]
    BoundUndefined { context: usize, action: usize },

    #[error("imported score table has {rows} rows but the log needs at least {records}")]
    ImportMisaligned { rows: usize, records: usize },

    #[error("replication {index}: {source}")]
    Replication {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Exit code for the CLI: 2 for validation errors, 3 for numerical ones.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::SingularBasis { .. }
            | Error::NonConvergence { .. }
            | Error::PerfectSeparation { .. }
            | Error::ZeroEstimatedPropensity { .. }
            | Error::ZeroPropensityAtSupport
            | Error::BoundUndefined { .. }
            | Error::ImportMisaligned { .. } => 3,
            Error::Replication { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
