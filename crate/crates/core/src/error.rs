use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// What went wrong with one row or object of a trial metadata file.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetadataIssue {
    #[error("duplicate trial_id {0:?}")]
    DuplicateTrialId(String),
    #[error("attended stimulus {0:?} is also listed as unattended")]
    AttendedAmongUnattended(String),
    #[error("unattended stimulus list is empty")]
    EmptyUnattended,
    #[error("unattended stimulus {0:?} listed more than once")]
    DuplicateUnattended(String),
    #[error("invalid stimulus id {0:?}")]
    InvalidStimulusId(String),
    #[error("malformed: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid stimulus id {0:?}: ids must be non-empty and must not contain '|'")]
    InvalidStimulusId(String),
    #[error("a stimulus cannot compete with itself ({0})")]
    InvalidPair(String),
    #[error("metadata record {record}, field `{field}`: {issue}")]
    Metadata {
        /// 1-based line number for CSV, 1-based object index for JSON.
        record: usize,
        field: String,
        issue: MetadataIssue,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no non-empty subset attains the {0} target")]
    NoFeasibleSubset(&'static str),

    #[error("trial {0:?} has more than one competing stimulus; the stimulus pair is undefined (use LOEO)")]
    PairUndefined(String),
    #[error("at least 3 folds are required, got {0}")]
    NeedThreeFolds(usize),
    #[error("only {keys} distinct grouping keys for {k} folds")]
    InsufficientKeys { keys: usize, k: usize },
    #[error("trial {0:?} maps to a key absent from every fold")]
    PlanMismatch(String),
    #[error("unknown trial {0:?}")]
    UnknownTrial(String),

    #[error("series has zero variance")]
    ConstantSeries,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("series too short for correlation (length {0})")]
    SeriesTooShort(usize),
    #[error("no full evaluation window fits in {samples} samples (window {window})")]
    NoFullWindow { samples: usize, window: usize },
    #[error("at least one competing stimulus is required")]
    NoCompetitors,
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("need at least 5 non-zero paired differences, got {0}")]
    TooFewPairs(usize),
    #[error("p-value {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("comparison count {m} is smaller than the number of p-values {n}")]
    ComparisonCount { m: usize, n: usize },

    #[error("normal equations are singular at lambda = {0}; use a positive ridge penalty")]
    SingularSystem(f64),
    #[error("inconsistent shapes: {0}")]
    InconsistentShapes(String),
    #[error("training diverged (non-finite loss) at epoch {0}")]
    Diverged(usize),
    #[error("expected {expected} channels, got {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("input of {len} samples is too short; need more than {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("missing envelope for stimulus {0:?}")]
    MissingEnvelope(String),
    #[error("training partition is empty; nothing to memorize")]
    EmptyStore,
    #[error("stored envelope {0:?} belongs to a held-out stimulus pair")]
    LeakedEnvelope(String),

    #[error("length must be positive")]
    ZeroLength,
    #[error("balanced design needs an even number of repeats per pair, got {0}")]
    InfeasibleBalance(usize),

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("schema version {found} is not supported (expected {expected})")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("inconsistent results file: {0}")]
    InconsistentResults(String),
    #[error("signal file {path}: {reason}")]
    Signal { path: PathBuf, reason: String },
    #[error("partition (t={t}, v={v}): {source}")]
    Partition {
        t: usize,
        v: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether this error (or the error it wraps) came from model fitting
    /// rather than from invalid inputs.
    pub fn is_training_failure(&self) -> bool {
        match self {
            Error::SingularSystem(_) | Error::Diverged(_) => true,
            Error::Partition { source, .. } => source.is_training_failure(),
            _ => false,
        }
    }
}
