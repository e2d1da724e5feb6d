use std::path::PathBuf;

use thiserror::Error;

/// Every failure the engine can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("value at index {index} is not strictly positive ({value})")]
    NonPositiveValue { index: usize, value: f64 },
    #[error("value at index {index} is not finite")]
    NonFiniteValue { index: usize },
    #[error("series too short: need at least {needed} observations, got {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("week {week} appears in both the positive and the negative COVID week sets")]
    OverlappingWeekSets { week: String },
    #[error("length mismatch: {what} has {got} values, expected {expected}")]
    LengthMismatch { what: String, expected: usize, got: usize },
    #[error("series are not aligned: {0}")]
    Misaligned(String),
    #[error("flag value {value} at index {index} is outside {{-1, 0, 1}}")]
    BadFlagValue { index: usize, value: i64 },
    #[error("invalid parameter: {0}")]
    BadParameter(String),

    #[error("optimizer did not converge after all restarts")]
    NonConvergence,
    #[error("degenerate exogenous regressor: {0}")]
    DegenerateExog(String),
    #[error("parameters violate stationarity or invertibility: {0}")]
    NonStationaryParams(String),
    #[error("future exogenous values missing: {0}")]
    MissingFutureExog(String),
    #[error("horizon step {step} outside 1..={horizon}")]
    HorizonOutOfRange { step: usize, horizon: usize },
    #[error("quantile level {0} outside (0, 1)")]
    TauOutOfRange(f64),
    #[error("no candidate order converged")]
    NoConvergedCandidate,
    #[error("AICc undefined for n = {n}, k = {k}")]
    DegenerateSampleSize { n: usize, k: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("division by zero: value at index {index} is zero")]
    DivisionByZeroValue { index: usize },
    #[error("regime {regime} collapsed (responsibility mass {mass:.3e})")]
    DegenerateRegime { regime: usize, mass: f64 },

    #[error("index {index} out of range")]
    IndexOutOfRange { index: usize },

    #[error("design matrix is rank deficient ({0})")]
    RankDeficientDesign(String),

    #[error("actual value at index {index} is zero; MAPE undefined")]
    ZeroActual { index: usize },
    #[error("year-ago value at index {index} is zero")]
    ZeroLagValue { index: usize },
    #[error("backtest plan needs {needed} weeks but the series has {got}")]
    PlanTooLarge { needed: usize, got: usize },

    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("bad hyperparameter: {0}")]
    BadHyperparameter(String),
    #[error("unknown term `{0}`")]
    UnknownTerm(String),
    #[error("lambda {0} outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("need {needed} seed terms with embeddings, found {found}")]
    InsufficientSeeds { needed: usize, found: usize },

    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: missing week {week} (row {line})")]
    Gap { path: String, line: usize, week: String },
    #[error("{path}: line {line}: {date} is not a Monday")]
    NonMondayDate { path: String, line: usize, date: String },
    #[error("no complete calendar year in the data")]
    IncompleteYear,

    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{stage}: {source}")]
    Stage { stage: &'static str, source: Box<Error> },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Stage { source, .. } => source.class(),
            Config(_) | BadParameter(_) | BadHyperparameter(_) | LambdaOutOfRange(_)
            | TauOutOfRange(_) | HorizonOutOfRange { .. } | PlanTooLarge { .. } => ErrorClass::Usage,
            NonConvergence
            | DegenerateExog(_)
            | NonStationaryParams(_)
            | NoConvergedCandidate
            | DegenerateSampleSize { .. }
            | Numerical(_)
            | DegenerateRegime { .. }
            | RankDeficientDesign(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numerical => 3,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage { stage, source: Box::new(self) }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io { path: path.into(), source }
    }
}
