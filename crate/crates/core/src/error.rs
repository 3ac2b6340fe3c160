//! Crate-wide error type.
//!
//! Domain failures are enumerated rather than stringly-typed so that callers
//! (and the CLI's machine-readable error reports) can match on the condition.
//! File-format errors carry the path and 1-based line number of the offending
//! row.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Underlying I/O failure while reading or writing a data file.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A row could not be parsed at all (wrong field count, bad header, …).
    #[error("{path}:{line}: malformed row: {message}")]
    MalformedRow {
        path: String,
        line: u64,
        message: String,
    },

    /// A cell that should hold a number held something other than a number or
    /// the empty-string missing marker.
    #[error("{path}:{line}: column '{column}' holds non-numeric value '{value}'")]
    NonNumericCell {
        path: String,
        line: u64,
        column: String,
        value: String,
    },

    /// The same (unit, year) observation appeared twice.
    #[error("duplicate observation for unit '{unit}' in year {year}")]
    DuplicateObservation { unit: String, year: i32 },

    /// The same (postcode, year) income row appeared twice.
    #[error("duplicate income row for postcode '{postcode}' in year {year}")]
    DuplicateIncomeRow { postcode: String, year: i32 },

    /// A panel operation would leave no periods (or none were loaded).
    #[error("panel has no periods")]
    EmptyPanel,

    /// A unit id was referenced that the panel does not contain.
    #[error("unknown unit '{id}'")]
    UnknownUnit { id: String },

    /// A covariate key was requested that neither the panel nor the donor
    /// pool provides.
    #[error("unknown covariate '{key}'")]
    UnknownCovariate { key: String },

    /// An outcome key was requested that the panel does not carry.
    #[error("unknown outcome '{key}'")]
    UnknownOutcome { key: String },

    /// A collapse window contained no non-missing values for a unit.
    #[error("unit '{unit}' has no non-missing values for '{key}' in {start}..={end}")]
    AllMissing {
        unit: String,
        key: String,
        start: i32,
        end: i32,
    },

    /// Latitude/longitude outside [-90, 90] x [-180, 180].
    #[error("unit '{unit}' has out-of-range coordinates ({lat}, {lon})")]
    InvalidCoordinate { unit: String, lat: f64, lon: f64 },

    /// Donor filtering removed every candidate.
    #[error("donor pool is empty after filtering")]
    NoDonors,

    /// The treatment year leaves no pre-treatment periods.
    #[error("no pre-treatment periods before treatment year {treatment_year}")]
    EmptyPrePeriod { treatment_year: i32 },

    /// An outcome cell needed by a fit is missing.
    #[error("unit '{unit}' is missing outcome '{key}' in year {year}")]
    MissingOutcome {
        unit: String,
        key: String,
        year: i32,
    },

    /// A solver input contained NaN or infinity.
    #[error("non-finite value in {what}")]
    NonFiniteInput { what: String },

    /// A least-squares system has at least as many parameters as rows.
    #[error("underdetermined system: {rows} rows for {params} parameters")]
    UnderdeterminedSystem { rows: usize, params: usize },

    /// Pre-treatment fit is too close to exact for the MSPE ratio to be
    /// meaningful (division by ~zero).
    #[error("pre-treatment mspe {mspe:e} for unit '{unit}' is below the zero-fit threshold")]
    ZeroPreFit { unit: String, mspe: f64 },

    /// Too few placebo entries survived to compute a p-value.
    #[error("placebo inference impossible: {reason}")]
    InferenceImpossible { reason: String },

    /// An effect window contains no panel periods.
    #[error("window {start}..={end} contains no periods")]
    EmptyWindow { start: i32, end: i32 },

    /// Leave-one-out asked for more donors than the baseline fit activates.
    #[error(
        "requested {requested} leave-one-out donors but only {available} carry positive weight"
    )]
    TooFewActiveDonors { requested: usize, available: usize },

    /// A configuration or generator specification is internally inconsistent.
    #[error("invalid specification: {message}")]
    InvalidSpec { message: String },
}

impl Error {
    /// Stable machine-readable tag for each condition, used by the CLI error
    /// report and useful for log grepping.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedRow { .. } => "malformed-row",
            Error::NonNumericCell { .. } => "non-numeric-cell",
            Error::DuplicateObservation { .. } => "duplicate-observation",
            Error::DuplicateIncomeRow { .. } => "duplicate-income-row",
            Error::EmptyPanel => "empty-panel",
            Error::UnknownUnit { .. } => "unknown-unit",
            Error::UnknownCovariate { .. } => "unknown-covariate",
            Error::UnknownOutcome { .. } => "unknown-outcome",
            Error::AllMissing { .. } => "all-missing",
            Error::InvalidCoordinate { .. } => "invalid-coordinate",
            Error::NoDonors => "no-donors",
            Error::EmptyPrePeriod { .. } => "empty-pre-period",
            Error::MissingOutcome { .. } => "missing-outcome",
            Error::NonFiniteInput { .. } => "non-finite-input",
            Error::UnderdeterminedSystem { .. } => "underdetermined-system",
            Error::ZeroPreFit { .. } => "zero-pre-fit",
            Error::InferenceImpossible { .. } => "inference-impossible",
            Error::EmptyWindow { .. } => "empty-window",
            Error::TooFewActiveDonors { .. } => "too-few-active-donors",
            Error::InvalidSpec { .. } => "invalid-spec",
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
