use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid age {0}: ages start at 1")]
    InvalidAge(u32),
    #[error("unmapped nationality {0:?}")]
    UnmappedNationality(String),
    #[error("unknown region class {0:?}")]
    UnknownRegion(String),
    #[error("duplicate utterance id {0:?}")]
    DuplicateKey(String),
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),
    #[error("insufficient data: need at least {needed} values, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("energy decay never reaches -35 dB")]
    InsufficientDecay,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing template slot {0:?}")]
    MissingSlot(&'static str),
    #[error("trial {trial_id} is not eligible for a reasoning target: {reason}")]
    IneligibleTrial { trial_id: String, reason: String },
    #[error("attribute {0} is not comparable for this pair")]
    NotComparable(&'static str),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used in the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidAge(_) => "invalid_age",
            Error::UnmappedNationality(_) => "unmapped_nationality",
            Error::UnknownRegion(_) => "unknown_region",
            Error::DuplicateKey(_) => "duplicate_key",
            Error::Row { .. } => "row_error",
            Error::InvalidWaveform(_) => "invalid_waveform",
            Error::DegenerateSignal(_) => "degenerate_signal",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::InsufficientDecay => "insufficient_decay",
            Error::Config(_) => "configuration",
            Error::MissingSlot(_) => "missing_slot",
            Error::IneligibleTrial { .. } => "ineligible_trial",
            Error::NotComparable(_) => "not_comparable",
            Error::EmptyInput(_) => "empty_input",
            Error::Parse(_) => "parse",
            Error::Io { .. } => "io",
            Error::Wav { .. } => "wav",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
