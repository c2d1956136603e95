use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: invalid label value `{value}` (expected -1, 0 or 1)")]
    InvalidLabel {
        path: PathBuf,
        line: usize,
        value: String,
    },

    #[error("{path}:{line}: ragged feature row, expected {expected} features, found {found}")]
    RaggedFeatures {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("bag `{id}` appears only in the {present_in} file")]
    BagMismatch {
        id: String,
        present_in: &'static str,
    },

    #[error("bag `{0}` has no instances")]
    EmptyBag(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("index out of range: bag {bag}, class {class}")]
    IndexOutOfRange { bag: usize, class: usize },

    #[error("pair (bag {bag}, class {class}) is already labeled")]
    AlreadyLabeled { bag: usize, class: usize },

    #[error("no unlabeled bag-class pair left to query")]
    EmptyPool,

    #[error("enumeration needs {needed} states, budget is {budget}")]
    BudgetExceeded { needed: u128, budget: u64 },

    #[error("query budget {queries} exceeds the {available} queries available")]
    QueryBudget { queries: usize, available: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("objective became non-finite at epoch {0}")]
    Diverged(usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for bad input or configuration, 2 for failures
    /// during the computation itself.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::InvalidLabel { .. }
            | Error::RaggedFeatures { .. }
            | Error::BagMismatch { .. }
            | Error::EmptyBag(_)
            | Error::DimensionMismatch { .. }
            | Error::QueryBudget { .. }
            | Error::Config(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
