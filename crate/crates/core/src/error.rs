use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The price process produced a non-finite or non-positive value.
    #[error("market generation failed at step {step}: {reason}")]
    Generation { step: usize, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    /// A trade would leave the price at or below zero. The trade is not applied.
    #[error("trade rejected for {ticker}: resulting price {price} is not positive")]
    TradeRejected { ticker: String, price: f64 },

    #[error("infeasible target move {fraction} for {ticker}: cap is {cap}")]
    Infeasible { ticker: String, fraction: f64, cap: f64 },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("training error: {0}")]
    Training(String),

    /// Shape or precondition mismatch between a model and its input.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("attack error: {0}")]
    Attack(String),

    #[error("plan error: estimated cost {estimated:.2} exceeds budget {budget:.2} (shortfall {shortfall:.2})")]
    PlanOverBudget {
        estimated: f64,
        budget: f64,
        shortfall: f64,
    },

    #[error("validation error at `{key}`: {reason}")]
    Validation { key: String, reason: String },

    #[error("missing artifact {path}: run stage `{stage}` first")]
    Dependency { stage: String, path: PathBuf },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn validation(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the `bta` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation { .. } | Error::Config(_) => 2,
            Error::Dependency { .. } => 3,
            _ => 4,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
