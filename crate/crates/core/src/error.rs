use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("attribute `{attribute}`: {reason}")]
    Attribute { attribute: String, reason: String },

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("attribute `{attribute}` has no value `{value}`")]
    UnknownValue { attribute: String, value: String },

    #[error("evidence contradicts resolved attribute `{attribute}` (resolved to `{resolved}`)")]
    Contradiction { attribute: String, resolved: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("enumeration would visit {needed} joint outcomes (cap {cap})")]
    EnumerationTooLarge { needed: u128, cap: u128 },

    #[error("reward routes disagree: entropy difference {difference} vs per-attribute sum {per_attribute}")]
    RewardMismatch { difference: f64, per_attribute: f64 },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("gateway: {0}")]
    Gateway(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (files, flags, data) rather
    /// than failures while running.
    pub fn is_validation(&self) -> bool {
        if let Error::Io { source, .. } = self {
            return source.kind() == std::io::ErrorKind::NotFound;
        }
        !matches!(
            self,
            Error::Gateway(_)
                | Error::Diverged { .. }
                | Error::RewardMismatch { .. }
                | Error::EnumerationTooLarge { .. }
        )
    }
}
