//! Error type shared across the simulator.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or precondition violation. `key` names the
    /// offending config path when one exists (e.g. `partition.ratios`).
    #[error("configuration error{}: {msg}", key.as_deref().map(|k| format!(" at `{k}`")).unwrap_or_default())]
    Config { key: Option<String>, msg: String },

    /// Config file does not match the documented schema (syntax error,
    /// wrong type, or unknown key) — distinct from invariant violations.
    #[error("schema violation at `{key}`: {msg}")]
    Schema { key: String, msg: String },

    /// Referenced entity (client, preset, file) does not exist.
    #[error("not found: {0}")]
    NotFound(String),

    /// Quantity undefined for the given input (e.g. average degree of an
    /// empty graph).
    #[error("undefined value: {0}")]
    Undefined(String),

    /// Malformed input data, with the 1-based data row where it occurred.
    #[error("ingestion error at row {row}: {msg}")]
    Ingestion { row: usize, msg: String },

    /// Training produced a non-finite loss.
    #[error("numerical divergence at epoch {epoch}, batch {batch}: loss is not finite")]
    NumericalDivergence { epoch: usize, batch: usize },

    /// Models cannot be aggregated together.
    #[error("aggregation error: {0}")]
    Aggregation(String),

    /// Sampling requested from a generator with no present classes.
    #[error("generator has no present classes")]
    GeneratorEmpty,

    /// Internal contract violation.
    #[error("internal error: {0}")]
    Internal(String),

    /// Simulation failure, wrapped with round/client context.
    #[error("round {round}, client {client}: {source}")]
    Simulation {
        round: u32,
        client: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config { key: None, msg: msg.into() }
    }

    pub fn config_at(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { key: Some(key.into()), msg: msg.into() }
    }

    pub fn schema(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Schema { key: key.into(), msg: msg.into() }
    }

    /// The config key path attached to this error, if any.
    pub fn key(&self) -> Option<&str> {
        match self {
            Error::Config { key, .. } => key.as_deref(),
            Error::Schema { key, .. } => Some(key),
            _ => None,
        }
    }
}
