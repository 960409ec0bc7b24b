//! Crate-wide error type.

use thiserror::Error;

/// Convenient result alias used across the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An invariant on a domain type does not hold. The message names the
    /// first violated invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A catalog or strategy file failed to parse. `record` is the 1-based
    /// line number of the offending record.
    #[error("parse error in record {record}: {message}")]
    CatalogParse { record: usize, message: String },

    /// Two catalog records share an `item_id`.
    #[error("duplicate item_id {0:?} in catalog")]
    DuplicateItem(String),

    /// A request named a backend id that was never registered.
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),

    /// The transport kept failing after the configured number of attempts.
    #[error("transport error on backend {backend:?} after {attempts} attempts: {message}")]
    Transport {
        backend: String,
        attempts: u32,
        message: String,
    },

    /// Strict replay mode found no recorded response for a request.
    #[error("cassette miss for key {key} (tag {tag:?})")]
    CassetteMiss { key: String, tag: String },

    /// Embedding vectors in one batch disagree on dimension.
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The judge ensemble could not produce a verdict.
    #[error("judging error: {0}")]
    Judging(String),

    /// A rewrite came back empty or identical to its parent after trimming.
    #[error("degenerate expansion for strategy {strategy:?}: {reason}")]
    DegenerateExpansion { strategy: String, reason: String },

    /// Prompt expansion produced text identical to an earlier prompt.
    #[error("duplicate prompt text from direction {direction}")]
    DuplicatePrompt { direction: String },

    /// An expansion direction was requested without its feedback slot.
    #[error("direction {direction} requires {slot} feedback, which is absent")]
    MissingFeedback { direction: String, slot: String },

    /// Reflection produced no usable feedback in any slot.
    #[error("reflection error: all feedback slots empty for prompt {0}")]
    EmptyReflection(String),

    /// A selection pool contained a node without the score the operation
    /// needs (reward for queries, violation rate for prompts).
    #[error("unscored node {0} in selection pool")]
    Unscored(String),

    /// A metric was asked to operate on input that leaves it undefined.
    #[error("metrics error: {0}")]
    Metrics(String),

    /// A template is missing a required placeholder or uses an unknown one.
    #[error("template error in {template}: {message}")]
    Template { template: String, message: String },

    /// The event log has a gap or is otherwise inconsistent.
    #[error("log integrity error: expected ordinal {expected}, found {found}")]
    Integrity { expected: u64, found: u64 },

    /// A trace or report referenced a node id that does not exist.
    #[error("unknown node {0:?}")]
    UnknownNode(String),

    /// Run configuration is unusable (missing files, bad mode, etc.).
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
