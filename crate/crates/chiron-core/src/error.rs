//! Crate-wide error type.

use crate::backend::BackendError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Backend(#[from] BackendError),

    /// Caller passed inputs that violate an operation's contract
    /// (mismatched story/character ids, unknown question ids, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A statistic is undefined on the given data (zero variance,
    /// no pairable annotations, ...).
    #[error("statistic undefined: {0}")]
    Stats(String),

    /// Entailment completion contained no label digit, even after a retry.
    #[error("no entailment label (1-5) in completion: {completion:?}")]
    UnparseableLabel { completion: String },

    /// Backend failure during statement generation, tagged with the work item.
    #[error("generation failed for {story_id}/{entry_id} snippet {snippet_index}, question {question_id}")]
    Generation {
        story_id: String,
        entry_id: String,
        snippet_index: usize,
        question_id: String,
        #[source]
        source: Box<BackendError>,
    },

    /// Second chain-of-thought turn failed; the first turn's answer is kept
    /// so callers can report partial reasoning.
    #[error("chain-of-thought comparison turn failed")]
    CotComparison {
        relevant_section: String,
        #[source]
        source: BackendError,
    },

    #[error("bad record on line {line}")]
    JsonLine {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
