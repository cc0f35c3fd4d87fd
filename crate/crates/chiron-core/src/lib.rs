//! Core library for chiron: character sheets from long-form stories.
//!
//! The pipeline generates candidate statements about a character from each
//! story snippet, validates them with an entailment scorer plus optional
//! reasoning context, and assembles the survivors into a structured sheet.
//! Sheets feed a masked-character prediction task and density analysis.

pub mod backend;
pub mod corpus;
pub mod error;
pub mod generation;
pub mod metrics;
pub mod pipeline;
pub mod prediction;
pub mod prompts;
pub mod sheet;
pub mod validation;

pub use backend::{Backend, ChatRequest, ChatResponse, HttpBackend, MockBackend, ReplayBackend};
pub use corpus::{Character, Entry, Snippet, Story};
pub use error::{Error, Result};
pub use generation::{Category, QuestionSpec, Statement};
pub use pipeline::{build_character_sheet, PipelineBackends, PipelineConfig};
pub use prediction::{MaskedTask, PredictionOutcome, Setting};
pub use sheet::{CharacterSheet, DedupConfig};
pub use validation::{AcceptancePolicy, AnnotationRecord, ReasoningMode, ValidationConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
