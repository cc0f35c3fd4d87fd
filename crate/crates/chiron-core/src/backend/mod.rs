//! Chat-completion backends behind one small trait.
//!
//! Requests are deterministic data: a message list plus sampling settings,
//! identified by a content hash (`request_key`). Three implementations ship:
//! an HTTP client for OpenAI-compatible servers, a deterministic mock, and a
//! record/replay cache that wraps any other backend.

mod http;
mod mock;
mod replay;

pub use http::{HttpBackend, RetryPolicy};
pub(crate) use mock::stable_hash64;
pub use mock::{MockBackend, MockStats};
pub use replay::ReplayBackend;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Smoothing mass used when option probabilities must be reconstructed from
/// a plain completion instead of log-scores.
pub const FALLBACK_EPSILON: f64 = 0.02;

/// Default bound on concurrent in-flight HTTP requests.
pub const DEFAULT_IN_FLIGHT_CAP: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// When set, the caller wants a probability over exactly these options.
    pub want_option_scores: Option<Vec<String>>,
}

impl ChatRequest {
    /// Single user-message request; role framing beyond this is left to the
    /// serving side's chat template.
    pub fn user(content: impl Into<String>) -> Self {
        ChatRequest {
            messages: vec![ChatMessage {
                role: Role::User,
                content: content.into(),
            }],
            temperature: 0.0,
            max_tokens: 1024,
            want_option_scores: None,
        }
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_options(mut self, options: Vec<String>) -> Self {
        self.want_option_scores = Some(options);
        self
    }

    pub fn push_user(mut self, content: impl Into<String>) -> Self {
        self.messages.push(ChatMessage {
            role: Role::User,
            content: content.into(),
        });
        self
    }

    /// Joined message contents, used by deterministic backends that dispatch
    /// on prompt content.
    pub fn joined_content(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Content hash over the canonical serialization: JSON with sorted
    /// fields, message content byte-verbatim. Equal requests always hash
    /// equal; any field change changes the key.
    pub fn request_key(&self) -> String {
        let value = serde_json::to_value(self).expect("request serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    /// Log-scores for the requested options, when the backend can provide
    /// them. Covers exactly the requested options.
    pub option_scores: Option<BTreeMap<String, f64>>,
    /// Identifier of the backend that produced the completion.
    pub backend_id: String,
    /// True when served from a replay cache.
    pub cached: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s) for request {request_key}: {message}")]
    Transport {
        message: String,
        request_key: String,
        attempts: u32,
    },

    #[error("http status {status} after {attempts} attempt(s) for request {request_key}")]
    Status {
        status: u16,
        request_key: String,
        attempts: u32,
    },

    #[error("malformed backend payload: {0}")]
    Protocol(String),

    #[error("backend response missing requested options: {missing:?}")]
    MissingOptions { missing: Vec<String> },

    #[error("completion contains none of the requested options: {options:?}")]
    NoOptionInCompletion { options: Vec<String> },

    #[error("replay cache has no entry for request {request_key}")]
    CacheMiss { request_key: String },

    #[error("replay cache: {0}")]
    Cache(String),

    #[error("backend configuration: {0}")]
    Config(String),
}

/// A chat-completion backend. Implementations must be safe to call from
/// multiple threads.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;

    /// Stable identifier recorded in statement lineage.
    fn id(&self) -> &str;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
    fn id(&self) -> &str {
        (**self).id()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
    fn id(&self) -> &str {
        (**self).id()
    }
}

/// Probability distribution over the request's options.
///
/// When the backend returns log-scores, the distribution is their softmax.
/// Otherwise the completion text is parsed as a single option, which gets
/// mass `1 - FALLBACK_EPSILON` with the rest spread evenly, so downstream
/// products never multiply by exact zero.
pub fn score_options(
    backend: &dyn Backend,
    request: &ChatRequest,
) -> Result<BTreeMap<String, f64>, BackendError> {
    let options = request
        .want_option_scores
        .as_deref()
        .filter(|o| !o.is_empty())
        .ok_or_else(|| {
            BackendError::Config("score_options requires a non-empty want_option_scores".into())
        })?;
    let response = backend.complete(request)?;
    match &response.option_scores {
        Some(scores) => {
            let missing: Vec<String> = options
                .iter()
                .filter(|o| !scores.contains_key(*o))
                .cloned()
                .collect();
            if !missing.is_empty() {
                return Err(BackendError::MissingOptions { missing });
            }
            Ok(softmax(options, scores))
        }
        None => fallback_distribution(options, &response.text),
    }
}

/// Numerically stable softmax over the requested options' log-scores.
pub fn softmax(options: &[String], log_scores: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let max = options
        .iter()
        .map(|o| log_scores[o])
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = options
        .iter()
        .map(|o| (log_scores[o] - max).exp())
        .collect();
    let sum: f64 = exps.iter().sum();
    options
        .iter()
        .cloned()
        .zip(exps.iter().map(|e| e / sum))
        .collect()
}

fn fallback_distribution(
    options: &[String],
    completion: &str,
) -> Result<BTreeMap<String, f64>, BackendError> {
    let trimmed = completion.trim();
    let chosen = options
        .iter()
        .position(|o| trimmed == o)
        .or_else(|| {
            // Earliest occurrence in the completion; ties go to the earlier
            // option in the request's list.
            options
                .iter()
                .enumerate()
                .filter_map(|(i, o)| trimmed.find(o.as_str()).map(|at| (at, i)))
                .min()
                .map(|(_, i)| i)
        })
        .ok_or_else(|| BackendError::NoOptionInCompletion {
            options: options.to_vec(),
        })?;
    let n = options.len();
    let mut out = BTreeMap::new();
    if n == 1 {
        out.insert(options[0].clone(), 1.0);
        return Ok(out);
    }
    let rest = FALLBACK_EPSILON / (n as f64 - 1.0);
    for (i, option) in options.iter().enumerate() {
        let p = if i == chosen {
            1.0 - FALLBACK_EPSILON
        } else {
            rest
        };
        out.insert(option.clone(), p);
    }
    Ok(out)
}
