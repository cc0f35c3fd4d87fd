//! OpenAI-compatible chat-completions client.
//!
//! Single blocking POST per attempt against `{base}/v1/chat/completions`.
//! Transport failures and 429/5xx responses are retried with exponential
//! backoff; everything else fails immediately. A small semaphore bounds the
//! number of in-flight requests so batch runs do not trample rate limits.

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::backend::{Backend, BackendError, ChatRequest, ChatResponse, DEFAULT_IN_FLIGHT_CAP};

pub const ENV_API_BASE: &str = "CHIRON_API_BASE";
pub const ENV_API_KEY: &str = "CHIRON_API_KEY";

/// How many top token alternatives to request when option scores are wanted.
const TOP_LOGPROBS: u8 = 20;

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    /// Retries after the first attempt; total attempts = 1 + max_retries.
    pub max_retries: u32,
    pub initial_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_delay: Duration::from_millis(500),
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    fn delay_before_retry(&self, retry_index: u32) -> Duration {
        let scale = self.factor.powi(retry_index as i32);
        self.initial_delay.mul_f64(scale.max(0.0))
    }
}

/// Counting semaphore; `reqwest::blocking` holds a thread per request, so a
/// plain Mutex+Condvar is enough.
struct Gate {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn new(cap: usize) -> Self {
        Gate {
            slots: Mutex::new(cap.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePermit<'_> {
        let mut slots = self.slots.lock().expect("gate lock");
        while *slots == 0 {
            slots = self.freed.wait(slots).expect("gate wait");
        }
        *slots -= 1;
        GatePermit { gate: self }
    }
}

struct GatePermit<'a> {
    gate: &'a Gate,
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        let mut slots = self.gate.slots.lock().expect("gate lock");
        *slots += 1;
        self.gate.freed.notify_one();
    }
}

pub struct HttpBackend {
    base_url: String,
    api_key: Option<String>,
    model: String,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
    gate: Gate,
    id: String,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("id", &self.id)
            .field("base_url", &self.base_url)
            .field("retry", &self.retry)
            .finish()
    }
}

impl HttpBackend {
    pub fn new(
        base_url: impl Into<String>,
        api_key: Option<String>,
        model: impl Into<String>,
    ) -> Self {
        let model = model.into();
        let id = format!("http:{model}");
        HttpBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            model,
            client: reqwest::blocking::Client::new(),
            retry: RetryPolicy::default(),
            gate: Gate::new(DEFAULT_IN_FLIGHT_CAP),
            id,
        }
    }

    /// Read `CHIRON_API_BASE` (required) and `CHIRON_API_KEY` (optional).
    pub fn from_env(model: impl Into<String>) -> Result<Self, BackendError> {
        let base = std::env::var(ENV_API_BASE)
            .map_err(|_| BackendError::Config(format!("{ENV_API_BASE} is not set")))?;
        let key = std::env::var(ENV_API_KEY).ok();
        Ok(HttpBackend::new(base, key, model))
    }

    pub fn with_retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_in_flight_cap(mut self, cap: usize) -> Self {
        self.gate = Gate::new(cap);
        self
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url)
    }

    fn build_body(&self, request: &ChatRequest) -> serde_json::Value {
        let messages: Vec<serde_json::Value> = request
            .messages
            .iter()
            .map(|m| json!({"role": m.role, "content": m.content}))
            .collect();
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if request.want_option_scores.is_some() {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(TOP_LOGPROBS);
        }
        body
    }

    fn attempt(&self, request: &ChatRequest, key: &str, attempts: u32) -> AttemptOutcome {
        let mut builder = self
            .client
            .post(self.endpoint())
            .header("content-type", "application/json")
            .json(&self.build_body(request));
        if let Some(api_key) = &self.api_key {
            builder = builder.bearer_auth(api_key);
        }
        let response = match builder.send() {
            Ok(r) => r,
            Err(e) => {
                return AttemptOutcome::Retryable(BackendError::Transport {
                    message: e.to_string(),
                    request_key: key.to_string(),
                    attempts,
                })
            }
        };
        let status = response.status();
        if !status.is_success() {
            let err = BackendError::Status {
                status: status.as_u16(),
                request_key: key.to_string(),
                attempts,
            };
            return if is_retryable_status(status.as_u16()) {
                AttemptOutcome::Retryable(err)
            } else {
                AttemptOutcome::Fatal(err)
            };
        }
        let body: CompletionsReply = match response.json() {
            Ok(b) => b,
            Err(e) => {
                return AttemptOutcome::Fatal(BackendError::Protocol(format!(
                    "malformed completion body: {e}"
                )))
            }
        };
        match parse_reply(body, request) {
            Ok((text, scores)) => AttemptOutcome::Done(ChatResponse {
                text,
                option_scores: scores,
                backend_id: self.id.clone(),
                cached: false,
            }),
            Err(e) => AttemptOutcome::Fatal(e),
        }
    }
}

enum AttemptOutcome {
    Done(ChatResponse),
    Retryable(BackendError),
    Fatal(BackendError),
}

fn is_retryable_status(status: u16) -> bool {
    matches!(status, 429 | 500 | 502 | 503 | 504)
}

#[derive(Debug, Deserialize)]
struct CompletionsReply {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ChoiceMessage,
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Debug, Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ChoiceLogprobs {
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Debug, Deserialize)]
struct TokenLogprob {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<TopLogprob>,
}

#[derive(Debug, Deserialize)]
struct TopLogprob {
    token: String,
    logprob: f64,
}

fn parse_reply(
    reply: CompletionsReply,
    request: &ChatRequest,
) -> Result<(String, Option<BTreeMap<String, f64>>), BackendError> {
    let choice = reply
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::Protocol("completion has no choices".into()))?;
    let text = choice
        .message
        .content
        .ok_or_else(|| BackendError::Protocol("choice has no message content".into()))?;
    let scores = match &request.want_option_scores {
        None => None,
        Some(options) => extract_option_scores(choice.logprobs.as_ref(), options),
    };
    Ok((text, scores))
}

/// Pull per-option log-scores from the first generated token's alternatives.
/// Tokens are matched on trimmed text; on duplicates the larger logprob wins.
/// Returns None when the reply carries no logprobs at all so the caller can
/// fall back to parsing the completion text.
fn extract_option_scores(
    logprobs: Option<&ChoiceLogprobs>,
    options: &[String],
) -> Option<BTreeMap<String, f64>> {
    let first = logprobs?.content.as_ref()?.first()?;
    let mut seen: BTreeMap<String, f64> = BTreeMap::new();
    let mut record = |token: &str, logprob: f64| {
        let trimmed = token.trim();
        if trimmed.is_empty() {
            return;
        }
        seen.entry(trimmed.to_string())
            .and_modify(|existing| {
                if logprob > *existing {
                    *existing = logprob;
                }
            })
            .or_insert(logprob);
    };
    record(&first.token, first.logprob);
    for alt in &first.top_logprobs {
        record(&alt.token, alt.logprob);
    }
    let mut scores = BTreeMap::new();
    for option in options {
        if let Some(lp) = seen.get(option.trim()) {
            scores.insert(option.clone(), *lp);
        }
    }
    if scores.is_empty() {
        None
    } else {
        Some(scores)
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let key = request.request_key();
        let _permit = self.gate.acquire();
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match self.attempt(request, &key, attempts) {
                AttemptOutcome::Done(resp) => return Ok(resp),
                AttemptOutcome::Fatal(err) => return Err(err),
                AttemptOutcome::Retryable(err) => {
                    if attempts > self.retry.max_retries {
                        return Err(err);
                    }
                    let delay = self.retry.delay_before_retry(attempts - 1);
                    log::warn!(
                        "retrying request {key} after attempt {attempts}: {err} (sleeping {delay:?})"
                    );
                    std::thread::sleep(delay);
                }
            }
        }
    }

    fn id(&self) -> &str {
        &self.id
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write as IoWrite};
    use std::net::TcpListener;
    use std::sync::mpsc;

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            max_retries: 3,
            initial_delay: Duration::from_millis(1),
            factor: 2.0,
        }
    }

    /// One-shot HTTP server: answers `responses` in order, one per
    /// connection, and reports each request's raw bytes on the channel.
    fn serve(responses: Vec<String>) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for response in responses {
                let (mut stream, _) = match listener.accept() {
                    Ok(pair) => pair,
                    Err(_) => return,
                };
                let mut buf = vec![0u8; 65536];
                let mut raw = Vec::new();
                loop {
                    match stream.read(&mut buf) {
                        Ok(0) => break,
                        Ok(n) => {
                            raw.extend_from_slice(&buf[..n]);
                            if request_complete(&raw) {
                                break;
                            }
                        }
                        Err(_) => break,
                    }
                }
                let _ = tx.send(String::from_utf8_lossy(&raw).into_owned());
                let _ = stream.write_all(response.as_bytes());
            }
        });
        (format!("http://{addr}"), rx)
    }

    fn request_complete(raw: &[u8]) -> bool {
        let text = String::from_utf8_lossy(raw);
        let Some(header_end) = text.find("\r\n\r\n") else {
            return false;
        };
        let content_length = text
            .lines()
            .find_map(|l| {
                let lower = l.to_ascii_lowercase();
                lower
                    .strip_prefix("content-length:")
                    .and_then(|v| v.trim().parse::<usize>().ok())
            })
            .unwrap_or(0);
        raw.len() >= header_end + 4 + content_length
    }

    fn http_response(status: u16, body: &str) -> String {
        let reason = match status {
            200 => "OK",
            400 => "Bad Request",
            500 => "Internal Server Error",
            _ => "Status",
        };
        format!(
            "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
            body.len()
        )
    }

    fn completion_body(text: &str) -> String {
        serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": text}}]
        })
        .to_string()
    }

    #[test]
    fn parses_successful_completion() {
        let (base, rx) = serve(vec![http_response(200, &completion_body("hello there"))]);
        let backend = HttpBackend::new(base, Some("sk-test".into()), "test-model")
            .with_retry_policy(fast_retry());
        let resp = backend.complete(&ChatRequest::user("hi")).unwrap();
        assert_eq!(resp.text, "hello there");
        assert!(!resp.cached);
        assert_eq!(resp.option_scores, None);
        let raw = rx.recv().unwrap();
        assert!(raw.starts_with("POST /v1/chat/completions"));
        assert!(
            raw.contains("authorization: Bearer sk-test")
                || raw.contains("Authorization: Bearer sk-test")
        );
        let body_start = raw.find("\r\n\r\n").unwrap() + 4;
        let body: serde_json::Value = serde_json::from_str(&raw[body_start..]).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "hi");
        assert!(body.get("logprobs").is_none());
    }

    #[test]
    fn retries_500_then_succeeds() {
        let (base, rx) = serve(vec![
            http_response(500, "{}"),
            http_response(200, &completion_body("recovered")),
        ]);
        let backend = HttpBackend::new(base, None, "test-model").with_retry_policy(fast_retry());
        let resp = backend.complete(&ChatRequest::user("retry me")).unwrap();
        assert_eq!(resp.text, "recovered");
        assert_eq!(rx.iter().count(), 2);
    }

    #[test]
    fn exhausts_retries_and_reports_attempts() {
        let (base, rx) = serve(vec![
            http_response(500, "{}"),
            http_response(500, "{}"),
            http_response(500, "{}"),
            http_response(500, "{}"),
        ]);
        let backend = HttpBackend::new(base, None, "test-model").with_retry_policy(fast_retry());
        let err = backend.complete(&ChatRequest::user("doomed")).unwrap_err();
        match err {
            BackendError::Status {
                status, attempts, ..
            } => {
                assert_eq!(status, 500);
                assert_eq!(attempts, 4);
            }
            other => panic!("unexpected error: {other}"),
        }
        assert_eq!(rx.iter().count(), 4);
    }

    #[test]
    fn non_retryable_status_fails_once() {
        let (base, rx) = serve(vec![http_response(400, "{}"), http_response(200, "{}")]);
        let backend = HttpBackend::new(base, None, "test-model").with_retry_policy(fast_retry());
        let err = backend.complete(&ChatRequest::user("bad")).unwrap_err();
        match err {
            BackendError::Status {
                status, attempts, ..
            } => {
                assert_eq!(status, 400);
                assert_eq!(attempts, 1);
            }
            other => panic!("unexpected error: {other}"),
        }
        // The second canned response must still be unclaimed.
        assert_eq!(rx.try_iter().count(), 1);
    }

    #[test]
    fn extracts_option_scores_from_top_logprobs() {
        let body = serde_json::json!({
            "choices": [{
                "message": {"role": "assistant", "content": "5"},
                "logprobs": {"content": [{
                    "token": "5",
                    "logprob": -0.1,
                    "top_logprobs": [
                        {"token": "5", "logprob": -0.1},
                        {"token": " 4", "logprob": -2.5},
                        {"token": "3", "logprob": -4.0},
                        {"token": "no", "logprob": -9.0}
                    ]
                }]}
            }]
        })
        .to_string();
        let (base, _rx) = serve(vec![http_response(200, &body)]);
        let backend = HttpBackend::new(base, None, "test-model").with_retry_policy(fast_retry());
        let request = ChatRequest::user("score me").with_options(vec![
            "1".into(),
            "2".into(),
            "3".into(),
            "4".into(),
            "5".into(),
        ]);
        let resp = backend.complete(&request).unwrap();
        let scores = resp.option_scores.unwrap();
        assert_eq!(scores.get("5"), Some(&-0.1));
        assert_eq!(scores.get("4"), Some(&-2.5));
        assert_eq!(scores.get("3"), Some(&-4.0));
        assert!(!scores.contains_key("1"));
        assert!(!scores.contains_key("2"));
    }

    #[test]
    fn scoring_request_asks_for_logprobs() {
        let (base, rx) = serve(vec![http_response(200, &completion_body("5"))]);
        let backend = HttpBackend::new(base, None, "test-model").with_retry_policy(fast_retry());
        let request = ChatRequest::user("score me").with_options(vec!["4".into(), "5".into()]);
        let resp = backend.complete(&request).unwrap();
        // No logprobs in the reply: scores stay empty for the fallback path.
        assert_eq!(resp.option_scores, None);
        let raw = rx.recv().unwrap();
        let body_start = raw.find("\r\n\r\n").unwrap() + 4;
        let body: serde_json::Value = serde_json::from_str(&raw[body_start..]).unwrap();
        assert_eq!(body["logprobs"], true);
        assert_eq!(body["top_logprobs"], 20);
    }

    #[test]
    fn malformed_success_body_is_protocol_error_without_retry() {
        let (base, rx) = serve(vec![
            http_response(200, "{\"weird\": true}"),
            http_response(200, &completion_body("never")),
        ]);
        let backend = HttpBackend::new(base, None, "test-model").with_retry_policy(fast_retry());
        let err = backend.complete(&ChatRequest::user("junk")).unwrap_err();
        assert!(matches!(err, BackendError::Protocol(_)));
        assert_eq!(rx.try_iter().count(), 1);
    }

    #[test]
    fn duplicate_tokens_keep_max_logprob() {
        let logprobs = ChoiceLogprobs {
            content: Some(vec![TokenLogprob {
                token: "4".into(),
                logprob: -3.0,
                top_logprobs: vec![TopLogprob {
                    token: " 4".into(),
                    logprob: -1.0,
                }],
            }]),
        };
        let scores = extract_option_scores(Some(&logprobs), &["4".into()]).unwrap();
        assert_eq!(scores.get("4"), Some(&-1.0));
    }

    #[test]
    fn delay_schedule_is_exponential() {
        let policy = RetryPolicy {
            max_retries: 3,
            initial_delay: Duration::from_millis(500),
            factor: 2.0,
        };
        assert_eq!(policy.delay_before_retry(0), Duration::from_millis(500));
        assert_eq!(policy.delay_before_retry(1), Duration::from_millis(1000));
        assert_eq!(policy.delay_before_retry(2), Duration::from_millis(2000));
    }

    #[test]
    fn gate_bounds_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Arc;
        let gate = Arc::new(Gate::new(2));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|scope| {
            for _ in 0..8 {
                let gate = Arc::clone(&gate);
                let live = Arc::clone(&live);
                let peak = Arc::clone(&peak);
                scope.spawn(move || {
                    let _permit = gate.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn from_env_requires_base() {
        // Isolate from any ambient configuration.
        let prior = std::env::var(ENV_API_BASE).ok();
        std::env::remove_var(ENV_API_BASE);
        let err = HttpBackend::from_env("m").unwrap_err();
        assert!(matches!(err, BackendError::Config(_)));
        if let Some(v) = prior {
            std::env::set_var(ENV_API_BASE, v);
        }
    }
}
