//! Record/replay cache over any backend.
//!
//! The cache is an append-only JSONL file of `(request_key, response)`
//! pairs. A hit is returned byte-identical to what was recorded; on reload,
//! newer lines win on duplicate keys. Recording mode forwards misses to the
//! wrapped backend; replay-only mode errors on a miss, which makes paid-API
//! runs resumable and auditable.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, ChatRequest, ChatResponse};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredResponse {
    text: String,
    option_scores: Option<std::collections::BTreeMap<String, f64>>,
    backend_id: String,
}

impl StoredResponse {
    fn to_response(&self, cached: bool) -> ChatResponse {
        ChatResponse {
            text: self.text.clone(),
            option_scores: self.option_scores.clone(),
            backend_id: self.backend_id.clone(),
            cached,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    request_key: String,
    response: StoredResponse,
}

struct CacheState {
    map: HashMap<String, StoredResponse>,
    appender: Option<BufWriter<File>>,
}

pub struct ReplayBackend {
    inner: Option<Box<dyn Backend>>,
    path: PathBuf,
    id: String,
    state: Mutex<CacheState>,
}

impl std::fmt::Debug for ReplayBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReplayBackend")
            .field("id", &self.id)
            .field("path", &self.path)
            .field("recording", &self.inner.is_some())
            .finish()
    }
}

impl ReplayBackend {
    /// Wrap `inner`: serve hits from the cache at `path`, forward misses and
    /// record their responses.
    pub fn recording(
        inner: Box<dyn Backend>,
        path: impl Into<PathBuf>,
    ) -> Result<Self, BackendError> {
        let path = path.into();
        let map = load_cache(&path, false)?;
        let id = format!("replay+{}", inner.id());
        Ok(ReplayBackend {
            inner: Some(inner),
            path,
            id,
            state: Mutex::new(CacheState {
                map,
                appender: None,
            }),
        })
    }

    /// Serve only from the cache at `path`; a miss is an error.
    pub fn replay_only(path: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let path = path.into();
        let map = load_cache(&path, true)?;
        Ok(ReplayBackend {
            inner: None,
            path,
            id: "replay".into(),
            state: Mutex::new(CacheState {
                map,
                appender: None,
            }),
        })
    }

    pub fn entry_count(&self) -> usize {
        self.state.lock().expect("cache lock").map.len()
    }
}

fn load_cache(
    path: &Path,
    required: bool,
) -> Result<HashMap<String, StoredResponse>, BackendError> {
    let mut map = HashMap::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(_) if !required => return Ok(map),
        Err(e) => {
            return Err(BackendError::Cache(format!(
                "cannot open {} for replay: {e}",
                path.display()
            )))
        }
    };
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| BackendError::Cache(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CacheLine = serde_json::from_str(&line).map_err(|e| {
            BackendError::Cache(format!("{} line {}: {e}", path.display(), idx + 1))
        })?;
        // Later lines overwrite earlier ones.
        map.insert(parsed.request_key, parsed.response);
    }
    Ok(map)
}

impl Backend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let key = request.request_key();
        {
            let state = self.state.lock().expect("cache lock");
            if let Some(hit) = state.map.get(&key) {
                return Ok(hit.to_response(true));
            }
        }
        let inner = self.inner.as_ref().ok_or_else(|| BackendError::CacheMiss {
            request_key: key.clone(),
        })?;
        let response = inner.complete(request)?;
        let stored = StoredResponse {
            text: response.text.clone(),
            option_scores: response.option_scores.clone(),
            backend_id: response.backend_id.clone(),
        };
        let mut state = self.state.lock().expect("cache lock");
        // Another thread may have filled this key while we were in flight;
        // serve its recorded copy so memory and file agree.
        if let Some(prior) = state.map.get(&key) {
            return Ok(prior.to_response(true));
        }
        if state.appender.is_none() {
            if let Some(parent) = self.path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent).map_err(|e| {
                        BackendError::Cache(format!("create {}: {e}", parent.display()))
                    })?;
                }
            }
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
                .map_err(|e| BackendError::Cache(format!("open {}: {e}", self.path.display())))?;
            state.appender = Some(BufWriter::new(file));
        }
        let line = serde_json::to_string(&CacheLine {
            request_key: key.clone(),
            response: stored.clone(),
        })
        .map_err(|e| BackendError::Cache(e.to_string()))?;
        let appender = state.appender.as_mut().expect("appender just set");
        writeln!(appender, "{line}").map_err(|e| BackendError::Cache(e.to_string()))?;
        appender
            .flush()
            .map_err(|e| BackendError::Cache(e.to_string()))?;
        state.map.insert(key, stored);
        Ok(response)
    }

    fn id(&self) -> &str {
        &self.id
    }
}
