//! Run configuration shared by every subcommand.
//!
//! The `RunConfig` holds the fields that determine output *content*; it is
//! serialized into every output file so a run can be reproduced from its
//! artifacts. Where outputs land (`--out`) and how fast they are produced
//! (`--concurrency`) are deliberately not part of it: re-running the same
//! config at a different cap or directory must yield byte-identical files.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use chiron_core::backend::DEFAULT_IN_FLIGHT_CAP;
use chiron_core::corpus::DEFAULT_SNIPPET_BUDGET;
use chiron_core::sheet::DEFAULT_DEDUP_THRESHOLD;
use chiron_core::{
    AcceptancePolicy, Backend, DedupConfig, HttpBackend, MockBackend, ReasoningMode, ReplayBackend,
    ValidationConfig,
};

#[derive(Debug, Clone, clap::Args)]
pub struct BackendArgs {
    /// Backend kind: mock, http, or replay (predict also accepts oracle).
    #[arg(long, default_value = "mock")]
    pub backend: String,

    /// Chat-completions base URL; falls back to CHIRON_API_BASE.
    #[arg(long)]
    pub base_url: Option<String>,

    /// Model name sent to the backend.
    #[arg(long, default_value = "mock")]
    pub model: String,

    /// Replay cache path (default: {out}/cache.jsonl).
    #[arg(long)]
    pub cache: Option<PathBuf>,

    /// Cap on concurrent backend requests.
    #[arg(long, default_value_t = DEFAULT_IN_FLIGHT_CAP)]
    pub concurrency: usize,

    /// Mock only: give every scored option the same log-probability.
    #[arg(long)]
    pub mock_uniform: bool,
}

#[derive(Debug, Clone, clap::Args)]
pub struct PipelineArgs {
    /// Acceptance policy: eq5 or ge4.
    #[arg(long, default_value = "eq5")]
    pub policy: AcceptancePolicy,

    /// Validation reasoning mode: all, icl, cot, or none.
    #[arg(long, default_value = "all")]
    pub reasoning: ReasoningMode,

    /// Restrict inputs to entries told from the focal character's perspective.
    #[arg(long)]
    pub only_role: bool,

    /// TF-IDF cosine threshold for near-duplicate removal.
    #[arg(long, default_value_t = DEFAULT_DEDUP_THRESHOLD)]
    pub dedup_threshold: f64,

    /// Master seed; all randomness flows from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Snippet word budget.
    #[arg(long, default_value_t = DEFAULT_SNIPPET_BUDGET)]
    pub budget: usize,
}

impl Default for PipelineArgs {
    fn default() -> Self {
        PipelineArgs {
            policy: AcceptancePolicy::Eq5,
            reasoning: ReasoningMode::All,
            only_role: false,
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
            seed: 0,
            budget: DEFAULT_SNIPPET_BUDGET,
        }
    }
}

impl PipelineArgs {
    pub fn validation_config(&self) -> ValidationConfig {
        ValidationConfig {
            policy: self.policy,
            reasoning_mode: self.reasoning,
        }
    }

    pub fn dedup_config(&self) -> anyhow::Result<DedupConfig> {
        Ok(DedupConfig::new(self.dedup_threshold)?)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BackendSpec {
    pub kind: String,
    pub base_url: Option<String>,
    pub model: String,
}

/// Provenance block embedded in every output file.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub corpus: String,
    pub backend: BackendSpec,
    pub policy: String,
    pub reasoning_mode: String,
    pub only_role: bool,
    pub dedup_threshold: f64,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(corpus: &Path, backend: Option<&BackendArgs>, pipeline: &PipelineArgs) -> Self {
        let backend = match backend {
            Some(args) => BackendSpec {
                kind: args.backend.clone(),
                base_url: args.base_url.clone(),
                model: args.model.clone(),
            },
            None => BackendSpec {
                kind: "none".into(),
                base_url: None,
                model: "none".into(),
            },
        };
        RunConfig {
            corpus: corpus.display().to_string(),
            backend,
            policy: pipeline.policy.id().to_string(),
            reasoning_mode: pipeline.reasoning.id().to_string(),
            only_role: pipeline.only_role,
            dedup_threshold: pipeline.dedup_threshold,
            seed: pipeline.seed,
        }
    }

    pub fn json(&self) -> String {
        serde_json::to_string(self).expect("RunConfig serializes")
    }

    /// First line of a JSONL output.
    pub fn jsonl_line(&self) -> String {
        format!("{{\"provenance\":{}}}", self.json())
    }

    /// Comment header of a plain-text output.
    pub fn text_header(&self) -> String {
        format!("# provenance: {}\n", self.json())
    }
}

/// Builds the mock/http/replay backends. `oracle` is predict-only and is
/// constructed by the caller because it needs the task set.
pub fn build_backend(args: &BackendArgs, out_dir: &Path) -> anyhow::Result<Box<dyn Backend>> {
    let cache_path = || {
        args.cache
            .clone()
            .unwrap_or_else(|| out_dir.join("cache.jsonl"))
    };
    match args.backend.as_str() {
        "mock" => {
            let mut mock = MockBackend::new();
            if args.mock_uniform {
                mock = mock.with_uniform_scores();
            }
            Ok(Box::new(mock))
        }
        "http" => {
            let base = args
                .base_url
                .clone()
                .or_else(|| std::env::var("CHIRON_API_BASE").ok())
                .ok_or_else(|| {
                    chiron_core::Error::Config(
                        "http backend needs --base-url or CHIRON_API_BASE".to_string(),
                    )
                })?;
            let key = std::env::var("CHIRON_API_KEY").ok();
            let http = HttpBackend::new(base, key, args.model.clone())
                .with_in_flight_cap(args.concurrency);
            let cache = cache_path();
            let backend = ReplayBackend::recording(Box::new(http), &cache)
                .with_context(|| format!("opening replay cache {}", cache.display()))?;
            Ok(Box::new(backend))
        }
        "replay" => {
            let cache = cache_path();
            let backend = ReplayBackend::replay_only(&cache)
                .with_context(|| format!("opening replay cache {}", cache.display()))?;
            Ok(Box::new(backend))
        }
        other => Err(chiron_core::Error::Config(format!("unknown backend kind: {other:?}")).into()),
    }
}
