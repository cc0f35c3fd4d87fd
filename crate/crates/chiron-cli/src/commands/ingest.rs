use std::path::PathBuf;

use anyhow::Context;

use chiron_core::corpus::{
    filter_stories, load_stories_jsonl, story_snippets, FilterConfig, DEFAULT_SNIPPET_BUDGET,
};

use crate::commands::{create_dir, write_file, ExitStatus};
use crate::config::{PipelineArgs, RunConfig};

#[derive(Debug, clap::Args)]
pub struct IngestArgs {
    /// Story corpus (JSONL, one story per line).
    #[arg(long)]
    pub corpus: PathBuf,

    /// Snippets output file (JSONL).
    #[arg(long)]
    pub out: PathBuf,

    /// Filter preset: default, or masked (finished, <10k words, >50-word entries).
    #[arg(long, default_value = "default")]
    pub preset: String,

    /// Snippet word budget.
    #[arg(long, default_value_t = DEFAULT_SNIPPET_BUDGET)]
    pub budget: usize,
}

pub fn run(args: &IngestArgs) -> anyhow::Result<ExitStatus> {
    let filter = match args.preset.as_str() {
        "default" => FilterConfig::default(),
        "masked" => FilterConfig::masked_prediction(),
        other => {
            return Err(chiron_core::Error::Config(format!(
                "unknown filter preset: {other:?} (expected default or masked)"
            ))
            .into())
        }
    };

    let stories = load_stories_jsonl(&args.corpus)
        .with_context(|| format!("loading {}", args.corpus.display()))?;
    let total = stories.len();
    let kept = filter_stories(stories, &filter);

    let run = RunConfig::new(&args.corpus, None, &PipelineArgs::default());
    let mut out = run.jsonl_line();
    out.push('\n');
    let mut snippet_count = 0usize;
    for story in &kept {
        for snippet in story_snippets(story, args.budget, filter.min_entry_words) {
            out.push_str(&serde_json::to_string(&snippet)?);
            out.push('\n');
            snippet_count += 1;
        }
    }
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            create_dir(parent)?;
        }
    }
    write_file(&args.out, &out)?;

    println!(
        "kept {} of {} stories, wrote {} snippets to {}",
        kept.len(),
        total,
        snippet_count,
        args.out.display()
    );
    if kept.is_empty() {
        log::warn!("every story was filtered out");
        return Ok(ExitStatus::Partial);
    }
    Ok(ExitStatus::Clean)
}
