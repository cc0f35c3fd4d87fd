use std::path::PathBuf;

use anyhow::Context;

use chiron_core::corpus::load_stories_jsonl;
use chiron_core::prediction::summarize_character;
use chiron_core::validation::ValidationBackends;

use crate::commands::{combo_file_name, create_dir, write_file, ExitStatus};
use crate::config::{build_backend, BackendArgs, PipelineArgs, RunConfig};

#[derive(Debug, clap::Args)]
pub struct SummarizeArgs {
    /// Story corpus (JSONL).
    #[arg(long)]
    pub corpus: PathBuf,

    /// Story to summarize from.
    #[arg(long)]
    pub story: String,

    /// Character id to summarize.
    #[arg(long)]
    pub character: String,

    /// Summarize the story strictly before this entry (default: whole story).
    #[arg(long)]
    pub upto: Option<String>,

    /// Output directory; the summary lands in {out}/summaries.
    #[arg(long)]
    pub out: PathBuf,

    #[command(flatten)]
    pub backend: BackendArgs,

    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

pub fn run(args: &SummarizeArgs) -> anyhow::Result<ExitStatus> {
    let stories = load_stories_jsonl(&args.corpus)
        .with_context(|| format!("loading {}", args.corpus.display()))?;
    let story = stories
        .iter()
        .find(|s| s.story_id == args.story)
        .ok_or_else(|| {
            chiron_core::Error::InvalidInput(format!("no story {:?} in corpus", args.story))
        })?;
    let character = story.character(&args.character).ok_or_else(|| {
        chiron_core::Error::InvalidInput(format!(
            "story {} has no character {:?}",
            story.story_id, args.character
        ))
    })?;

    let end = match &args.upto {
        Some(entry_id) => story.entry_position(entry_id).ok_or_else(|| {
            chiron_core::Error::InvalidInput(format!(
                "story {} has no entry {entry_id:?}",
                story.story_id
            ))
        })?,
        None => story.entries.len(),
    };
    let story_so_far = story.entries[..end]
        .iter()
        .map(|e| e.text.as_str())
        .collect::<Vec<_>>()
        .join("\n\n");

    let backend = build_backend(&args.backend, &args.out)?;
    let validation = ValidationBackends {
        reasoning: backend.as_ref(),
        scorer: backend.as_ref(),
    };
    let summary = summarize_character(
        backend.as_ref(),
        validation,
        &story_so_far,
        &character.canonical_name,
        &args.pipeline.validation_config(),
    )?;

    let run = RunConfig::new(&args.corpus, Some(&args.backend), &args.pipeline);
    let dir = args.out.join("summaries");
    create_dir(&dir)?;
    let path = dir.join(combo_file_name(
        &story.story_id,
        &character.character_id,
        "txt",
    ));
    write_file(&path, &format!("{}{}\n", run.text_header(), summary))?;

    println!("wrote {}", path.display());
    Ok(ExitStatus::Clean)
}
