use std::path::PathBuf;

use anyhow::Context;
use serde::Serialize;

use chiron_core::corpus::{filter_stories, load_stories_jsonl, FilterConfig};
use chiron_core::validation::ValidationBackends;
use chiron_core::{build_character_sheet, CharacterSheet, PipelineBackends, PipelineConfig, Story};

use crate::commands::{combo_file_name, create_dir, write_file, ExitStatus};
use crate::config::{build_backend, BackendArgs, PipelineArgs, RunConfig};

#[derive(Debug, clap::Args)]
pub struct SheetArgs {
    /// Story corpus (JSONL).
    #[arg(long)]
    pub corpus: PathBuf,

    /// Story to build sheets for; omit to process every kept story.
    #[arg(long)]
    pub story: Option<String>,

    /// Character id; omit to process every character of the story.
    #[arg(long)]
    pub character: Option<String>,

    /// Output directory; sheets land in {out}/sheets, rejects in {out}/rejected.
    #[arg(long)]
    pub out: PathBuf,

    /// Skip entries at or under this many words.
    #[arg(long)]
    pub min_entry_words: Option<usize>,

    #[command(flatten)]
    pub backend: BackendArgs,

    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Serialize)]
struct SheetFile<'a> {
    provenance: &'a RunConfig,
    sheet: &'a CharacterSheet,
}

pub fn run(args: &SheetArgs) -> anyhow::Result<ExitStatus> {
    if args.character.is_some() && args.story.is_none() {
        return Err(chiron_core::Error::Config("--character requires --story".to_string()).into());
    }

    let stories = load_stories_jsonl(&args.corpus)
        .with_context(|| format!("loading {}", args.corpus.display()))?;
    let kept = filter_stories(stories, &FilterConfig::default());

    let mut combos: Vec<(&Story, String)> = Vec::new();
    match &args.story {
        Some(story_id) => {
            let story = kept
                .iter()
                .find(|s| &s.story_id == story_id)
                .ok_or_else(|| {
                    chiron_core::Error::InvalidInput(format!(
                        "story {story_id:?} is missing or filtered out"
                    ))
                })?;
            match &args.character {
                Some(character_id) => combos.push((story, character_id.clone())),
                None => {
                    for character in &story.characters {
                        combos.push((story, character.character_id.clone()));
                    }
                }
            }
        }
        None => {
            for story in &kept {
                for character in &story.characters {
                    combos.push((story, character.character_id.clone()));
                }
            }
        }
    }
    if combos.is_empty() {
        return Err(chiron_core::Error::InvalidInput(
            "no story/character combos to process".to_string(),
        )
        .into());
    }

    let backend = build_backend(&args.backend, &args.out)?;
    let backends = PipelineBackends {
        generator: backend.as_ref(),
        validation: ValidationBackends {
            reasoning: backend.as_ref(),
            scorer: backend.as_ref(),
        },
    };
    let config = PipelineConfig {
        validation: args.pipeline.validation_config(),
        only_role: args.pipeline.only_role,
        dedup: args.pipeline.dedup_config()?,
        snippet_budget: args.pipeline.budget,
        min_entry_words: args.min_entry_words,
        concurrency: args.backend.concurrency,
    };
    let run = RunConfig::new(&args.corpus, Some(&args.backend), &args.pipeline);

    let sheets_dir = args.out.join("sheets");
    let rejected_dir = args.out.join("rejected");
    create_dir(&sheets_dir)?;
    create_dir(&rejected_dir)?;

    for (story, character_id) in &combos {
        let result = build_character_sheet(backends, story, character_id, &config)?;

        let sheet_path = sheets_dir.join(combo_file_name(&story.story_id, character_id, "json"));
        let mut sheet_json = serde_json::to_string_pretty(&SheetFile {
            provenance: &run,
            sheet: &result.sheet,
        })?;
        sheet_json.push('\n');
        write_file(&sheet_path, &sheet_json)?;

        let rejected_path =
            rejected_dir.join(combo_file_name(&story.story_id, character_id, "jsonl"));
        let mut rejected_out = run.jsonl_line();
        rejected_out.push('\n');
        for rejected in &result.rejected {
            rejected_out.push_str(&serde_json::to_string(rejected)?);
            rejected_out.push('\n');
        }
        write_file(&rejected_path, &rejected_out)?;

        println!(
            "wrote {} ({} statements, {} rejected)",
            sheet_path.display(),
            result.sheet.statements().count(),
            result.rejected.len()
        );
    }
    Ok(ExitStatus::Clean)
}
