use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Context;

use chiron_core::corpus::{filter_stories, load_stories_jsonl, FilterConfig};
use chiron_core::prediction::{
    build_tasks, predict_assignment, render_accuracy_report, score_accuracy, summarize_character,
    PredictionOracle, TaskArtifacts, TaskConfig,
};
use chiron_core::validation::ValidationBackends;
use chiron_core::{
    build_character_sheet, Backend, Category, CharacterSheet, MockBackend, PipelineBackends,
    PipelineConfig, Setting, Story,
};

use crate::commands::{create_dir, write_file, ExitStatus};
use crate::config::{build_backend, BackendArgs, PipelineArgs, RunConfig};

#[derive(Debug, clap::Args)]
pub struct PredictArgs {
    /// Story corpus (JSONL); the masked-prediction filter preset applies.
    #[arg(long)]
    pub corpus: PathBuf,

    /// Output directory for tasks.jsonl, outcomes.jsonl, accuracy.txt.
    #[arg(long)]
    pub out: PathBuf,

    /// Information setting: no-information, character-summary, entire-sheet, or agreed.
    #[arg(long, default_value = "no-information")]
    pub setting: String,

    /// Categories for the agreed setting (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub categories: Vec<Category>,

    #[command(flatten)]
    pub backend: BackendArgs,

    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

fn parse_setting(name: &str, categories: &[Category]) -> anyhow::Result<Setting> {
    let setting = match name {
        "no-information" => Setting::NoInformation,
        "character-summary" => Setting::CharacterSummary,
        "entire-sheet" => Setting::EntireSheet,
        "agreed" => {
            if categories.is_empty() {
                return Err(chiron_core::Error::Config(
                    "the agreed setting needs --categories".to_string(),
                )
                .into());
            }
            Setting::Agreed(categories.to_vec())
        }
        other => {
            return Err(chiron_core::Error::Config(format!("unknown setting: {other:?}")).into())
        }
    };
    Ok(setting)
}

pub fn run(args: &PredictArgs) -> anyhow::Result<ExitStatus> {
    let setting = parse_setting(&args.setting, &args.categories)?;
    let filter = FilterConfig::masked_prediction();
    let stories = load_stories_jsonl(&args.corpus)
        .with_context(|| format!("loading {}", args.corpus.display()))?;
    let stories = filter_stories(stories, &filter);

    let task_config = TaskConfig {
        seed: args.pipeline.seed,
        snippet_budget: args.pipeline.budget,
        min_entry_words: filter.min_entry_words,
    };
    let tasks = build_tasks(&stories, &task_config)?;
    let run = RunConfig::new(&args.corpus, Some(&args.backend), &args.pipeline);

    create_dir(&args.out)?;
    let mut tasks_out = run.jsonl_line();
    tasks_out.push('\n');
    for task in &tasks {
        tasks_out.push_str(&serde_json::to_string(task)?);
        tasks_out.push('\n');
    }
    write_file(&args.out.join("tasks.jsonl"), &tasks_out)?;

    if tasks.is_empty() {
        write_file(&args.out.join("outcomes.jsonl"), &(run.jsonl_line() + "\n"))?;
        println!("no masked tasks produced from {}", args.corpus.display());
        return Ok(ExitStatus::Partial);
    }

    // The oracle scores straight from the gold maps; artifact prompts (sheets,
    // summaries) still need a general-purpose backend, so it pairs with mock.
    let oracle;
    let generic;
    let mock;
    let (score_backend, artifact_backend): (&dyn Backend, &dyn Backend) =
        if args.backend.backend == "oracle" {
            oracle = PredictionOracle::from_tasks(&tasks);
            mock = MockBackend::new();
            (&oracle, &mock)
        } else {
            generic = build_backend(&args.backend, &args.out)?;
            (generic.as_ref(), generic.as_ref())
        };
    let validation = ValidationBackends {
        reasoning: artifact_backend,
        scorer: artifact_backend,
    };
    let artifact_backends = PipelineBackends {
        generator: artifact_backend,
        validation,
    };
    let validation_config = args.pipeline.validation_config();
    let pipeline_config = PipelineConfig {
        validation: validation_config,
        only_role: args.pipeline.only_role,
        dedup: args.pipeline.dedup_config()?,
        snippet_budget: args.pipeline.budget,
        min_entry_words: None,
        concurrency: args.backend.concurrency,
    };

    let story_by_id: BTreeMap<&str, &Story> =
        stories.iter().map(|s| (s.story_id.as_str(), s)).collect();
    let needs_sheets = matches!(setting, Setting::EntireSheet | Setting::Agreed(_));
    let needs_summaries = matches!(setting, Setting::CharacterSummary);
    let mut sheets_by_story: BTreeMap<String, BTreeMap<String, CharacterSheet>> = BTreeMap::new();

    let mut outcomes = Vec::with_capacity(tasks.len());
    for task in &tasks {
        let story = story_by_id.get(task.story_id.as_str()).ok_or_else(|| {
            chiron_core::Error::Contract(format!("task references unknown story {}", task.story_id))
        })?;

        let mut artifacts = TaskArtifacts::default();
        if needs_sheets {
            if !sheets_by_story.contains_key(&task.story_id) {
                let mut sheets = BTreeMap::new();
                for character in &task.characters {
                    let result = build_character_sheet(
                        artifact_backends,
                        story,
                        &character.character_id,
                        &pipeline_config,
                    )?;
                    sheets.insert(character.character_id.clone(), result.sheet);
                }
                sheets_by_story.insert(task.story_id.clone(), sheets);
            }
            artifacts.sheets = sheets_by_story[&task.story_id].clone();
        }
        if needs_summaries {
            let position = story.entry_position(&task.entry_id).ok_or_else(|| {
                chiron_core::Error::Contract(format!(
                    "task references unknown entry {}/{}",
                    task.story_id, task.entry_id
                ))
            })?;
            let story_so_far = story.entries[..position]
                .iter()
                .map(|e| e.text.as_str())
                .collect::<Vec<_>>()
                .join("\n\n");
            for character in &task.characters {
                // A first-entry task has no story before it to summarize.
                let summary = if story_so_far.trim().is_empty() {
                    log::info!(
                        "{}/{}: empty story-so-far, using empty summary",
                        task.story_id,
                        task.entry_id
                    );
                    String::new()
                } else {
                    summarize_character(
                        artifact_backend,
                        validation,
                        &story_so_far,
                        &character.canonical_name,
                        &validation_config,
                    )?
                };
                artifacts
                    .summaries
                    .insert(character.character_id.clone(), summary);
            }
        }

        outcomes.push(predict_assignment(
            score_backend,
            task,
            &setting,
            &artifacts,
            args.pipeline.only_role,
        )?);
    }

    let mut outcomes_out = run.jsonl_line();
    outcomes_out.push('\n');
    for outcome in &outcomes {
        outcomes_out.push_str(&serde_json::to_string(outcome)?);
        outcomes_out.push('\n');
    }
    write_file(&args.out.join("outcomes.jsonl"), &outcomes_out)?;

    let rows = score_accuracy(&outcomes)?;
    let table = render_accuracy_report(&rows);
    write_file(
        &args.out.join("accuracy.txt"),
        &format!("{}{}", run.text_header(), table),
    )?;

    println!("{} tasks from {} stories", tasks.len(), story_by_id.len());
    print!("{table}");
    let invalid = outcomes.iter().filter(|o| !o.valid).count();
    if invalid > 0 {
        log::warn!("{invalid} tasks failed scoring and were excluded from accuracy");
        return Ok(ExitStatus::Partial);
    }
    Ok(ExitStatus::Clean)
}
