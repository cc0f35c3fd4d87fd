//! End-to-end sheet construction: snippets x questions fan out to the
//! generation and validation stages, results merge deterministically, and
//! the survivors are assembled into a character sheet.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::backend::{Backend, DEFAULT_IN_FLIGHT_CAP};
use crate::corpus::{story_snippets, Story, DEFAULT_SNIPPET_BUDGET};
use crate::error::{Error, Result};
use crate::generation::{generate_statements, question_registry, Statement};
use crate::prompts::TEMPLATE_VERSION;
use crate::sheet::{assemble_sheet, CharacterSheet, DedupConfig, SheetProvenance};
use crate::validation::{
    validate_statements, RejectedStatement, ValidationBackends, ValidationConfig,
};

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub validation: ValidationConfig,
    pub only_role: bool,
    pub dedup: DedupConfig,
    pub snippet_budget: usize,
    /// Entries at or below this word count are skipped when set.
    pub min_entry_words: Option<usize>,
    /// Worker threads for the per-(snippet, question) fan-out.
    pub concurrency: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            validation: ValidationConfig::default(),
            only_role: false,
            dedup: DedupConfig::default(),
            snippet_budget: DEFAULT_SNIPPET_BUDGET,
            min_entry_words: None,
            concurrency: DEFAULT_IN_FLIGHT_CAP,
        }
    }
}

#[derive(Clone, Copy)]
pub struct PipelineBackends<'a> {
    pub generator: &'a dyn Backend,
    pub validation: ValidationBackends<'a>,
}

/// Sheet plus everything validation filtered out, in generation order.
#[derive(Debug, Serialize)]
pub struct SheetBuildResult {
    pub sheet: CharacterSheet,
    pub rejected: Vec<RejectedStatement>,
}

/// Applies `f` to every item on up to `workers` threads, returning results
/// in input order. Worker threads pull the next unclaimed index, so output
/// never depends on scheduling.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                if index >= items.len() {
                    break;
                }
                let result = f(&items[index]);
                *slots[index].lock().expect("slot poisoned") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .expect("slot poisoned")
                .expect("every index was claimed")
        })
        .collect()
}

/// Generates, validates, and assembles one character's sheet. Generation
/// failures abort the build; validation failures reject the individual
/// statement and are reported alongside the sheet.
pub fn build_character_sheet(
    backends: PipelineBackends<'_>,
    story: &Story,
    character_id: &str,
    config: &PipelineConfig,
) -> Result<SheetBuildResult> {
    let character = story.character(character_id).ok_or_else(|| {
        Error::InvalidInput(format!(
            "story {} has no character {character_id}",
            story.story_id
        ))
    })?;

    let mut snippets = story_snippets(story, config.snippet_budget, config.min_entry_words);
    if config.only_role {
        // assemble_sheet would drop these statements anyway; skipping the
        // snippets up front avoids paying for their backend calls.
        let positions: std::collections::HashMap<&str, usize> = story
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.entry_id.as_str(), i))
            .collect();
        snippets.retain(|s| {
            positions
                .get(s.entry_id.as_str())
                .map(|&i| story.entries[i].perspective_character == *character_id)
                .unwrap_or(false)
        });
    }

    let units: Vec<(usize, &'static str)> = snippets
        .iter()
        .enumerate()
        .flat_map(|(i, _)| question_registry().iter().map(move |q| (i, q.question_id)))
        .collect();

    let generator_model = backends.generator.id().to_string();
    let outcomes = parallel_map(
        &units,
        config.concurrency,
        |&(snippet_index, question_id)| {
            let snippet = &snippets[snippet_index];
            let question = crate::generation::question_by_id(question_id)
                .expect("work units are built from the registry");
            let statements = generate_statements(
                backends.generator,
                snippet,
                &character.canonical_name,
                question,
                &generator_model,
            )?;
            validate_statements(
                backends.validation,
                &statements,
                &snippet.text,
                &character.canonical_name,
                &config.validation,
            )
        },
    );

    let mut accepted: Vec<Statement> = Vec::new();
    let mut rejected: Vec<RejectedStatement> = Vec::new();
    for outcome in outcomes {
        let outcome = outcome?;
        accepted.extend(outcome.accepted.into_iter().map(|v| v.statement));
        rejected.extend(outcome.rejected);
    }

    let provenance = SheetProvenance {
        policy: config.validation.policy.id().to_string(),
        reasoning_mode: config.validation.reasoning_mode.id().to_string(),
        only_role: config.only_role,
        dedup_threshold: config.dedup.threshold,
        generator_model,
        template_version: TEMPLATE_VERSION.to_string(),
    };
    let sheet = assemble_sheet(
        story,
        character,
        &accepted,
        config.only_role,
        &config.dedup,
        provenance,
    )?;
    Ok(SheetBuildResult { sheet, rejected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::corpus::{Character, Entry, SceneFlags, StoryMetadata};
    use std::collections::BTreeSet;
    use std::sync::atomic::AtomicUsize;

    fn story() -> Story {
        let body = |lead: &str| {
            format!(
                "{lead} The hallway smelled of wax and old smoke while the \
                 household slept upstairs. Nadia counted the doors twice and \
                 kept her hand near the lamp, because the third door had a \
                 habit of standing open when nobody admitted to touching it."
            )
        };
        let mut story = Story {
            story_id: "story-1".to_string(),
            title: "The Third Door".to_string(),
            metadata: StoryMetadata::default(),
            characters: vec![
                Character {
                    character_id: "char-nadia".to_string(),
                    canonical_name: "Nadia".to_string(),
                    aliases: vec![],
                    appearance_count: 0,
                },
                Character {
                    character_id: "char-jacob".to_string(),
                    canonical_name: "Jacob".to_string(),
                    aliases: vec![],
                    appearance_count: 0,
                },
            ],
            entries: vec![
                Entry {
                    entry_id: "entry-1".to_string(),
                    scene_id: "scene-1".to_string(),
                    perspective_character: "char-nadia".to_string(),
                    text: body("Nadia tightened the strap of her satchel."),
                    word_count: 0,
                    scene_flags: SceneFlags::default(),
                },
                Entry {
                    entry_id: "entry-2".to_string(),
                    scene_id: "scene-1".to_string(),
                    perspective_character: "char-jacob".to_string(),
                    text: body("Jacob waited by the stairwell, listening."),
                    word_count: 0,
                    scene_flags: SceneFlags::default(),
                },
            ],
        };
        story.normalize();
        story
    }

    #[test]
    fn parallel_map_preserves_input_order() {
        let items: Vec<usize> = (0..100).collect();
        let results = parallel_map(&items, 8, |&i| i * 3);
        let expected: Vec<usize> = (0..100).map(|i| i * 3).collect();
        assert_eq!(results, expected);
    }

    #[test]
    fn parallel_map_handles_edge_worker_counts() {
        let items = vec![1, 2, 3];
        assert_eq!(parallel_map(&items, 0, |&i| i), items);
        assert_eq!(parallel_map(&items, 64, |&i| i), items);
        let empty: Vec<i32> = Vec::new();
        assert!(parallel_map(&empty, 4, |&i| i).is_empty());
    }

    #[test]
    fn parallel_map_runs_concurrently() {
        let in_flight = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        let items: Vec<usize> = (0..16).collect();
        parallel_map(&items, 4, |_| {
            let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_millis(10));
            in_flight.fetch_sub(1, Ordering::SeqCst);
        });
        assert!(peak.load(Ordering::SeqCst) > 1, "never ran in parallel");
    }

    #[test]
    fn build_produces_a_complete_sheet() {
        let backend = MockBackend::new().with_constant_label(5);
        let story = story();
        let result = build_character_sheet(
            PipelineBackends {
                generator: &backend,
                validation: ValidationBackends {
                    reasoning: &backend,
                    scorer: &backend,
                },
            },
            &story,
            "char-nadia",
            &PipelineConfig::default(),
        )
        .unwrap();
        let sheet = &result.sheet;
        assert_eq!(sheet.story_id, "story-1");
        assert_eq!(sheet.character_name, "Nadia");
        assert_eq!(sheet.categories.len(), 4);
        let question_count: usize = sheet.categories.iter().map(|c| c.questions.len()).sum();
        assert_eq!(question_count, 8);
        assert!(sheet.statements().next().is_some(), "mock accepted nothing");
        assert_eq!(sheet.provenance.policy, "eq5");
        assert_eq!(sheet.provenance.generator_model, "mock");
    }

    #[test]
    fn rejections_surface_with_the_sheet() {
        let backend = MockBackend::new().with_constant_label(3);
        let story = story();
        let result = build_character_sheet(
            PipelineBackends {
                generator: &backend,
                validation: ValidationBackends {
                    reasoning: &backend,
                    scorer: &backend,
                },
            },
            &story,
            "char-nadia",
            &PipelineConfig::default(),
        )
        .unwrap();
        assert!(result.sheet.statements().next().is_none());
        assert!(!result.rejected.is_empty());
    }

    #[test]
    fn concurrency_level_never_changes_the_sheet() {
        let story = story();
        let build = |workers: usize| {
            let backend = MockBackend::new().with_constant_label(5);
            let result = build_character_sheet(
                PipelineBackends {
                    generator: &backend,
                    validation: ValidationBackends {
                        reasoning: &backend,
                        scorer: &backend,
                    },
                },
                &story,
                "char-nadia",
                &PipelineConfig {
                    concurrency: workers,
                    ..PipelineConfig::default()
                },
            )
            .unwrap();
            serde_json::to_string(&result.sheet).unwrap()
        };
        let serial = build(1);
        assert_eq!(serial, build(4));
        assert_eq!(serial, build(13));
    }

    #[test]
    fn only_role_uses_only_perspective_entries() {
        let backend = MockBackend::new().with_constant_label(5);
        let story = story();
        let result = build_character_sheet(
            PipelineBackends {
                generator: &backend,
                validation: ValidationBackends {
                    reasoning: &backend,
                    scorer: &backend,
                },
            },
            &story,
            "char-nadia",
            &PipelineConfig {
                only_role: true,
                ..PipelineConfig::default()
            },
        )
        .unwrap();
        let entry_ids: BTreeSet<&str> = result
            .sheet
            .statements()
            .map(|s| s.entry_id.as_str())
            .collect();
        assert!(entry_ids.contains("entry-1"));
        assert!(!entry_ids.contains("entry-2"));
        assert!(result.sheet.provenance.only_role);
    }

    #[test]
    fn unknown_character_is_rejected() {
        let backend = MockBackend::new();
        let err = build_character_sheet(
            PipelineBackends {
                generator: &backend,
                validation: ValidationBackends {
                    reasoning: &backend,
                    scorer: &backend,
                },
            },
            &story(),
            "char-ghost",
            &PipelineConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }
}
