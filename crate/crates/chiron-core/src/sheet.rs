//! Character sheets: per-question concatenation of accepted statements,
//! TF-IDF cosine deduplication, and deterministic rendering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Character, Story};
use crate::error::{Error, Result};
use crate::generation::{question_registry, Category, Statement};

pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DedupConfig {
    pub threshold: f64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig {
            threshold: DEFAULT_DEDUP_THRESHOLD,
        }
    }
}

impl DedupConfig {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::Config(format!(
                "dedup threshold must be in (0, 1], got {threshold}"
            )));
        }
        Ok(DedupConfig { threshold })
    }
}

/// Lowercase tokens with punctuation stripped: maximal alphanumeric runs.
fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// TF-IDF vectors over one question's statement list. The space is fitted
/// once over the full list and never refit after removals.
struct TfIdfSpace {
    vectors: Vec<BTreeMap<String, f64>>,
    norms: Vec<f64>,
}

impl TfIdfSpace {
    fn fit<S: AsRef<str>>(texts: &[S]) -> Self {
        let docs: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t.as_ref())).collect();
        let n = docs.len();
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in &docs {
            let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
            seen.sort_unstable();
            seen.dedup();
            for token in seen {
                *df.entry(token).or_insert(0) += 1;
            }
        }
        let idf: BTreeMap<&str, f64> = df
            .iter()
            .map(|(token, count)| {
                let value = (((1 + n) as f64) / ((1 + count) as f64)).ln() + 1.0;
                (*token, value)
            })
            .collect();
        let mut vectors = Vec::with_capacity(n);
        let mut norms = Vec::with_capacity(n);
        for doc in &docs {
            let mut tf: BTreeMap<String, f64> = BTreeMap::new();
            for token in doc {
                *tf.entry(token.clone()).or_insert(0.0) += 1.0;
            }
            for (token, weight) in tf.iter_mut() {
                *weight *= idf[token.as_str()];
            }
            let norm = tf.values().map(|w| w * w).sum::<f64>().sqrt();
            vectors.push(tf);
            norms.push(norm);
        }
        TfIdfSpace { vectors, norms }
    }

    fn cosine(&self, i: usize, j: usize) -> f64 {
        if self.norms[i] == 0.0 || self.norms[j] == 0.0 {
            return 0.0;
        }
        let (small, large) = if self.vectors[i].len() <= self.vectors[j].len() {
            (&self.vectors[i], &self.vectors[j])
        } else {
            (&self.vectors[j], &self.vectors[i])
        };
        let mut dot = 0.0;
        for (token, weight) in small {
            if let Some(other) = large.get(token) {
                dot += weight * other;
            }
        }
        dot / (self.norms[i] * self.norms[j])
    }
}

/// Indices of statements to keep, scanning in order: a statement survives
/// iff its cosine with every earlier survivor is below the threshold.
pub fn dedup_indices<S: AsRef<str>>(texts: &[S], threshold: f64) -> Vec<usize> {
    let space = TfIdfSpace::fit(texts);
    let mut kept: Vec<usize> = Vec::new();
    for i in 0..texts.len() {
        if kept.iter().all(|&j| space.cosine(i, j) < threshold) {
            kept.push(i);
        }
    }
    kept
}

pub fn dedup_statements(statements: Vec<Statement>, config: &DedupConfig) -> Vec<Statement> {
    let texts: Vec<&str> = statements.iter().map(|s| s.text.as_str()).collect();
    let kept = dedup_indices(&texts, config.threshold);
    let mut kept_iter = kept.into_iter().peekable();
    statements
        .into_iter()
        .enumerate()
        .filter_map(|(i, s)| {
            if kept_iter.peek() == Some(&i) {
                kept_iter.next();
                Some(s)
            } else {
                None
            }
        })
        .collect()
}

/// Config snapshot stored inside every sheet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheetProvenance {
    pub policy: String,
    pub reasoning_mode: String,
    pub only_role: bool,
    pub dedup_threshold: f64,
    pub generator_model: String,
    pub template_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionStatements {
    pub question_id: String,
    pub question_text: String,
    pub statements: Vec<Statement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySheet {
    pub category: Category,
    pub questions: Vec<QuestionStatements>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterSheet {
    pub story_id: String,
    pub character_id: String,
    pub character_name: String,
    pub provenance: SheetProvenance,
    pub categories: Vec<CategorySheet>,
}

impl CharacterSheet {
    pub fn category(&self, category: Category) -> &CategorySheet {
        self.categories
            .iter()
            .find(|c| c.category == category)
            .expect("sheets always carry all four categories")
    }

    pub fn statements(&self) -> impl Iterator<Item = &Statement> {
        self.categories
            .iter()
            .flat_map(|c| c.questions.iter())
            .flat_map(|q| q.statements.iter())
    }
}

/// Assemble accepted statements into a sheet. Statements may arrive in any
/// order; they are sorted per question by (entry position, snippet index,
/// ordinal). With `only_role`, statements from snippets told from another
/// character's perspective are dropped before assembly.
pub fn assemble_sheet(
    story: &Story,
    character: &Character,
    statements: &[Statement],
    only_role: bool,
    dedup: &DedupConfig,
    provenance: SheetProvenance,
) -> Result<CharacterSheet> {
    let mut by_question: BTreeMap<&str, Vec<&Statement>> = BTreeMap::new();
    for statement in statements {
        if statement.story_id != story.story_id {
            return Err(Error::Contract(format!(
                "statement from story {:?} assembled into sheet for {:?}",
                statement.story_id, story.story_id
            )));
        }
        if statement.focus_character != character.canonical_name {
            return Err(Error::Contract(format!(
                "statement about {:?} assembled into sheet for {:?}",
                statement.focus_character, character.canonical_name
            )));
        }
        let entry_position = story.entry_position(&statement.entry_id).ok_or_else(|| {
            Error::Contract(format!(
                "statement references unknown entry {:?}",
                statement.entry_id
            ))
        })?;
        if only_role {
            let entry = &story.entries[entry_position];
            if entry.perspective_character != character.character_id {
                continue;
            }
        }
        by_question
            .entry(statement.question_id.as_str())
            .or_default()
            .push(statement);
    }
    let mut categories: Vec<CategorySheet> = Category::ALL
        .iter()
        .map(|&category| CategorySheet {
            category,
            questions: Vec::new(),
        })
        .collect();
    for question in question_registry() {
        let mut list: Vec<Statement> = by_question
            .remove(question.question_id)
            .unwrap_or_default()
            .into_iter()
            .cloned()
            .collect();
        list.sort_by_key(|s| {
            (
                story.entry_position(&s.entry_id).expect("checked above"),
                s.snippet_index,
                s.ordinal,
            )
        });
        let list = dedup_statements(list, dedup);
        let slot = categories
            .iter_mut()
            .find(|c| c.category == question.category)
            .expect("all categories present");
        slot.questions.push(QuestionStatements {
            question_id: question.question_id.to_string(),
            question_text: question.question_text.to_string(),
            statements: list,
        });
    }
    if let Some((question_id, _)) = by_question.into_iter().next() {
        return Err(Error::Contract(format!(
            "statement references unknown question {question_id:?}"
        )));
    }
    Ok(CharacterSheet {
        story_id: story.story_id.clone(),
        character_id: character.character_id.clone(),
        character_name: character.canonical_name.clone(),
        provenance,
        categories,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    Entire,
    Category(Category),
}

fn render_category(category: &CategorySheet, out: &mut String) {
    out.push_str("## ");
    out.push_str(category.category.label());
    out.push('\n');
    for question in &category.questions {
        out.push('\n');
        out.push_str("Question: ");
        out.push_str(&question.question_text);
        out.push('\n');
        for statement in &question.statements {
            out.push_str("- ");
            out.push_str(&statement.text);
            out.push('\n');
        }
    }
}

/// Plain-text sheet for downstream prompts: category header, question
/// texts, one statement per line. Byte-deterministic.
pub fn render_sheet(sheet: &CharacterSheet, mode: RenderMode) -> String {
    let mut out = String::new();
    match mode {
        RenderMode::Entire => {
            for (i, category) in sheet.categories.iter().enumerate() {
                if i > 0 {
                    out.push('\n');
                }
                render_category(category, &mut out);
            }
        }
        RenderMode::Category(wanted) => {
            render_category(sheet.category(wanted), &mut out);
        }
    }
    out
}

/// Statements are atomic sentences by construction, so sheet sentence
/// counts are statement counts.
pub fn sheet_sentence_count(sheet: &CharacterSheet) -> (BTreeMap<Category, usize>, usize) {
    let mut per_category = BTreeMap::new();
    let mut total = 0;
    for category in &sheet.categories {
        let count: usize = category.questions.iter().map(|q| q.statements.len()).sum();
        per_category.insert(category.category, count);
        total += count;
    }
    (per_category, total)
}
