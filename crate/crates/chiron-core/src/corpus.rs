//! Story corpus: schema types, metadata filters, snippet splitting, and
//! rule-based sentence splitting.
//!
//! Corpora are JSONL, one [`Story`] per line. Unknown fields are ignored on
//! load; word counts and appearance counts are recomputed so downstream code
//! never depends on values supplied in the file.

use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default word budget for one snippet.
pub const DEFAULT_SNIPPET_BUDGET: usize = 350;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Story {
    pub story_id: String,
    pub title: String,
    #[serde(default)]
    pub metadata: StoryMetadata,
    #[serde(default)]
    pub entries: Vec<Entry>,
    #[serde(default)]
    pub characters: Vec<Character>,
}

/// Story-level metadata used by the corpus filters. Every field is optional
/// so that a missing field can be reported as a rejection reason instead of
/// failing deserialization.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StoryMetadata {
    pub play_style: Option<String>,
    pub speed: Option<String>,
    pub suspended: Option<bool>,
    pub is_nsfw: Option<bool>,
    pub language: Option<String>,
    pub finished: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Entry {
    pub entry_id: String,
    pub scene_id: String,
    /// Character id of the entry's point-of-view character.
    pub perspective_character: String,
    pub text: String,
    /// Whitespace-token count of `text`; recomputed on load.
    #[serde(default)]
    pub word_count: usize,
    #[serde(default)]
    pub scene_flags: SceneFlags,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct SceneFlags {
    pub is_ended: bool,
    pub is_final: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Character {
    pub character_id: String,
    pub canonical_name: String,
    /// Surface forms the character is referred to by; always contains
    /// `canonical_name`.
    #[serde(default)]
    pub aliases: Vec<String>,
    /// Number of entries told from this character's perspective; recomputed
    /// on load.
    #[serde(default)]
    pub appearance_count: usize,
}

/// A contiguous run of paragraphs from one entry, sized to a word budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snippet {
    pub story_id: String,
    pub entry_id: String,
    pub snippet_index: usize,
    /// Perspective character of the entry this snippet came from.
    pub focus_character: String,
    pub text: String,
    /// Inclusive (first, last) paragraph indices within the entry.
    pub paragraph_span: (usize, usize),
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

impl Story {
    pub fn total_words(&self) -> usize {
        self.entries.iter().map(|e| e.word_count).sum()
    }

    /// Recompute derived fields: entry word counts, alias lists containing
    /// the canonical name, and per-character appearance counts.
    pub fn normalize(&mut self) {
        for entry in &mut self.entries {
            entry.word_count = word_count(&entry.text);
        }
        for ch in &mut self.characters {
            if !ch.aliases.iter().any(|a| a == &ch.canonical_name) {
                ch.aliases.insert(0, ch.canonical_name.clone());
            }
            ch.appearance_count = self
                .entries
                .iter()
                .filter(|e| e.perspective_character == ch.character_id)
                .count();
        }
    }

    pub fn character(&self, id: &str) -> Option<&Character> {
        self.characters.iter().find(|c| c.character_id == id)
    }

    /// Position of an entry in the story, used as the outer sort key when
    /// ordering snippets and statements.
    pub fn entry_position(&self, entry_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.entry_id == entry_id)
    }

    /// A story is finished when its metadata says so, or failing that when
    /// the last entry closes a final scene.
    pub fn is_finished(&self) -> Option<bool> {
        self.metadata.finished.or_else(|| {
            self.entries
                .last()
                .map(|e| e.scene_flags.is_ended && e.scene_flags.is_final)
        })
    }
}

/// Read a corpus from JSONL. Errors carry the 1-based line number.
pub fn load_stories_jsonl(path: &Path) -> Result<Vec<Story>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut stories = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut story: Story = serde_json::from_str(&line).map_err(|source| Error::JsonLine {
            line: idx + 1,
            source,
        })?;
        story.normalize();
        for entry in &story.entries {
            if story.character(&entry.perspective_character).is_none() {
                return Err(Error::InvalidInput(format!(
                    "line {}: entry {} has unknown perspective character {}",
                    idx + 1,
                    entry.entry_id,
                    entry.perspective_character
                )));
            }
        }
        stories.push(story);
    }
    Ok(stories)
}

// ---------------------------------------------------------------------------
// Filtering
// ---------------------------------------------------------------------------

/// Story-level filter predicates. The default configuration keeps stories in
/// a writing-focused play style, at a non-hardcore pace, unsuspended, safe
/// for work, in English, with more than 1000 words and more than 30 words
/// per entry on average.
///
/// The masked-prediction extras additionally require a finished story and
/// cap total length; `min_entry_words` is an entry-level bound consumed by
/// snippet splitting and task building rather than a story predicate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterConfig {
    pub allowed_play_styles: Vec<String>,
    pub banned_speed: Option<String>,
    pub require_not_suspended: bool,
    pub require_not_nsfw: bool,
    pub required_language: Option<String>,
    pub min_total_words: Option<usize>,
    pub min_avg_entry_words: Option<f64>,
    pub require_finished: bool,
    pub max_total_words: Option<usize>,
    pub min_entry_words: Option<usize>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            allowed_play_styles: vec!["writing".into(), "standard".into()],
            banned_speed: Some("Hardcore".into()),
            require_not_suspended: true,
            require_not_nsfw: true,
            required_language: Some("English".into()),
            min_total_words: Some(1000),
            min_avg_entry_words: Some(30.0),
            require_finished: false,
            max_total_words: None,
            min_entry_words: None,
        }
    }
}

impl FilterConfig {
    /// Extra constraints for masked-character prediction: finished stories,
    /// entries over 50 words, stories under 10000 words.
    pub fn masked_prediction() -> Self {
        FilterConfig {
            require_finished: true,
            max_total_words: Some(10_000),
            min_entry_words: Some(50),
            ..FilterConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RejectionReason {
    MissingMetadata(String),
    PlayStyle(String),
    Speed(String),
    Suspended,
    Nsfw,
    Language(String),
    TooFewWords(usize),
    TooManyWords(usize),
    AvgEntryWordsTooLow(f64),
    NotFinished,
}

impl std::fmt::Display for RejectionReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectionReason::MissingMetadata(field) => write!(f, "missing-metadata:{field}"),
            RejectionReason::PlayStyle(v) => write!(f, "play-style:{v}"),
            RejectionReason::Speed(v) => write!(f, "speed:{v}"),
            RejectionReason::Suspended => write!(f, "suspended"),
            RejectionReason::Nsfw => write!(f, "nsfw"),
            RejectionReason::Language(v) => write!(f, "language:{v}"),
            RejectionReason::TooFewWords(n) => write!(f, "too-few-words:{n}"),
            RejectionReason::TooManyWords(n) => write!(f, "too-many-words:{n}"),
            RejectionReason::AvgEntryWordsTooLow(v) => write!(f, "avg-entry-words:{v:.1}"),
            RejectionReason::NotFinished => write!(f, "not-finished"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rejection {
    pub story_id: String,
    pub reason: RejectionReason,
}

/// Why a story failed the filter, or None if it passes. First failing
/// predicate wins; predicates are checked in config order.
fn rejection_for(story: &Story, config: &FilterConfig) -> Option<RejectionReason> {
    let md = &story.metadata;
    if !config.allowed_play_styles.is_empty() {
        match &md.play_style {
            None => return Some(RejectionReason::MissingMetadata("play_style".into())),
            Some(style) if !config.allowed_play_styles.contains(style) => {
                return Some(RejectionReason::PlayStyle(style.clone()))
            }
            _ => {}
        }
    }
    if let Some(banned) = &config.banned_speed {
        match &md.speed {
            None => return Some(RejectionReason::MissingMetadata("speed".into())),
            Some(speed) if speed == banned => return Some(RejectionReason::Speed(speed.clone())),
            _ => {}
        }
    }
    if config.require_not_suspended {
        match md.suspended {
            None => return Some(RejectionReason::MissingMetadata("suspended".into())),
            Some(true) => return Some(RejectionReason::Suspended),
            Some(false) => {}
        }
    }
    if config.require_not_nsfw {
        match md.is_nsfw {
            None => return Some(RejectionReason::MissingMetadata("is_nsfw".into())),
            Some(true) => return Some(RejectionReason::Nsfw),
            Some(false) => {}
        }
    }
    if let Some(required) = &config.required_language {
        match &md.language {
            None => return Some(RejectionReason::MissingMetadata("language".into())),
            Some(lang) if lang != required => return Some(RejectionReason::Language(lang.clone())),
            _ => {}
        }
    }
    let total = story.total_words();
    if let Some(min) = config.min_total_words {
        if total <= min {
            return Some(RejectionReason::TooFewWords(total));
        }
    }
    if let Some(max) = config.max_total_words {
        if total >= max {
            return Some(RejectionReason::TooManyWords(total));
        }
    }
    if let Some(min_avg) = config.min_avg_entry_words {
        let avg = if story.entries.is_empty() {
            0.0
        } else {
            total as f64 / story.entries.len() as f64
        };
        if avg <= min_avg {
            return Some(RejectionReason::AvgEntryWordsTooLow(avg));
        }
    }
    if config.require_finished {
        match story.is_finished() {
            None => return Some(RejectionReason::MissingMetadata("finished".into())),
            Some(false) => return Some(RejectionReason::NotFinished),
            Some(true) => {}
        }
    }
    None
}

/// Keep stories satisfying every enabled predicate; rejected stories are
/// returned alongside with a reason code.
pub fn filter_stories_with_reasons(
    stories: Vec<Story>,
    config: &FilterConfig,
) -> (Vec<Story>, Vec<Rejection>) {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for story in stories {
        match rejection_for(&story, config) {
            None => kept.push(story),
            Some(reason) => {
                log::debug!("filtered out story {}: {}", story.story_id, reason);
                rejected.push(Rejection {
                    story_id: story.story_id.clone(),
                    reason,
                });
            }
        }
    }
    (kept, rejected)
}

pub fn filter_stories(stories: Vec<Story>, config: &FilterConfig) -> Vec<Story> {
    filter_stories_with_reasons(stories, config).0
}

// ---------------------------------------------------------------------------
// Snippet splitting
// ---------------------------------------------------------------------------

/// Paragraphs of an entry: blank-line-delimited blocks, inner newlines kept.
fn paragraphs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line.trim_end());
        }
    }
    if !current.is_empty() {
        out.push(current.join("\n"));
    }
    out
}

/// Split one entry into snippets by greedy paragraph accumulation.
///
/// A snippet closes when adding the next paragraph would push it past
/// `budget` words; a single paragraph longer than the budget becomes its own
/// snippet. Paragraphs are never split, so concatenating the snippets in
/// order reproduces the entry's paragraph sequence. A whitespace-only entry
/// yields no snippets.
pub fn split_entry(story_id: &str, entry: &Entry, budget: usize) -> Vec<Snippet> {
    let budget = budget.max(1);
    let paras = paragraphs(&entry.text);
    let mut snippets: Vec<Snippet> = Vec::new();
    let mut start = 0usize;
    let mut words = 0usize;
    let flush = |start: usize, end: usize, snippets: &mut Vec<Snippet>| {
        let text = paras[start..=end].join("\n\n");
        snippets.push(Snippet {
            story_id: story_id.to_string(),
            entry_id: entry.entry_id.clone(),
            snippet_index: snippets.len(),
            focus_character: entry.perspective_character.clone(),
            text,
            paragraph_span: (start, end),
        });
    };
    for (i, para) in paras.iter().enumerate() {
        let para_words = word_count(para);
        if (i > start || words > 0) && words + para_words > budget {
            flush(start, i - 1, &mut snippets);
            start = i;
            words = 0;
        }
        words += para_words;
    }
    if start < paras.len() {
        flush(start, paras.len() - 1, &mut snippets);
    }
    snippets
}

/// All snippets of a story in (entry order, snippet index) order. Entries
/// below `min_entry_words` are skipped when the bound is set.
pub fn story_snippets(
    story: &Story,
    budget: usize,
    min_entry_words: Option<usize>,
) -> Vec<Snippet> {
    let mut out = Vec::new();
    for entry in &story.entries {
        if let Some(min) = min_entry_words {
            if entry.word_count <= min {
                continue;
            }
        }
        out.extend(split_entry(&story.story_id, entry, budget));
    }
    out
}

// ---------------------------------------------------------------------------
// Character selection
// ---------------------------------------------------------------------------

/// Top `k` characters by appearance count, ties broken by ascending
/// character id. Returns fewer than `k` when the story has fewer characters.
pub fn select_top_characters(story: &Story, k: usize) -> Vec<Character> {
    let mut chars: Vec<&Character> = story.characters.iter().collect();
    chars.sort_by(|a, b| {
        b.appearance_count
            .cmp(&a.appearance_count)
            .then_with(|| a.character_id.cmp(&b.character_id))
    });
    chars.into_iter().take(k).cloned().collect()
}

// ---------------------------------------------------------------------------
// Sentence splitting
// ---------------------------------------------------------------------------

const ABBREVIATIONS: &str = include_str!("../assets/abbreviations.txt");

fn abbreviation_set() -> &'static BTreeSet<String> {
    static SET: OnceLock<BTreeSet<String>> = OnceLock::new();
    SET.get_or_init(|| {
        ABBREVIATIONS
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.trim_end_matches('.').to_ascii_lowercase())
            .collect()
    })
}

fn is_closing(c: char) -> bool {
    matches!(c, '"' | '\'' | '\u{201d}' | '\u{2019}' | ')' | ']')
}

fn is_opening_quote(c: char) -> bool {
    matches!(c, '"' | '\'' | '\u{201c}' | '\u{2018}')
}

/// The token immediately before byte position `end`, lowercased and without
/// its trailing period: used for the abbreviation guard.
fn token_before(text: &str, end: usize) -> String {
    let mut start = end;
    for (i, c) in text[..end].char_indices().rev() {
        if c.is_alphanumeric() || c == '.' || c == '\'' {
            start = i;
        } else {
            break;
        }
    }
    text[start..end].trim_end_matches('.').to_ascii_lowercase()
}

/// Rule-based sentence splitter.
///
/// A sentence ends at `.`, `!`, `?`, or an ellipsis when the terminator
/// (plus any closing quotes or brackets) is followed by whitespace and then
/// an uppercase letter or an opening quote, or by end of input. A single
/// period is not a boundary when the preceding token is on the abbreviation
/// list or is a single-letter initial. Output sentences are trimmed; their
/// concatenation preserves every non-whitespace character of the input.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut sentence_start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if !matches!(c, '.' | '!' | '?' | '\u{2026}') {
            i += 1;
            continue;
        }
        // Consume the whole terminator run ("...", "?!", ...).
        let run_start = i;
        let mut run_len = 0usize;
        while i < chars.len() && matches!(chars[i].1, '.' | '!' | '?' | '\u{2026}') {
            run_len += 1;
            i += 1;
        }
        let single_period = run_len == 1 && c == '.';
        if single_period {
            let tok = token_before(text, pos);
            let is_initial = tok.chars().count() == 1
                && text[..pos].chars().last().is_some_and(|p| p.is_uppercase());
            if abbreviation_set().contains(&tok) || is_initial {
                continue;
            }
        }
        // Closing quotes and brackets belong to the sentence.
        while i < chars.len() && is_closing(chars[i].1) {
            i += 1;
        }
        let end = if i < chars.len() {
            chars[i].0
        } else {
            text.len()
        };
        if i >= chars.len() {
            let s = text[sentence_start..end].trim();
            if !s.is_empty() {
                sentences.push(s.to_string());
            }
            sentence_start = end;
            continue;
        }
        // Boundary requires whitespace and then an uppercase or quote start.
        let mut j = i;
        while j < chars.len() && chars[j].1.is_whitespace() {
            j += 1;
        }
        let saw_ws = j > i;
        let next_ok = j >= chars.len()
            || (saw_ws && (chars[j].1.is_uppercase() || is_opening_quote(chars[j].1)));
        if next_ok {
            let s = text[sentence_start..end].trim();
            if !s.is_empty() {
                sentences.push(s.to_string());
            }
            sentence_start = end;
            i = j;
        } else {
            i = run_start + run_len.max(1);
        }
    }
    let tail = text[sentence_start..].trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

/// Total sentence count of a story's entry texts.
pub fn story_sentence_count(story: &Story) -> usize {
    story
        .entries
        .iter()
        .map(|e| split_sentences(&e.text).len())
        .sum()
}
