//! Deterministic synthetic inputs for the pipeline benchmarks. Everything
//! is seeded so successive runs measure the same work.

use std::collections::BTreeMap;

use chiron_core::corpus::{Entry, SceneFlags, StoryMetadata};
use chiron_core::validation::AnnotationRecord;
use chiron_core::{Character, Story};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NOUNS: [&str; 16] = [
    "lantern", "ledger", "harbor", "cellar", "anchor", "orchard", "bell", "tide", "rook", "gull",
    "mast", "chalk", "sparrow", "loft", "ferry", "granary",
];
const VERBS: [&str; 10] = [
    "hums", "creaks", "turns", "waits", "settles", "drifts", "counts", "signals", "burns", "holds",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sentence(rng: &mut ChaCha8Rng) -> String {
    format!(
        "The {} near the {} {} while the {} {}.",
        NOUNS[rng.gen_range(0..NOUNS.len())],
        NOUNS[rng.gen_range(0..NOUNS.len())],
        VERBS[rng.gen_range(0..VERBS.len())],
        NOUNS[rng.gen_range(0..NOUNS.len())],
        VERBS[rng.gen_range(0..VERBS.len())]
    )
}

pub fn paragraph(rng: &mut ChaCha8Rng, sentences: usize) -> String {
    (0..sentences)
        .map(|_| sentence(rng))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Multi-paragraph prose, roughly `paragraphs * sentences * 9` words.
pub fn prose(rng: &mut ChaCha8Rng, paragraphs: usize, sentences: usize) -> String {
    (0..paragraphs)
        .map(|_| paragraph(rng, sentences))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn characters() -> Vec<Character> {
    let spec: [(&str, &str, &[&str]); 3] = [
        ("char-nadia", "Nadia", &["Nadia Volkov"]),
        ("char-jacob", "Jacob", &[]),
        ("char-jayson", "Jayson", &["Jay"]),
    ];
    spec.iter()
        .map(|(id, name, aliases)| Character {
            character_id: id.to_string(),
            canonical_name: name.to_string(),
            aliases: aliases.iter().map(|a| a.to_string()).collect(),
            appearance_count: 0,
        })
        .collect()
}

pub fn gold_map() -> BTreeMap<String, usize> {
    [("char-nadia", 0), ("char-jacob", 1), ("char-jayson", 2)]
        .into_iter()
        .map(|(id, mask)| (id.to_string(), mask))
        .collect()
}

/// Prose salted with character names so masking has real work to do.
pub fn named_prose(rng: &mut ChaCha8Rng, paragraphs: usize, sentences: usize) -> String {
    let names = ["Nadia", "Nadia Volkov", "Jacob", "Jayson", "Jay"];
    let mut text = prose(rng, paragraphs, sentences);
    for _ in 0..(paragraphs * sentences / 2) {
        let name = names[rng.gen_range(0..names.len())];
        let at = text.find(". ").map(|i| i + 2).unwrap_or(0);
        text.insert_str(at, &format!("{name} watched the water. "));
    }
    text
}

pub fn story(rng: &mut ChaCha8Rng, entries: usize) -> Story {
    let characters = characters();
    let entries = (0..entries)
        .map(|i| Entry {
            entry_id: format!("e{i}"),
            scene_id: format!("scene-{}", i / 4),
            perspective_character: characters[i % characters.len()].character_id.clone(),
            text: prose(rng, 3, 8),
            word_count: 0,
            scene_flags: SceneFlags::default(),
        })
        .collect();
    let mut story = Story {
        story_id: "bench-story".to_string(),
        title: "Bench Story".to_string(),
        metadata: StoryMetadata::default(),
        entries,
        characters,
    };
    story.normalize();
    story
}

/// Statement list with a controlled share of near-duplicates.
pub fn statements(rng: &mut ChaCha8Rng, count: usize) -> Vec<String> {
    let mut texts: Vec<String> = Vec::with_capacity(count);
    for _ in 0..count {
        if !texts.is_empty() && rng.gen_bool(0.3) {
            let base = texts[rng.gen_range(0..texts.len())].clone();
            let mut words: Vec<String> = base.split_whitespace().map(str::to_string).collect();
            let at = rng.gen_range(0..words.len());
            words[at] = NOUNS[rng.gen_range(0..NOUNS.len())].to_string();
            texts.push(words.join(" "));
        } else {
            texts.push(sentence(rng));
        }
    }
    texts
}

pub fn annotations(rng: &mut ChaCha8Rng, units: usize, annotators: usize) -> Vec<AnnotationRecord> {
    let names = ["a", "b", "c", "d", "e"];
    (0..units)
        .map(|u| AnnotationRecord {
            story_id: "bench-story".to_string(),
            entry_id: format!("e{u}"),
            snippet_index: 0,
            character: "Nadia".to_string(),
            statement: format!("statement {u}"),
            labels: names[..annotators.min(names.len())]
                .iter()
                .map(|&name| (name.to_string(), rng.gen_range(1..=5)))
                .collect(),
            source_model: "bench".to_string(),
        })
        .collect()
}
