//! Statement generation: category questions, raw answers, and the
//! simplification pass that decomposes answers into atomic statements.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, ChatRequest};
use crate::corpus::{split_sentences, Snippet};
use crate::error::{Error, Result};
use crate::prompts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Dialogue,
    PhysicalPersonality,
    Knowledge,
    Goals,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Dialogue,
        Category::PhysicalPersonality,
        Category::Knowledge,
        Category::Goals,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Category::Dialogue => "Dialogue",
            Category::PhysicalPersonality => "Physical/Personality",
            Category::Knowledge => "Knowledge",
            Category::Goals => "Goals",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let folded: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match folded.as_str() {
            "dialogue" => Ok(Category::Dialogue),
            "physicalpersonality" | "physical" | "personality" => Ok(Category::PhysicalPersonality),
            "knowledge" => Ok(Category::Knowledge),
            // "Plot" is the sheet-header alias for the goals category.
            "goals" | "plot" => Ok(Category::Goals),
            _ => Err(Error::Config(format!("unknown category: {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct QuestionSpec {
    pub category: Category,
    pub question_id: &'static str,
    pub question_text: &'static str,
    pub position: usize,
}

static REGISTRY: [QuestionSpec; 8] = [
    QuestionSpec {
        category: Category::Dialogue,
        question_id: "dialogue_speech",
        question_text: "What, if anything have we learned about how this character speaks from this snippet?",
        position: 0,
    },
    QuestionSpec {
        category: Category::PhysicalPersonality,
        question_id: "physical_descriptions",
        question_text: "What, if any, physical descriptions of this character are in this snippet?",
        position: 1,
    },
    QuestionSpec {
        category: Category::PhysicalPersonality,
        question_id: "personality_descriptions",
        question_text: "What, if any, descriptions of this character's personality are in this snippet?",
        position: 2,
    },
    QuestionSpec {
        category: Category::Knowledge,
        question_id: "knowledge_factual",
        question_text: "What, if any, factual information is given about this character in this snippet?",
        position: 3,
    },
    QuestionSpec {
        category: Category::Knowledge,
        question_id: "knowledge_learned",
        question_text: "What, if any, information has this character learned in this snippet?",
        position: 4,
    },
    QuestionSpec {
        category: Category::Goals,
        question_id: "goals_gained",
        question_text: "What, if any, goals does this character gain in this snippet that they wish to accomplish in the future?",
        position: 5,
    },
    QuestionSpec {
        category: Category::Goals,
        question_id: "goals_completed",
        question_text: "What, if any, goals does this character complete in this snippet?",
        position: 6,
    },
    QuestionSpec {
        category: Category::Goals,
        question_id: "goals_motivation",
        question_text: "How, if at all, does this character's internal motivations change in this snippet?",
        position: 7,
    },
];

pub fn question_registry() -> &'static [QuestionSpec] {
    &REGISTRY
}

pub fn question_by_id(question_id: &str) -> Option<&'static QuestionSpec> {
    REGISTRY.iter().find(|q| q.question_id == question_id)
}

pub fn questions_for(category: Category) -> impl Iterator<Item = &'static QuestionSpec> {
    REGISTRY.iter().filter(move |q| q.category == category)
}

/// One atomic claim about a character, with full lineage back to the
/// snippet, question, and pre-simplification sentence it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub text: String,
    pub question_id: String,
    pub story_id: String,
    pub entry_id: String,
    pub snippet_index: usize,
    pub focus_character: String,
    pub generator_model: String,
    pub parent_sentence: Option<String>,
    pub ordinal: usize,
}

const GENERATION_MAX_TOKENS: u32 = 512;
const SIMPLIFY_MAX_TOKENS: u32 = 256;

pub fn build_generation_prompt(
    snippet: &Snippet,
    character: &str,
    question: &QuestionSpec,
) -> Result<ChatRequest> {
    let registered = question_by_id(question.question_id).ok_or_else(|| {
        Error::Config(format!(
            "question {:?} is not in the registry",
            question.question_id
        ))
    })?;
    if registered != question {
        return Err(Error::Config(format!(
            "question {:?} does not match its registry entry",
            question.question_id
        )));
    }
    let prompt = prompts::render(
        prompts::GENERATION,
        &[
            ("story_section", &snippet.text),
            ("character", character),
            ("question", question.question_text),
        ],
    );
    for name in ["story_section", "character", "question"] {
        if prompts::has_placeholder(&prompt, name) {
            return Err(Error::Contract(format!(
                "generation prompt kept placeholder [{name}]"
            )));
        }
    }
    Ok(ChatRequest::user(prompt).with_max_tokens(GENERATION_MAX_TOKENS))
}

fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Split a possibly-compound sentence into atomic ones via the ICL prompt.
/// Simple sentences come back unchanged. An empty completion falls back to
/// the input sentence.
pub fn simplify_sentence(backend: &dyn Backend, sentence: &str) -> Result<Vec<String>> {
    if sentence.trim().is_empty() {
        return Err(Error::InvalidInput(
            "cannot simplify an empty sentence".into(),
        ));
    }
    let prompt = prompts::render(prompts::SIMPLIFY, &[("sentence", sentence)]);
    let request = ChatRequest::user(prompt).with_max_tokens(SIMPLIFY_MAX_TOKENS);
    let response = backend.complete(&request)?;
    // Cut the completion where the model starts inventing the next exemplar.
    let raw = match response.text.find("\nSentence:") {
        Some(pos) => &response.text[..pos],
        None => &response.text,
    };
    let split: Vec<String> = split_sentences(raw)
        .iter()
        .map(|s| normalize_ws(s))
        .filter(|s| !s.is_empty())
        .collect();
    if split.is_empty() {
        log::warn!("simplification returned nothing for {sentence:?}; keeping the sentence");
        return Ok(vec![normalize_ws(sentence)]);
    }
    Ok(split)
}

/// Ask one category question about one snippet and decompose the answer
/// into ordered atomic statements.
pub fn generate_statements(
    backend: &dyn Backend,
    snippet: &Snippet,
    character: &str,
    question: &QuestionSpec,
    generator_model: &str,
) -> Result<Vec<Statement>> {
    let with_context = |source| Error::Generation {
        story_id: snippet.story_id.clone(),
        entry_id: snippet.entry_id.clone(),
        snippet_index: snippet.snippet_index,
        question_id: question.question_id.to_string(),
        source: Box::new(source),
    };
    let request = build_generation_prompt(snippet, character, question)?;
    let response = backend.complete(&request).map_err(with_context)?;
    let mut statements = Vec::new();
    for sentence in split_sentences(&response.text) {
        let parent = normalize_ws(&sentence);
        let atoms = match simplify_sentence(backend, &sentence) {
            Ok(atoms) => atoms,
            Err(Error::Backend(source)) => return Err(with_context(source)),
            Err(other) => return Err(other),
        };
        let unchanged = atoms.len() == 1 && atoms[0] == parent;
        for text in atoms {
            statements.push(Statement {
                text,
                question_id: question.question_id.to_string(),
                story_id: snippet.story_id.clone(),
                entry_id: snippet.entry_id.clone(),
                snippet_index: snippet.snippet_index,
                focus_character: character.to_string(),
                generator_model: generator_model.to_string(),
                parent_sentence: if unchanged {
                    None
                } else {
                    Some(parent.clone())
                },
                ordinal: statements.len(),
            });
        }
    }
    Ok(statements)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;

    fn snippet() -> Snippet {
        Snippet {
            story_id: "story-1".into(),
            entry_id: "entry-1".into(),
            snippet_index: 0,
            focus_character: "char-1".into(),
            text: "Mara ran through the rain. Theo followed her inside.".into(),
            paragraph_span: (0, 0),
        }
    }

    #[test]
    fn registry_is_exactly_the_eight_questions() {
        let registry = question_registry();
        assert_eq!(registry.len(), 8);
        let count = |c: Category| registry.iter().filter(|q| q.category == c).count();
        assert_eq!(count(Category::Dialogue), 1);
        assert_eq!(count(Category::PhysicalPersonality), 2);
        assert_eq!(count(Category::Knowledge), 2);
        assert_eq!(count(Category::Goals), 3);
        for (i, q) in registry.iter().enumerate() {
            assert_eq!(q.position, i);
        }
        let texts: Vec<&str> = registry.iter().map(|q| q.question_text).collect();
        assert_eq!(
            texts,
            vec![
                "What, if anything have we learned about how this character speaks from this snippet?",
                "What, if any, physical descriptions of this character are in this snippet?",
                "What, if any, descriptions of this character's personality are in this snippet?",
                "What, if any, factual information is given about this character in this snippet?",
                "What, if any, information has this character learned in this snippet?",
                "What, if any, goals does this character gain in this snippet that they wish to accomplish in the future?",
                "What, if any, goals does this character complete in this snippet?",
                "How, if at all, does this character's internal motivations change in this snippet?",
            ]
        );
        let mut ids: Vec<&str> = registry.iter().map(|q| q.question_id).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 8);
    }

    #[test]
    fn category_parsing_accepts_aliases() {
        assert_eq!("dialogue".parse::<Category>().unwrap(), Category::Dialogue);
        assert_eq!(
            "Physical/Personality".parse::<Category>().unwrap(),
            Category::PhysicalPersonality
        );
        assert_eq!(
            "physical_personality".parse::<Category>().unwrap(),
            Category::PhysicalPersonality
        );
        assert_eq!(
            "knowledge".parse::<Category>().unwrap(),
            Category::Knowledge
        );
        assert_eq!("goals".parse::<Category>().unwrap(), Category::Goals);
        assert_eq!("Plot".parse::<Category>().unwrap(), Category::Goals);
        assert!("mystery".parse::<Category>().is_err());
    }

    #[test]
    fn question_lookup_by_id() {
        let q = question_by_id("dialogue_speech").unwrap();
        assert_eq!(q.category, Category::Dialogue);
        assert!(question_by_id("nope").is_none());
        assert_eq!(questions_for(Category::Goals).count(), 3);
    }

    #[test]
    fn generation_prompt_substitutes_everything() {
        let q = question_by_id("dialogue_speech").unwrap();
        let request = build_generation_prompt(&snippet(), "Mara", q).unwrap();
        let prompt = request.joined_content();
        assert!(prompt.contains("Mara ran through the rain."));
        assert!(prompt.contains(q.question_text));
        assert!(prompt.contains("questions about Mara with short"));
        assert!(!prompt.contains("[story_section]"));
        assert!(!prompt.contains("[character]"));
        assert!(!prompt.contains("[question]"));
        assert_eq!(request.max_tokens, 512);
    }

    #[test]
    fn unknown_question_is_a_config_error() {
        let fake = QuestionSpec {
            category: Category::Dialogue,
            question_id: "bogus",
            question_text: "Invented?",
            position: 99,
        };
        let err = build_generation_prompt(&snippet(), "Mara", &fake).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    fn simplify_key(sentence: &str) -> String {
        let prompt = prompts::render(prompts::SIMPLIFY, &[("sentence", sentence)]);
        ChatRequest::user(prompt)
            .with_max_tokens(SIMPLIFY_MAX_TOKENS)
            .request_key()
    }

    #[test]
    fn simplify_splits_compound_exemplars() {
        // Completions mirror the simplification exemplars; the oracle is
        // our parse of them into sentence lists. Fixtures are keyed by
        // request hash because these sentences also appear as exemplars
        // inside every rendered prompt.
        let mock = MockBackend::new()
            .with_fixture(
                simplify_key("She uses imperatives to give orders and asks direct questions to gather information."),
                "She uses imperatives to give orders. She asks direct questions to gather information.",
            )
            .with_fixture(
                simplify_key("Hassan encountered a crab monster and engaged in a card battle to defeat it."),
                "Hassan encountered a crab monster. Hassan engaged in a card battle to defeat the crab monster.",
            );
        let split = simplify_sentence(
            &mock,
            "She uses imperatives to give orders and asks direct questions to gather information.",
        )
        .unwrap();
        assert_eq!(
            split,
            vec![
                "She uses imperatives to give orders.",
                "She asks direct questions to gather information.",
            ]
        );
        let split = simplify_sentence(
            &mock,
            "Hassan encountered a crab monster and engaged in a card battle to defeat it.",
        )
        .unwrap();
        assert_eq!(
            split,
            vec![
                "Hassan encountered a crab monster.",
                "Hassan engaged in a card battle to defeat the crab monster.",
            ]
        );
    }

    #[test]
    fn simplify_passes_simple_sentences_through() {
        // Default mock echoes the sentence back.
        let mock = MockBackend::new();
        let sentence =
            "Kaluros is determined and focused during battles, using his magic and weapons effectively to defeat his enemies.";
        let split = simplify_sentence(&mock, sentence).unwrap();
        assert_eq!(split, vec![sentence.to_string()]);
    }

    #[test]
    fn simplify_cuts_runaway_completions() {
        let mock = MockBackend::new().with_prompt_fixture(
            "Runs far.",
            "Runs far.\nSentence: Invented next exemplar and more.",
        );
        let split = simplify_sentence(&mock, "Runs far.").unwrap();
        assert_eq!(split, vec!["Runs far."]);
    }

    #[test]
    fn simplify_falls_back_on_empty_completion() {
        let mock = MockBackend::new().with_prompt_fixture("Keeps going.", "   ");
        let split = simplify_sentence(&mock, "Keeps going.").unwrap();
        assert_eq!(split, vec!["Keeps going."]);
        assert!(simplify_sentence(&mock, "   ").is_err());
    }

    #[test]
    fn generate_statements_orders_and_tags() {
        let q = question_by_id("personality_descriptions").unwrap();
        let mock = MockBackend::new().with_prompt_fixture(q.question_text, "She ran. He hid.");
        let statements = generate_statements(&mock, &snippet(), "Mara", q, "mock").unwrap();
        assert_eq!(statements.len(), 2);
        assert_eq!(statements[0].text, "She ran.");
        assert_eq!(statements[1].text, "He hid.");
        assert_eq!(statements[0].ordinal, 0);
        assert_eq!(statements[1].ordinal, 1);
        for s in &statements {
            assert_eq!(s.question_id, "personality_descriptions");
            assert_eq!(s.story_id, "story-1");
            assert_eq!(s.entry_id, "entry-1");
            assert_eq!(s.snippet_index, 0);
            assert_eq!(s.focus_character, "Mara");
            assert_eq!(s.generator_model, "mock");
            assert_eq!(s.parent_sentence, None);
            assert!(!s.text.contains('\n'));
        }
        let again = generate_statements(&mock, &snippet(), "Mara", q, "mock").unwrap();
        assert_eq!(statements, again);
    }

    #[test]
    fn generate_statements_empty_answer_gives_nothing() {
        let q = question_by_id("goals_completed").unwrap();
        let mock = MockBackend::new().with_prompt_fixture(q.question_text, "");
        let statements = generate_statements(&mock, &snippet(), "Mara", q, "mock").unwrap();
        assert!(statements.is_empty());
    }

    #[test]
    fn compound_answers_carry_lineage() {
        let q = question_by_id("dialogue_speech").unwrap();
        let compound = "Mara speaks softly and chooses her words with care.";
        let mock = MockBackend::new()
            .with_prompt_fixture(q.question_text, compound)
            .with_prompt_fixture(
                "Mara speaks softly and chooses",
                "Mara speaks softly. Mara chooses her words with care.",
            );
        let statements = generate_statements(&mock, &snippet(), "Mara", q, "mock").unwrap();
        assert_eq!(statements.len(), 2);
        assert_eq!(statements[0].parent_sentence.as_deref(), Some(compound));
        assert_eq!(statements[1].parent_sentence.as_deref(), Some(compound));
        assert_eq!(statements[0].ordinal, 0);
        assert_eq!(statements[1].ordinal, 1);
    }
}
