//! Statement validation: ICL ambiguity/informativeness reasoning, two-turn
//! chain-of-thought, entailment labeling, and the acceptance policy.
//!
//! The ICL verdicts are advisory context for the entailment scorer, never
//! hard filters: used alone they cut far too many true statements. Only the
//! 1-5 label, thresholded by the acceptance policy, decides.

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, ChatMessage, ChatRequest, ChatResponse, Role};
use crate::error::{Error, Result};
use crate::generation::Statement;
use crate::prompts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReasoningMode {
    All,
    Icl,
    Cot,
    None,
}

impl ReasoningMode {
    pub fn wants_icl(self) -> bool {
        matches!(self, ReasoningMode::All | ReasoningMode::Icl)
    }

    pub fn wants_cot(self) -> bool {
        matches!(self, ReasoningMode::All | ReasoningMode::Cot)
    }

    pub fn id(self) -> &'static str {
        match self {
            ReasoningMode::All => "all",
            ReasoningMode::Icl => "icl",
            ReasoningMode::Cot => "cot",
            ReasoningMode::None => "none",
        }
    }
}

impl fmt::Display for ReasoningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ReasoningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "all" => Ok(ReasoningMode::All),
            "icl" => Ok(ReasoningMode::Icl),
            "cot" => Ok(ReasoningMode::Cot),
            "none" => Ok(ReasoningMode::None),
            _ => Err(Error::Config(format!("unknown reasoning mode: {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AcceptancePolicy {
    Eq5,
    Ge4,
}

impl AcceptancePolicy {
    pub fn id(self) -> &'static str {
        match self {
            AcceptancePolicy::Eq5 => "eq5",
            AcceptancePolicy::Ge4 => "ge4",
        }
    }

    pub fn accept(self, label: u8) -> bool {
        match self {
            AcceptancePolicy::Eq5 => label == 5,
            AcceptancePolicy::Ge4 => label >= 4,
        }
    }
}

impl fmt::Display for AcceptancePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for AcceptancePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eq5" => Ok(AcceptancePolicy::Eq5),
            "ge4" => Ok(AcceptancePolicy::Ge4),
            _ => Err(Error::Config(format!("unknown acceptance policy: {s:?}"))),
        }
    }
}

/// Yes/No verdict parsed from an ICL completion. `parse_error` marks
/// completions that started with neither; the flag then holds the
/// permissive default.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IclVerdict {
    pub flag: bool,
    pub justification: String,
    pub parse_error: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningBundle {
    pub ambiguity: Option<IclVerdict>,
    pub informativeness: Option<IclVerdict>,
    pub cot_relevant_section: Option<String>,
    pub cot_comparison: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntailmentVerdict {
    pub label: u8,
    pub accepted: bool,
    pub policy: String,
    pub raw_output: String,
    pub reasoning: ReasoningBundle,
}

/// One human-annotated statement with per-annotator 1-5 labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub story_id: String,
    pub entry_id: String,
    pub snippet_index: usize,
    pub character: String,
    pub statement: String,
    pub labels: BTreeMap<String, u8>,
    pub source_model: String,
}

pub fn load_annotations_jsonl(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    let file = std::fs::File::open(path.as_ref())?;
    let mut records = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotationRecord =
            serde_json::from_str(&line).map_err(|source| Error::JsonLine {
                line: idx + 1,
                source,
            })?;
        if record.labels.is_empty() {
            return Err(Error::InvalidInput(format!(
                "line {}: annotation record has no labels",
                idx + 1
            )));
        }
        if let Some((annotator, label)) = record.labels.iter().find(|(_, l)| !(1..=5).contains(*l))
        {
            return Err(Error::InvalidInput(format!(
                "line {}: label {label} from {annotator:?} is outside 1-5",
                idx + 1
            )));
        }
        records.push(record);
    }
    Ok(records)
}

/// Reasoning and scoring may use different models; the scorer is the
/// fine-tuned entailment classifier, the reasoner a general chat model.
#[derive(Clone, Copy)]
pub struct ValidationBackends<'a> {
    pub reasoning: &'a dyn Backend,
    pub scorer: &'a dyn Backend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub policy: AcceptancePolicy,
    pub reasoning_mode: ReasoningMode,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            policy: AcceptancePolicy::Eq5,
            reasoning_mode: ReasoningMode::All,
        }
    }
}

const ICL_MAX_TOKENS: u32 = 256;
const COT_MAX_TOKENS: u32 = 384;
const SCORER_MAX_TOKENS: u32 = 16;

/// Leading word Yes => Some(true), No => Some(false), anything else None.
fn parse_yes_no(completion: &str) -> Option<bool> {
    let word: String = completion
        .trim_start()
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_ascii_lowercase();
    match word.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

fn assess_icl(
    backend: &dyn Backend,
    template: &str,
    question_template: &str,
    statement: &str,
    character: &str,
    permissive_default: bool,
    kind: &str,
) -> Result<IclVerdict> {
    if statement.trim().is_empty() {
        return Err(Error::InvalidInput(format!(
            "cannot assess {kind} of an empty statement"
        )));
    }
    let question = prompts::render(question_template, &[("character", character)]);
    let prompt = prompts::render(
        template,
        &[("question_text", &question), ("statement", statement)],
    );
    let request = ChatRequest::user(prompt).with_max_tokens(ICL_MAX_TOKENS);
    let response = backend.complete(&request)?;
    let justification = response.text.trim().to_string();
    match parse_yes_no(&justification) {
        Some(flag) => Ok(IclVerdict {
            flag,
            justification,
            parse_error: false,
        }),
        None => {
            log::warn!(
                "{kind} completion for {statement:?} started with neither Yes nor No; \
                 defaulting to {permissive_default}"
            );
            Ok(IclVerdict {
                flag: permissive_default,
                justification,
                parse_error: true,
            })
        }
    }
}

/// Yes means the statement is too ambiguous to verify on its own.
pub fn assess_ambiguity(
    backend: &dyn Backend,
    statement: &str,
    character: &str,
) -> Result<IclVerdict> {
    assess_icl(
        backend,
        prompts::AMBIGUITY,
        prompts::AMBIGUITY_QUESTION,
        statement,
        character,
        false,
        "ambiguity",
    )
}

/// Yes means the statement carries novel information about the character.
pub fn assess_informativeness(
    backend: &dyn Backend,
    statement: &str,
    character: &str,
) -> Result<IclVerdict> {
    assess_icl(
        backend,
        prompts::INFORMATIVE,
        prompts::INFORMATIVE_QUESTION,
        statement,
        character,
        true,
        "informativeness",
    )
}

/// Two sequential turns: retrieve the snippet section most relevant to the
/// statement, then compare the statement's claims against it. A failure on
/// the second turn keeps the first turn's answer in the error.
pub fn chain_of_thought(
    backend: &dyn Backend,
    snippet_text: &str,
    character: &str,
    statement: &str,
) -> Result<(String, String)> {
    let relevant = if snippet_text.trim().is_empty() {
        "N/A".to_string()
    } else {
        let prompt = prompts::render(
            prompts::COT_TURN1,
            &[
                ("story_section", snippet_text),
                ("character", character),
                ("statement", statement),
            ],
        );
        let request = ChatRequest::user(prompt).with_max_tokens(COT_MAX_TOKENS);
        let text = backend.complete(&request)?.text.trim().to_string();
        if text.is_empty() {
            "N/A".to_string()
        } else {
            text
        }
    };
    let prompt = prompts::render(
        prompts::COT_TURN2,
        &[
            ("story_section", snippet_text),
            ("character", character),
            ("statement", statement),
            ("answer", &relevant),
        ],
    );
    let request = ChatRequest::user(prompt).with_max_tokens(COT_MAX_TOKENS);
    let comparison = match backend.complete(&request) {
        Ok(response) => response.text.trim().to_string(),
        Err(source) => {
            return Err(Error::CotComparison {
                relevant_section: relevant,
                source,
            })
        }
    };
    Ok((relevant, comparison))
}

/// Run the reasoning passes selected by `mode`.
pub fn gather_reasoning(
    backend: &dyn Backend,
    snippet_text: &str,
    character: &str,
    statement: &str,
    mode: ReasoningMode,
) -> Result<ReasoningBundle> {
    let mut bundle = ReasoningBundle::default();
    if mode.wants_icl() {
        bundle.ambiguity = Some(assess_ambiguity(backend, statement, character)?);
        bundle.informativeness = Some(assess_informativeness(backend, statement, character)?);
    }
    if mode.wants_cot() {
        let (relevant, comparison) = chain_of_thought(backend, snippet_text, character, statement)?;
        bundle.cot_relevant_section = Some(relevant);
        bundle.cot_comparison = Some(comparison);
    }
    Ok(bundle)
}

/// ICL answers first, then the CoT pair, each under a fixed heading.
fn reasoning_block(reasoning: &ReasoningBundle, mode: ReasoningMode) -> Result<String> {
    let mut block = String::new();
    if mode.wants_icl() {
        let ambiguity = reasoning.ambiguity.as_ref().ok_or_else(|| {
            Error::Contract("reasoning mode requires an ambiguity verdict".into())
        })?;
        let informativeness = reasoning.informativeness.as_ref().ok_or_else(|| {
            Error::Contract("reasoning mode requires an informativeness verdict".into())
        })?;
        block.push_str(&format!(
            "Ambiguity Reasoning: {}\n\nInformativeness Reasoning: {}\n\n",
            ambiguity.justification, informativeness.justification
        ));
    }
    if mode.wants_cot() {
        let relevant = reasoning.cot_relevant_section.as_ref().ok_or_else(|| {
            Error::Contract("reasoning mode requires the chain-of-thought relevant section".into())
        })?;
        let comparison = reasoning.cot_comparison.as_ref().ok_or_else(|| {
            Error::Contract("reasoning mode requires the chain-of-thought comparison".into())
        })?;
        block.push_str(&format!(
            "Relevant Section: {relevant}\n\nComparison: {comparison}\n\n"
        ));
    }
    Ok(block)
}

fn parse_label(completion: &str) -> Option<u8> {
    completion
        .chars()
        .find(|c| ('1'..='5').contains(c))
        .map(|c| c as u8 - b'0')
}

/// Assemble snippet, selected reasoning, character, and statement into the
/// scorer context and parse the 1-5 label from the completion. One retry
/// with an explicit nudge before giving up.
pub fn classify_entailment(
    scorer: &dyn Backend,
    snippet_text: &str,
    character: &str,
    statement: &str,
    reasoning: &ReasoningBundle,
    mode: ReasoningMode,
) -> Result<(u8, String)> {
    let block = reasoning_block(reasoning, mode)?;
    let prompt = prompts::render(
        prompts::ENTAILMENT,
        &[
            ("story_section", snippet_text),
            ("reasoning", &block),
            ("character", character),
            ("statement", statement),
        ],
    );
    let request = ChatRequest::user(prompt.clone()).with_max_tokens(SCORER_MAX_TOKENS);
    let response = scorer.complete(&request)?;
    if let Some(label) = parse_label(&response.text) {
        return Ok((label, response.text));
    }
    let mut messages = request.messages.clone();
    messages.push(ChatMessage {
        role: Role::Assistant,
        content: response.text.clone(),
    });
    messages.push(ChatMessage {
        role: Role::User,
        content: "Please answer with a single digit from 1 to 5.".into(),
    });
    let retry = ChatRequest {
        messages,
        ..request
    };
    let second = scorer.complete(&retry)?;
    match parse_label(&second.text) {
        Some(label) => Ok((label, second.text)),
        None => Err(Error::UnparseableLabel {
            completion: second.text,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatedStatement {
    pub statement: Statement,
    pub verdict: EntailmentVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectionReason {
    /// Scored below the policy threshold.
    Label { label: u8 },
    /// No 1-5 digit in the scorer completion, even after the retry.
    Unparseable,
    /// Backend failure while reasoning or scoring this statement.
    Backend(String),
}

impl fmt::Display for RejectionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectionReason::Label { label } => write!(f, "label {label} below policy"),
            RejectionReason::Unparseable => f.write_str("unparseable label"),
            RejectionReason::Backend(msg) => write!(f, "backend failure: {msg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedStatement {
    pub statement: Statement,
    pub reason: RejectionReason,
    pub verdict: Option<EntailmentVerdict>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub accepted: Vec<ValidatedStatement>,
    pub rejected: Vec<RejectedStatement>,
}

/// Validate statements one by one, preserving input order in both lists.
/// Per-statement failures reject that statement; the batch never aborts on
/// a runtime error.
pub fn validate_statements(
    backends: ValidationBackends<'_>,
    statements: &[Statement],
    snippet_text: &str,
    character: &str,
    config: &ValidationConfig,
) -> Result<ValidationOutcome> {
    for statement in statements {
        if statement.focus_character != character {
            return Err(Error::Contract(format!(
                "statement about {:?} validated against {:?}",
                statement.focus_character, character
            )));
        }
    }
    let mut outcome = ValidationOutcome::default();
    for statement in statements {
        let reasoning = match gather_reasoning(
            backends.reasoning,
            snippet_text,
            character,
            &statement.text,
            config.reasoning_mode,
        ) {
            Ok(bundle) => bundle,
            Err(err) => {
                outcome.rejected.push(RejectedStatement {
                    statement: statement.clone(),
                    reason: RejectionReason::Backend(err.to_string()),
                    verdict: None,
                });
                continue;
            }
        };
        let (label, raw_output) = match classify_entailment(
            backends.scorer,
            snippet_text,
            character,
            &statement.text,
            &reasoning,
            config.reasoning_mode,
        ) {
            Ok(pair) => pair,
            Err(Error::UnparseableLabel { .. }) => {
                outcome.rejected.push(RejectedStatement {
                    statement: statement.clone(),
                    reason: RejectionReason::Unparseable,
                    verdict: None,
                });
                continue;
            }
            Err(Error::Contract(msg)) => return Err(Error::Contract(msg)),
            Err(err) => {
                outcome.rejected.push(RejectedStatement {
                    statement: statement.clone(),
                    reason: RejectionReason::Backend(err.to_string()),
                    verdict: None,
                });
                continue;
            }
        };
        let verdict = EntailmentVerdict {
            label,
            accepted: config.policy.accept(label),
            policy: config.policy.id().to_string(),
            raw_output,
            reasoning,
        };
        if verdict.accepted {
            outcome.accepted.push(ValidatedStatement {
                statement: statement.clone(),
                verdict,
            });
        } else {
            outcome.rejected.push(RejectedStatement {
                statement: statement.clone(),
                reason: RejectionReason::Label { label },
                verdict: Some(verdict),
            });
        }
    }
    Ok(outcome)
}

/// Test scorer that answers with a stored gold label for the statement
/// found in the prompt's final `Statement:` line.
#[derive(Debug, Clone)]
pub struct OracleScorer {
    labels: BTreeMap<String, u8>,
}

impl OracleScorer {
    pub fn new(labels: BTreeMap<String, u8>) -> Self {
        OracleScorer { labels }
    }

    pub fn from_records(records: &[AnnotationRecord], annotator: &str) -> Self {
        let labels = records
            .iter()
            .filter_map(|r| r.labels.get(annotator).map(|l| (r.statement.clone(), *l)))
            .collect();
        OracleScorer { labels }
    }
}

impl Backend for OracleScorer {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, BackendError> {
        let content = request.joined_content();
        let start = content
            .rfind("Statement: ")
            .ok_or_else(|| BackendError::Protocol("no Statement line in prompt".into()))?
            + "Statement: ".len();
        let rest = &content[start..];
        let statement = match rest.find("\n\nQuestion:") {
            Some(end) => &rest[..end],
            None => rest,
        };
        let label = self.labels.get(statement).ok_or_else(|| {
            BackendError::Protocol(format!("no gold label for statement {statement:?}"))
        })?;
        Ok(ChatResponse {
            text: label.to_string(),
            option_scores: None,
            backend_id: "oracle-scorer".into(),
            cached: false,
        })
    }

    fn id(&self) -> &str {
        "oracle-scorer"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::generation::{question_by_id, Statement};

    fn statement(text: &str) -> Statement {
        Statement {
            text: text.into(),
            question_id: "personality_descriptions".into(),
            story_id: "story-1".into(),
            entry_id: "entry-1".into(),
            snippet_index: 0,
            focus_character: "Mara".into(),
            generator_model: "mock".into(),
            parent_sentence: None,
            ordinal: 0,
        }
    }

    fn statements(texts: &[&str]) -> Vec<Statement> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut s = statement(t);
                s.ordinal = i;
                s
            })
            .collect()
    }

    #[test]
    fn policies_threshold_labels() {
        assert!(AcceptancePolicy::Eq5.accept(5));
        assert!(!AcceptancePolicy::Eq5.accept(4));
        assert!(AcceptancePolicy::Ge4.accept(4));
        assert!(AcceptancePolicy::Ge4.accept(5));
        assert!(!AcceptancePolicy::Ge4.accept(3));
        assert_eq!(
            "eq5".parse::<AcceptancePolicy>().unwrap(),
            AcceptancePolicy::Eq5
        );
        assert_eq!(
            "GE4".parse::<AcceptancePolicy>().unwrap(),
            AcceptancePolicy::Ge4
        );
        assert!("eq4".parse::<AcceptancePolicy>().is_err());
    }

    #[test]
    fn eq5_accepts_subset_of_ge4() {
        for label in 1..=5u8 {
            assert!(!AcceptancePolicy::Eq5.accept(label) || AcceptancePolicy::Ge4.accept(label));
        }
    }

    #[test]
    fn ambiguity_parses_leading_yes_no() {
        let mock = MockBackend::new();
        // The default mock answers "No, the statement is unambiguous...".
        let verdict = assess_ambiguity(&mock, "Mara is quiet.", "Mara").unwrap();
        assert!(!verdict.flag);
        assert!(!verdict.parse_error);
        assert!(!verdict.justification.is_empty());
    }

    #[test]
    fn ambiguity_yes_is_flagged() {
        let mock = MockBackend::new().with_prompt_fixture(
            "These men run away at first sight.\n\nAnswer:",
            "Yes, the statement is ambiguous because it doesn't specify who they are.",
        );
        let verdict =
            assess_ambiguity(&mock, "These men run away at first sight.", "Mara").unwrap();
        assert!(verdict.flag);
    }

    #[test]
    fn unparseable_icl_defaults_permissively() {
        let mock = MockBackend::new()
            .with_prompt_fixture("Mumbles a lot.\n\nAnswer:", "Hard to say either way.");
        let ambiguity = assess_ambiguity(&mock, "Mumbles a lot.", "Mara").unwrap();
        assert!(!ambiguity.flag);
        assert!(ambiguity.parse_error);
        let informative = assess_informativeness(&mock, "Mumbles a lot.", "Mara").unwrap();
        assert!(informative.flag);
        assert!(informative.parse_error);
    }

    #[test]
    fn icl_prompts_substitute_character_into_question() {
        let mock = MockBackend::new();
        let req_text = prompts::render(prompts::AMBIGUITY_QUESTION, &[("character", "Wren")]);
        assert!(req_text.contains("about Wren"));
        assert!(!req_text.contains("[character]"));
        // End-to-end: the assembled prompt carries the substituted question.
        let verdict = assess_informativeness(&mock, "Wren is tall.", "Wren").unwrap();
        assert!(verdict.flag);
    }

    #[test]
    fn chain_of_thought_two_turns() {
        let mock = MockBackend::new();
        let (relevant, comparison) =
            chain_of_thought(&mock, "Mara ran inside.", "Mara", "Mara runs.").unwrap();
        assert!(!relevant.is_empty());
        assert!(comparison.contains("explicitly supported"));
        assert_eq!(mock.stats().cot, 2);
    }

    #[test]
    fn chain_of_thought_empty_snippet_short_circuits() {
        let mock = MockBackend::new();
        let (relevant, _comparison) = chain_of_thought(&mock, "   ", "Mara", "Mara runs.").unwrap();
        assert_eq!(relevant, "N/A");
        // Only the comparison turn hits the backend.
        assert_eq!(mock.stats().cot, 1);
    }

    #[test]
    fn classify_parses_first_label_digit() {
        let mock = MockBackend::new().with_constant_label(4);
        let bundle = ReasoningBundle::default();
        let (label, raw) = classify_entailment(
            &mock,
            "Mara ran inside.",
            "Mara",
            "Mara runs.",
            &bundle,
            ReasoningMode::None,
        )
        .unwrap();
        assert_eq!(label, 4);
        assert!(raw.contains('4'));
    }

    #[test]
    fn classify_requires_reasoning_for_mode() {
        let mock = MockBackend::new().with_constant_label(5);
        let bundle = ReasoningBundle::default();
        let err = classify_entailment(
            &mock,
            "Snippet.",
            "Mara",
            "Mara runs.",
            &bundle,
            ReasoningMode::All,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn classify_reasoning_block_order_is_fixed() {
        let bundle = ReasoningBundle {
            ambiguity: Some(IclVerdict {
                flag: false,
                justification: "No, clear.".into(),
                parse_error: false,
            }),
            informativeness: Some(IclVerdict {
                flag: true,
                justification: "Yes, novel.".into(),
                parse_error: false,
            }),
            cot_relevant_section: Some("The opening.".into()),
            cot_comparison: Some("Supported.".into()),
        };
        let block = reasoning_block(&bundle, ReasoningMode::All).unwrap();
        let ambiguity_at = block.find("Ambiguity Reasoning:").unwrap();
        let informativeness_at = block.find("Informativeness Reasoning:").unwrap();
        let relevant_at = block.find("Relevant Section:").unwrap();
        let comparison_at = block.find("Comparison:").unwrap();
        assert!(ambiguity_at < informativeness_at);
        assert!(informativeness_at < relevant_at);
        assert!(relevant_at < comparison_at);
        assert_eq!(reasoning_block(&bundle, ReasoningMode::None).unwrap(), "");
        assert!(!reasoning_block(&bundle, ReasoningMode::Icl)
            .unwrap()
            .contains("Relevant Section:"));
    }

    #[test]
    fn classify_retries_once_then_errors() {
        // Every completion lacks a digit: first call and retry both fail.
        let mock = MockBackend::new()
            .with_prompt_fixture("a single digit from 1 to 5", "I would rather not say.");
        let err = classify_entailment(
            &mock,
            "Snippet.",
            "Mara",
            "Mara runs.",
            &ReasoningBundle::default(),
            ReasoningMode::None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnparseableLabel { .. }));
        assert_eq!(mock.stats().total, 2);
    }

    #[test]
    fn validate_filters_by_policy_and_preserves_order() {
        let texts = ["s one.", "s two.", "s three.", "s four.", "s five."];
        let stmts = statements(&texts);
        let labels: BTreeMap<String, u8> = texts
            .iter()
            .zip([5u8, 3, 5, 4, 5])
            .map(|(t, l)| (t.to_string(), l))
            .collect();
        let scorer = OracleScorer::new(labels);
        let reasoning = MockBackend::new();
        let backends = ValidationBackends {
            reasoning: &reasoning,
            scorer: &scorer,
        };
        let config = ValidationConfig::default();
        let outcome =
            validate_statements(backends, &stmts, "Snippet text.", "Mara", &config).unwrap();
        let accepted: Vec<&str> = outcome
            .accepted
            .iter()
            .map(|v| v.statement.text.as_str())
            .collect();
        assert_eq!(accepted, vec!["s one.", "s three.", "s five."]);
        let rejected: Vec<(&str, &RejectionReason)> = outcome
            .rejected
            .iter()
            .map(|r| (r.statement.text.as_str(), &r.reason))
            .collect();
        assert_eq!(rejected.len(), 2);
        assert_eq!(rejected[0].0, "s two.");
        assert_eq!(*rejected[0].1, RejectionReason::Label { label: 3 });
        assert_eq!(rejected[1].0, "s four.");
        // ge4 accepts a superset.
        let ge4 = ValidationConfig {
            policy: AcceptancePolicy::Ge4,
            ..config
        };
        let outcome_ge4 =
            validate_statements(backends, &stmts, "Snippet text.", "Mara", &ge4).unwrap();
        let accepted_ge4: Vec<&str> = outcome_ge4
            .accepted
            .iter()
            .map(|v| v.statement.text.as_str())
            .collect();
        assert_eq!(
            accepted_ge4,
            vec!["s one.", "s three.", "s four.", "s five."]
        );
        for text in &accepted {
            assert!(accepted_ge4.contains(text));
        }
    }

    #[test]
    fn validate_all_low_labels_accepts_nothing() {
        let stmts = statements(&["a.", "b."]);
        let scorer = MockBackend::new().with_constant_label(1);
        let reasoning = MockBackend::new();
        let backends = ValidationBackends {
            reasoning: &reasoning,
            scorer: &scorer,
        };
        let outcome = validate_statements(
            backends,
            &stmts,
            "Snippet.",
            "Mara",
            &ValidationConfig::default(),
        )
        .unwrap();
        assert!(outcome.accepted.is_empty());
        assert_eq!(outcome.rejected.len(), 2);
    }

    #[test]
    fn validate_isolates_backend_failures() {
        let stmts = statements(&["good.", "no gold entry.", "also good."]);
        let labels: BTreeMap<String, u8> = [("good.", 5u8), ("also good.", 5u8)]
            .into_iter()
            .map(|(t, l)| (t.to_string(), l))
            .collect();
        let scorer = OracleScorer::new(labels);
        let reasoning = MockBackend::new();
        let backends = ValidationBackends {
            reasoning: &reasoning,
            scorer: &scorer,
        };
        let outcome = validate_statements(
            backends,
            &stmts,
            "Snippet.",
            "Mara",
            &ValidationConfig::default(),
        )
        .unwrap();
        assert_eq!(outcome.accepted.len(), 2);
        assert_eq!(outcome.rejected.len(), 1);
        assert!(matches!(
            outcome.rejected[0].reason,
            RejectionReason::Backend(_)
        ));
    }

    #[test]
    fn reasoning_mode_none_issues_no_reasoning_calls() {
        let stmts = statements(&["quiet one.", "loud one."]);
        let reasoning = MockBackend::new();
        let scorer = MockBackend::new().with_constant_label(5);
        let backends = ValidationBackends {
            reasoning: &reasoning,
            scorer: &scorer,
        };
        let config = ValidationConfig {
            policy: AcceptancePolicy::Eq5,
            reasoning_mode: ReasoningMode::None,
        };
        let outcome = validate_statements(backends, &stmts, "Snippet.", "Mara", &config).unwrap();
        assert_eq!(outcome.accepted.len(), 2);
        assert_eq!(reasoning.stats().total, 0);
        assert_eq!(scorer.stats().reasoning(), 0);
        assert_eq!(scorer.stats().entailment, 2);
    }

    #[test]
    fn reasoning_mode_all_calls_every_pass() {
        let stmts = statements(&["watched quietly."]);
        let reasoning = MockBackend::new();
        let scorer = MockBackend::new().with_constant_label(5);
        let backends = ValidationBackends {
            reasoning: &reasoning,
            scorer: &scorer,
        };
        let config = ValidationConfig::default();
        let outcome = validate_statements(backends, &stmts, "Snippet.", "Mara", &config).unwrap();
        assert_eq!(outcome.accepted.len(), 1);
        let stats = reasoning.stats();
        assert_eq!(stats.ambiguity, 1);
        assert_eq!(stats.informative, 1);
        assert_eq!(stats.cot, 2);
        let verdict = &outcome.accepted[0].verdict;
        assert!(verdict.reasoning.ambiguity.is_some());
        assert!(verdict.reasoning.cot_comparison.is_some());
    }

    #[test]
    fn validate_requires_matching_character() {
        let stmts = statements(&["text."]);
        let reasoning = MockBackend::new();
        let scorer = MockBackend::new().with_constant_label(5);
        let backends = ValidationBackends {
            reasoning: &reasoning,
            scorer: &scorer,
        };
        let err = validate_statements(
            backends,
            &stmts,
            "Snippet.",
            "Somebody Else",
            &ValidationConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn annotation_records_round_trip_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("annotations.jsonl");
        let record = AnnotationRecord {
            story_id: "story-1".into(),
            entry_id: "entry-1".into(),
            snippet_index: 0,
            character: "Mara".into(),
            statement: "Mara is quiet.".into(),
            labels: [("a".to_string(), 5u8), ("b".to_string(), 4u8)]
                .into_iter()
                .collect(),
            source_model: "mock".into(),
        };
        std::fs::write(&path, serde_json::to_string(&record).unwrap() + "\n").unwrap();
        let loaded = load_annotations_jsonl(&path).unwrap();
        assert_eq!(loaded, vec![record]);
    }

    #[test]
    fn annotation_labels_must_be_in_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("annotations.jsonl");
        let line = r#"{"story_id":"s","entry_id":"e","snippet_index":0,"character":"c","statement":"t.","labels":{"a":6},"source_model":"m"}"#;
        std::fs::write(&path, format!("{line}\n")).unwrap();
        assert!(matches!(
            load_annotations_jsonl(&path).unwrap_err(),
            Error::InvalidInput(_)
        ));
        let empty = r#"{"story_id":"s","entry_id":"e","snippet_index":0,"character":"c","statement":"t.","labels":{},"source_model":"m"}"#;
        std::fs::write(&path, format!("{empty}\n")).unwrap();
        assert!(matches!(
            load_annotations_jsonl(&path).unwrap_err(),
            Error::InvalidInput(_)
        ));
    }

    #[test]
    fn oracle_scorer_reads_the_live_statement_line() {
        let labels: BTreeMap<String, u8> =
            [("Mara is quiet.".to_string(), 5u8)].into_iter().collect();
        let scorer = OracleScorer::new(labels);
        let (label, _) = classify_entailment(
            &scorer,
            "Snippet.",
            "Mara",
            "Mara is quiet.",
            &ReasoningBundle::default(),
            ReasoningMode::None,
        )
        .unwrap();
        assert_eq!(label, 5);
        let err = classify_entailment(
            &scorer,
            "Snippet.",
            "Mara",
            "Unknown statement.",
            &ReasoningBundle::default(),
            ReasoningMode::None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Backend(BackendError::Protocol(_))));
    }

    #[test]
    fn validation_is_deterministic() {
        let q = question_by_id("dialogue_speech").unwrap();
        assert_eq!(q.category.label(), "Dialogue");
        let stmts = statements(&["alpha.", "beta."]);
        let reasoning = MockBackend::new();
        let scorer = MockBackend::new();
        let backends = ValidationBackends {
            reasoning: &reasoning,
            scorer: &scorer,
        };
        let config = ValidationConfig::default();
        let a = validate_statements(backends, &stmts, "Snippet.", "Mara", &config).unwrap();
        let b = validate_statements(backends, &stmts, "Snippet.", "Mara", &config).unwrap();
        assert_eq!(a, b);
    }
}
