//! Versioned plain-text prompt templates with `[name]` placeholder syntax.
//!
//! Templates ship as assets and are embedded at compile time. Rendering is
//! single-pass: substituted values are never rescanned, so story text that
//! happens to contain brackets cannot trigger a second substitution.

/// Bumped whenever any template asset changes in a way that alters prompts.
pub const TEMPLATE_VERSION: &str = "v1";

pub const GENERATION: &str = include_str!("../assets/templates/generation.txt");
pub const SIMPLIFY: &str = include_str!("../assets/templates/simplify.txt");
pub const AMBIGUITY: &str = include_str!("../assets/templates/ambiguity.txt");
pub const AMBIGUITY_QUESTION: &str = include_str!("../assets/templates/ambiguity_question.txt");
pub const INFORMATIVE: &str = include_str!("../assets/templates/informative.txt");
pub const INFORMATIVE_QUESTION: &str = include_str!("../assets/templates/informative_question.txt");
pub const COT_TURN1: &str = include_str!("../assets/templates/cot_turn1.txt");
pub const COT_TURN2: &str = include_str!("../assets/templates/cot_turn2.txt");
pub const ENTAILMENT: &str = include_str!("../assets/templates/entailment.txt");
pub const PREDICT: &str = include_str!("../assets/templates/predict.txt");
pub const SUMMARY: &str = include_str!("../assets/templates/summary.txt");

/// Substrings that identify each prompt family. The deterministic mock
/// backend dispatches on these; keeping them next to the templates keeps
/// them in sync.
pub mod sentinel {
    pub const GENERATION: &str =
        "Please answer the following questions about the character learned in this story section";
    pub const SIMPLIFY: &str = "helping an author split compound sentences";
    pub const AMBIGUITY: &str = "Is the given statement about";
    pub const INFORMATIVE: &str = "Does this statement give you any novel information concerning";
    /// Turn 2 contains all of turn 1, so check turn 2 first.
    pub const COT_TURN2: &str = "compare the claim the statement makes";
    pub const COT_TURN1: &str = "most relevant to the given statement";
    pub const ENTAILMENT: &str = "single digit from 1 to 5";
    pub const SUMMARY: &str = "Summarize everything we have learned about this character";
    pub const PREDICT: &str = "Which mask ID corresponds to";
}

/// Replace each `[name]` occurrence with its substitution. Unknown bracketed
/// spans are copied through untouched.
pub fn render(template: &str, substitutions: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut i = 0;
    while i < template.len() {
        let rest = &template[i..];
        if rest.starts_with('[') {
            if let Some(close) = rest.find(']') {
                let name = &rest[1..close];
                if let Some((_, value)) = substitutions.iter().find(|(n, _)| *n == name) {
                    out.push_str(value);
                    i += close + 1;
                    continue;
                }
            }
        }
        let c = rest.chars().next().expect("in bounds");
        out.push(c);
        i += c.len_utf8();
    }
    out
}

pub fn has_placeholder(text: &str, name: &str) -> bool {
    text.contains(&format!("[{name}]"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_substitutes_all_occurrences() {
        let out = render("[a] and [a] and [b]", &[("a", "x"), ("b", "y")]);
        assert_eq!(out, "x and x and y");
    }

    #[test]
    fn render_never_rescans_substituted_values() {
        let out = render("[a] [b]", &[("a", "[b]"), ("b", "y")]);
        assert_eq!(out, "[b] y");
    }

    #[test]
    fn render_leaves_unknown_brackets() {
        let out = render("keep [CHAR 0] as-is, fill [x]", &[("x", "v")]);
        assert_eq!(out, "keep [CHAR 0] as-is, fill v");
    }

    #[test]
    fn templates_end_with_answer_cue() {
        for t in [
            GENERATION,
            AMBIGUITY,
            INFORMATIVE,
            COT_TURN1,
            COT_TURN2,
            ENTAILMENT,
            PREDICT,
            SUMMARY,
        ] {
            assert!(
                t.trim_end().ends_with("Answer:"),
                "template missing final cue"
            );
        }
        assert!(SIMPLIFY.trim_end().ends_with("Split Sentences:"));
    }

    #[test]
    fn icl_templates_have_expected_exemplar_counts() {
        // 21 ambiguity exemplars plus the final slot; 20 informative.
        assert_eq!(AMBIGUITY.matches("Question: [question_text]").count(), 22);
        assert_eq!(INFORMATIVE.matches("Question: [question_text]").count(), 21);
        assert_eq!(SIMPLIFY.matches("\nSentence:").count(), 11);
    }
}
