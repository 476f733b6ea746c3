//! Tag grammar for agent emissions.
//!
//! An emission may carry up to three tagged segments: `<think>` reasoning,
//! an `<interaction_prompt>` for the environment, and a final `<answer>`.
//! Parsing is total — malformed text never errors, it just yields absent
//! segments — because malformedness is a *reward* signal, not a fault.
//!
//! [`extract_signals`] turns the per-round parses into the binary indicators
//! the format reward sums: one completeness bit per intermediate turn, plus
//! answer-parseable / answer-non-empty / final-complete bits for the last
//! emission.

use serde::{Deserialize, Serialize};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const PROMPT_OPEN: &str = "<interaction_prompt>";
pub const PROMPT_CLOSE: &str = "</interaction_prompt>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";
/// Environment responses are rendered back into the context inside this pair.
pub const RESPONSE_OPEN: &str = "<interaction_response>";
pub const RESPONSE_CLOSE: &str = "</interaction_response>";

/// Segments recovered from one raw agent emission.
///
/// A segment is `Some` exactly when its open tag and a matching close tag
/// were found in order; the `*_well_formed` flags expose the same fact
/// explicitly so callers scoring format quality don't have to re-derive it.
/// Inner text is trimmed of surrounding whitespace, so `Some("")` means
/// "present but empty" — distinct from absent.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParsedOutput {
    pub think: Option<String>,
    pub prompt: Option<String>,
    pub answer: Option<String>,
    pub think_well_formed: bool,
    pub prompt_well_formed: bool,
    pub answer_well_formed: bool,
}

impl ParsedOutput {
    /// True when the emission carries a well-formed answer segment.
    pub fn has_answer(&self) -> bool {
        self.answer.is_some()
    }
}

/// Extracts the first well-nested occurrence of a tag pair.
///
/// Everything between the first open tag and the first close tag after it is
/// the segment text; any tags inside are treated as plain text. Returns
/// `None` when the open tag is missing, or when no close tag follows it.
fn first_segment(raw: &str, open: &str, close: &str) -> Option<String> {
    let start = raw.find(open)? + open.len();
    let end = raw[start..].find(close)? + start;
    Some(raw[start..end].trim().to_string())
}

/// Parses a raw emission into its tagged segments. Total: never fails.
///
/// Tags are case-sensitive exact spellings; multiple occurrences of a pair
/// resolve to the first, matching the one-action-per-emission protocol.
pub fn parse(raw: &str) -> ParsedOutput {
    let think = first_segment(raw, THINK_OPEN, THINK_CLOSE);
    let prompt = first_segment(raw, PROMPT_OPEN, PROMPT_CLOSE);
    let answer = first_segment(raw, ANSWER_OPEN, ANSWER_CLOSE);
    ParsedOutput {
        think_well_formed: think.is_some(),
        prompt_well_formed: prompt.is_some(),
        answer_well_formed: answer.is_some(),
        think,
        prompt,
        answer,
    }
}

/// Binary format indicators for a whole episode.
///
/// `turn_complete[i]` is the per-intermediate-round completeness bit (think
/// and prompt both present and non-empty); the remaining three bits describe
/// the final emission. By construction `answer_non_empty` implies
/// `answer_parseable`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FormatSignals {
    pub turn_complete: Vec<bool>,
    pub answer_parseable: bool,
    pub answer_non_empty: bool,
    pub final_complete: bool,
}

impl FormatSignals {
    /// Number of intermediate rounds whose completeness bit is set.
    pub fn completed_turns(&self) -> usize {
        self.turn_complete.iter().filter(|&&m| m).count()
    }
}

fn present_non_empty(segment: &Option<String>) -> bool {
    segment.as_deref().is_some_and(|s| !s.is_empty())
}

/// Computes format signals from the intermediate-round parses and the final
/// parse. Pure: same inputs always produce the same signals.
pub fn extract_signals(intermediate: &[ParsedOutput], final_output: &ParsedOutput) -> FormatSignals {
    let turn_complete = intermediate
        .iter()
        .map(|p| present_non_empty(&p.think) && present_non_empty(&p.prompt))
        .collect();
    let answer_parseable = final_output.answer.is_some();
    let answer_non_empty = answer_parseable && present_non_empty(&final_output.answer);
    let final_complete = final_output.think.is_some() && final_output.answer.is_some();
    FormatSignals {
        turn_complete,
        answer_parseable,
        answer_non_empty,
        final_complete,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_think_and_prompt() {
        let out = parse("<think>a</think><interaction_prompt>b</interaction_prompt>");
        assert_eq!(out.think.as_deref(), Some("a"));
        assert_eq!(out.prompt.as_deref(), Some("b"));
        assert_eq!(out.answer, None);
        assert!(!out.answer_well_formed);
    }

    #[test]
    fn empty_think_is_present_but_empty() {
        let out = parse("<think></think><answer>x</answer>");
        assert_eq!(out.think.as_deref(), Some(""));
        assert!(out.think_well_formed);
        assert_eq!(out.answer.as_deref(), Some("x"));
    }

    #[test]
    fn unclosed_answer_is_absent() {
        let out = parse("<answer>y");
        assert_eq!(out.answer, None);
        assert!(!out.answer_well_formed);
    }

    #[test]
    fn close_before_open_is_absent() {
        let out = parse("</think>backwards<think>");
        assert_eq!(out.think, None);
    }

    #[test]
    fn first_occurrence_wins() {
        let out = parse("<answer>one</answer><answer>two</answer>");
        assert_eq!(out.answer.as_deref(), Some("one"));
    }

    #[test]
    fn inner_tags_are_plain_text() {
        // The first close tag terminates the segment; anything between is
        // kept verbatim, including stray open tags.
        let out = parse("<answer>a <b>bold</b> z</answer>");
        assert_eq!(out.answer.as_deref(), Some("a <b>bold</b> z"));
    }

    #[test]
    fn inner_text_is_trimmed() {
        let out = parse("<think>\n  padded  \n</think>");
        assert_eq!(out.think.as_deref(), Some("padded"));
    }

    #[test]
    fn tags_are_case_sensitive() {
        let out = parse("<THINK>a</THINK>");
        assert_eq!(out.think, None);
    }

    #[test]
    fn signals_all_perfect() {
        let turn = parse("<think>t</think><interaction_prompt>p</interaction_prompt>");
        let fin = parse("<think>f</think><answer>y</answer>");
        let s = extract_signals(&[turn.clone(), turn], &fin);
        assert_eq!(s.turn_complete, vec![true, true]);
        assert!(s.answer_parseable && s.answer_non_empty && s.final_complete);
        assert_eq!(s.completed_turns(), 2);
    }

    #[test]
    fn whitespace_only_answer_is_parseable_but_empty() {
        let fin = parse("<think>f</think><answer>  </answer>");
        let s = extract_signals(&[], &fin);
        assert!(s.answer_parseable);
        assert!(!s.answer_non_empty);
        assert!(s.final_complete);
    }

    #[test]
    fn missing_prompt_zeroes_only_that_turn() {
        let good = parse("<think>t</think><interaction_prompt>p</interaction_prompt>");
        let bad = parse("<think>t</think>");
        let s = extract_signals(&[good, bad], &ParsedOutput::default());
        assert_eq!(s.turn_complete, vec![true, false]);
    }

    #[test]
    fn empty_think_does_not_complete_a_turn() {
        let turn = parse("<think></think><interaction_prompt>p</interaction_prompt>");
        let s = extract_signals(&[turn], &ParsedOutput::default());
        assert_eq!(s.turn_complete, vec![false]);
    }

    #[test]
    fn answerless_final_clears_all_final_bits() {
        let fin = parse("<think>only thinking</think>");
        let s = extract_signals(&[], &fin);
        assert!(!s.answer_parseable && !s.answer_non_empty && !s.final_complete);
    }

    /// Segment text free of tag markup, so round-tripping is unambiguous.
    fn tagless_text() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9 ,.?!]{0,40}".prop_map(|s| s.trim().to_string())
    }

    proptest! {
        #[test]
        fn parse_render_round_trip(think in tagless_text(), prompt in tagless_text(), answer in tagless_text()) {
            let raw = format!(
                "{THINK_OPEN}{think}{THINK_CLOSE}\n{PROMPT_OPEN}{prompt}{PROMPT_CLOSE}\n{ANSWER_OPEN}{answer}{ANSWER_CLOSE}"
            );
            let out = parse(&raw);
            prop_assert_eq!(out.think.as_deref(), Some(think.as_str()));
            prop_assert_eq!(out.prompt.as_deref(), Some(prompt.as_str()));
            prop_assert_eq!(out.answer.as_deref(), Some(answer.as_str()));
        }

        #[test]
        fn non_empty_answer_implies_parseable(raw in ".{0,80}") {
            let s = extract_signals(&[], &parse(&raw));
            prop_assert!(!s.answer_non_empty || s.answer_parseable);
        }

        #[test]
        fn extract_signals_is_pure(raw in ".{0,80}") {
            let p = parse(&raw);
            let rounds = std::slice::from_ref(&p);
            prop_assert_eq!(extract_signals(rounds, &p), extract_signals(rounds, &p));
        }
    }
}
