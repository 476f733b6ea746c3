//! Questions, templates, turns, and the append-only interaction history.
//!
//! A [`History`] starts empty and grows by one completed [`Turn`] per
//! interaction round. [`History::render_context`] is the agent's full state:
//! the instantiated template followed by every turn's think / prompt /
//! response, each wrapped in its protocol tag. Rendering is cumulative —
//! appending a turn appends exactly one block of text — so the rendering of
//! any prefix of a history is a textual prefix of the rendering of the whole.
//!
//! A completed episode is captured as a [`Trajectory`]: the final history,
//! every raw emission in order, the final think/answer (either may be absent
//! when the agent misbehaves — that is a reward problem, not an error), and
//! optional per-step log-probs for the trainable toy policy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parser::{
    self, FormatSignals, ANSWER_CLOSE, ANSWER_OPEN, PROMPT_CLOSE, PROMPT_OPEN, RESPONSE_CLOSE,
    RESPONSE_OPEN, THINK_CLOSE, THINK_OPEN,
};
use crate::reward::RewardBreakdown;

/// Substitution slot a template body must contain exactly once.
pub const QUESTION_SLOT: &str = "{question}";

/// The default initial template handed to the agent, instructing it to
/// explain the question first, interact round by round, and close with a
/// tagged answer.
pub const DEFAULT_TEMPLATE: &str = "\
First, provide a simple explanation of the question and give it to the large language model for a more accurate answer. Focus on explaining the question without deep reasoning in the first step. After receiving the response, think about the large language model's response, and by interacting with the large language model again and again, arrive at the final answer. Proceed step by step with the following rules:
<think> (don't think deeply and no more than 50 words) </think>
<interaction_prompt> (give the question and its explanation to the large language model) </interaction_prompt>
After the first step, in each interaction with the large language model, write:
<think> (your reasoning for the receiving response and question) </think>
<interaction_prompt> (new request to refine or validate the answer) </interaction_prompt>
Each <interaction_prompt> must build on what came before. Do not just repeat the same content. Let the content of the <interaction_prompt>...</interaction_prompt> evolve naturally (for example: outline → add details → refine → check).
Continue producing think within <think>...</think> and call tool within <interaction_prompt>...</interaction_prompt> until the answer is ready.
Once the answer is complete, write:
<think> (final reasoning with the <interaction_response> and question) </think>
<answer> (final answer for the question) </answer>
Question: {question}.";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HistoryError {
    #[error("question text is empty")]
    EmptyQuestionText,
    #[error("question has no gold answers")]
    EmptyGoldAnswers,
    #[error("template must contain the {QUESTION_SLOT} slot exactly once (found {found})")]
    BadQuestionSlot { found: usize },
    #[error("template does not declare the tag pair {open}...{close}")]
    MissingTagPair {
        open: &'static str,
        close: &'static str,
    },
    #[error("turn index {got} does not continue the history (expected {expected})")]
    IndexGap { expected: usize, got: usize },
    #[error("turn {index} has no response yet; only completed turns can be appended")]
    IncompleteTurn { index: usize },
}

/// A question with its non-empty reference answer set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub gold_answers: Vec<String>,
    pub task_tag: String,
}

impl Question {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        gold_answers: Vec<String>,
        task_tag: impl Into<String>,
    ) -> Result<Self, HistoryError> {
        let text = text.into();
        if text.is_empty() {
            return Err(HistoryError::EmptyQuestionText);
        }
        if gold_answers.is_empty() {
            return Err(HistoryError::EmptyGoldAnswers);
        }
        Ok(Question {
            id: id.into(),
            text,
            gold_answers,
            task_tag: task_tag.into(),
        })
    }
}

/// The initial instruction template with a single `{question}` slot.
///
/// Constructing one validates that the slot appears exactly once and that all
/// three protocol tag pairs are declared, so an instantiated template always
/// teaches the grammar the parser expects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    body: String,
}

impl PromptTemplate {
    pub fn new(body: impl Into<String>) -> Result<Self, HistoryError> {
        let body = body.into();
        let found = body.matches(QUESTION_SLOT).count();
        if found != 1 {
            return Err(HistoryError::BadQuestionSlot { found });
        }
        for (open, close) in [
            (THINK_OPEN, THINK_CLOSE),
            (PROMPT_OPEN, PROMPT_CLOSE),
            (ANSWER_OPEN, ANSWER_CLOSE),
        ] {
            if !body.contains(open) || !body.contains(close) {
                return Err(HistoryError::MissingTagPair { open, close });
            }
        }
        Ok(PromptTemplate { body })
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Substitutes the question text into the slot.
    pub fn instantiate(&self, question_text: &str) -> String {
        self.body.replacen(QUESTION_SLOT, question_text, 1)
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::new(DEFAULT_TEMPLATE).expect("built-in template is valid")
    }
}

/// One interaction round: the agent's think and prompt, and the environment's
/// response once it has replied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    /// 1-based round number.
    pub index: usize,
    pub think: String,
    pub prompt: String,
    pub response: Option<String>,
}

impl Turn {
    pub fn completed(&self) -> bool {
        self.response.is_some()
    }

    /// The text block this turn contributes to the rendered context.
    pub fn render_block(&self) -> String {
        format!(
            "\n{THINK_OPEN}{}{THINK_CLOSE}\n{PROMPT_OPEN}{}{PROMPT_CLOSE}\n{RESPONSE_OPEN}{}{RESPONSE_CLOSE}",
            self.think,
            self.prompt,
            self.response.as_deref().unwrap_or("")
        )
    }
}

/// The ordered, append-only record of completed interaction rounds.
///
/// Value semantics: [`History::append_turn`] returns a new history and leaves
/// the original untouched, which keeps partially-shared histories safe to
/// hand between threads without locks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    pub question: Question,
    pub template: PromptTemplate,
    turns: Vec<Turn>,
}

impl History {
    /// An empty history — the episode start state.
    pub fn new(question: Question, template: PromptTemplate) -> Self {
        History {
            question,
            template,
            turns: Vec::new(),
        }
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// Appends a completed turn, enforcing contiguous 1-based indices.
    pub fn append_turn(&self, turn: Turn) -> Result<History, HistoryError> {
        let expected = self.turns.len() + 1;
        if turn.index != expected {
            return Err(HistoryError::IndexGap {
                expected,
                got: turn.index,
            });
        }
        if !turn.completed() {
            return Err(HistoryError::IncompleteTurn { index: turn.index });
        }
        let mut next = self.clone();
        next.turns.push(turn);
        Ok(next)
    }

    /// Renders the agent's full context: the instantiated template followed
    /// by one tagged block per completed turn, separated by single newlines.
    pub fn render_context(&self) -> String {
        let mut out = self.template.instantiate(&self.question.text);
        for turn in &self.turns {
            out.push_str(&turn.render_block());
        }
        out
    }
}

/// Wall-clock and accounting metadata for a finished episode.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    /// Which environment answered the prompts.
    pub env_id: String,
    pub seed: u64,
    pub duration_ms: u64,
    /// Whitespace-token count across all prompts sent to the environment.
    pub prompt_tokens: usize,
    /// Whitespace-token count across all environment responses.
    pub response_tokens: usize,
}

/// A complete episode: the unit of reward and policy optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub history: History,
    /// Every raw agent emission in order; the last one is the final emission.
    pub emissions: Vec<String>,
    pub final_think: Option<String>,
    /// Absent when the agent never produced a well-formed answer.
    pub final_answer: Option<String>,
    /// Per-emission log-probabilities (toy policy only).
    pub step_log_probs: Option<Vec<f64>>,
    /// Per-emission sampled action indices (toy policy only).
    pub step_actions: Option<Vec<usize>>,
    pub reward: Option<RewardBreakdown>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    /// Raw emissions of the intermediate rounds (everything but the last).
    pub fn intermediate_emissions(&self) -> &[String] {
        match self.emissions.len() {
            0 => &[],
            n => &self.emissions[..n - 1],
        }
    }

    /// Raw text of the final emission, if any emission happened at all.
    pub fn final_emission(&self) -> Option<&str> {
        self.emissions.last().map(String::as_str)
    }

    /// The answer text used for scoring; empty when no answer was parsed.
    pub fn answer_text(&self) -> &str {
        self.final_answer.as_deref().unwrap_or("")
    }

    /// Re-parses the recorded emissions into reward format signals.
    pub fn format_signals(&self) -> FormatSignals {
        let Some(final_raw) = self.final_emission() else {
            return FormatSignals::default();
        };
        let intermediate: Vec<_> = self
            .intermediate_emissions()
            .iter()
            .map(|raw| parser::parse(raw))
            .collect();
        parser::extract_signals(&intermediate, &parser::parse(final_raw))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn question() -> Question {
        Question::new("q1", "What is the capital of France?", vec!["Paris".into()], "qa")
            .unwrap()
    }

    fn turn(index: usize, text: &str) -> Turn {
        Turn {
            index,
            think: format!("think {text}"),
            prompt: format!("prompt {text}"),
            response: Some(format!("response {text}")),
        }
    }

    #[test]
    fn question_rejects_empty_text_and_golds() {
        assert_eq!(
            Question::new("q", "", vec!["x".into()], "t"),
            Err(HistoryError::EmptyQuestionText)
        );
        assert_eq!(
            Question::new("q", "x", vec![], "t"),
            Err(HistoryError::EmptyGoldAnswers)
        );
    }

    #[test]
    fn default_template_is_valid_and_instantiates() {
        let tmpl = PromptTemplate::default();
        let text = tmpl.instantiate("Q");
        assert!(text.contains("Question: Q."));
        assert!(!text.contains(QUESTION_SLOT));
    }

    #[test]
    fn template_requires_exactly_one_slot() {
        assert!(matches!(
            PromptTemplate::new("<think></think><interaction_prompt></interaction_prompt><answer></answer> no slot"),
            Err(HistoryError::BadQuestionSlot { found: 0 })
        ));
        assert!(matches!(
            PromptTemplate::new(
                "<think></think><interaction_prompt></interaction_prompt><answer></answer> {question} {question}"
            ),
            Err(HistoryError::BadQuestionSlot { found: 2 })
        ));
    }

    #[test]
    fn template_requires_all_tag_pairs() {
        let err = PromptTemplate::new("<think></think> {question}").unwrap_err();
        assert!(matches!(err, HistoryError::MissingTagPair { .. }));
    }

    #[test]
    fn empty_history_renders_just_the_template() {
        let h = History::new(question(), PromptTemplate::default());
        assert_eq!(h.render_context(), PromptTemplate::default().instantiate(&h.question.text));
    }

    #[test]
    fn one_turn_adds_one_block_of_each_tag() {
        let h = History::new(question(), PromptTemplate::default());
        let h1 = h.append_turn(turn(1, "a")).unwrap();
        let rendered = h1.render_context();
        let suffix = &rendered[h.render_context().len()..];
        assert_eq!(suffix.matches(THINK_OPEN).count(), 1);
        assert_eq!(suffix.matches(PROMPT_OPEN).count(), 1);
        assert_eq!(suffix.matches(RESPONSE_OPEN).count(), 1);
        assert_eq!(suffix.matches(RESPONSE_CLOSE).count(), 1);
    }

    #[test]
    fn append_law_render_is_render_plus_block() {
        let h = History::new(question(), PromptTemplate::default());
        let t = turn(1, "x");
        let appended = h.append_turn(t.clone()).unwrap();
        assert_eq!(
            appended.render_context(),
            format!("{}{}", h.render_context(), t.render_block())
        );
    }

    #[test]
    fn append_preserves_original() {
        let h0 = History::new(question(), PromptTemplate::default());
        let h1 = h0.append_turn(turn(1, "a")).unwrap();
        assert_eq!(h0.len(), 0);
        assert_eq!(h1.len(), 1);
    }

    #[test]
    fn index_gap_is_rejected() {
        let h = History::new(question(), PromptTemplate::default());
        let h1 = h.append_turn(turn(1, "a")).unwrap();
        assert_eq!(
            h1.append_turn(turn(3, "b")),
            Err(HistoryError::IndexGap { expected: 2, got: 3 })
        );
    }

    #[test]
    fn incomplete_turn_is_rejected() {
        let h = History::new(question(), PromptTemplate::default());
        let mut t = turn(1, "a");
        t.response = None;
        assert_eq!(h.append_turn(t), Err(HistoryError::IncompleteTurn { index: 1 }));
    }

    #[test]
    fn two_appends_stay_ordered() {
        let h = History::new(question(), PromptTemplate::default())
            .append_turn(turn(1, "a"))
            .unwrap()
            .append_turn(turn(2, "b"))
            .unwrap();
        let indices: Vec<_> = h.turns().iter().map(|t| t.index).collect();
        assert_eq!(indices, vec![1, 2]);
    }

    #[test]
    fn trajectory_signals_from_recorded_emissions() {
        let h = History::new(question(), PromptTemplate::default());
        let traj = Trajectory {
            history: h,
            emissions: vec![
                "<think>t</think><interaction_prompt>p</interaction_prompt>".into(),
                "<think>f</think><answer>Paris</answer>".into(),
            ],
            final_think: Some("f".into()),
            final_answer: Some("Paris".into()),
            step_log_probs: None,
            step_actions: None,
            reward: None,
            meta: TrajectoryMeta::default(),
        };
        let s = traj.format_signals();
        assert_eq!(s.turn_complete, vec![true]);
        assert!(s.answer_parseable && s.answer_non_empty && s.final_complete);
        assert_eq!(traj.answer_text(), "Paris");
    }

    fn tagless() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9 ]{1,20}"
    }

    proptest! {
        /// Histories that differ in any turn text render differently.
        #[test]
        fn render_is_injective_on_turn_texts(
            a in tagless(), b in tagless(), c in tagless(), d in tagless()
        ) {
            prop_assume!(a != c || b != d);
            let base = History::new(question(), PromptTemplate::default());
            let h1 = base.append_turn(Turn { index: 1, think: a, prompt: b, response: Some("r".into()) }).unwrap();
            let h2 = base.append_turn(Turn { index: 1, think: c, prompt: d, response: Some("r".into()) }).unwrap();
            prop_assert_ne!(h1.render_context(), h2.render_context());
        }

        /// Rendering of a history is a textual prefix of any extension's rendering.
        #[test]
        fn render_prefix_property(texts in proptest::collection::vec(tagless(), 1..5)) {
            let mut h = History::new(question(), PromptTemplate::default());
            for (i, text) in texts.iter().enumerate() {
                let prev = h.render_context();
                h = h.append_turn(turn(i + 1, text)).unwrap();
                prop_assert!(h.render_context().starts_with(&prev));
            }
        }
    }
}
