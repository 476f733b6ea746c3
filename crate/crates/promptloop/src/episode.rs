//! The multi-turn interaction loop: drives one question from the opening
//! emission to a final answer (or a forced one), producing a [`Trajectory`].
//!
//! One episode alternates agent emissions with environment responses.
//! An emission carrying a well-formed answer ends the episode; when the
//! round budget runs out first, the loop requests one last emission with
//! [`FORCED_ANSWER_INSTRUCTION`](crate::agent::FORCED_ANSWER_INSTRUCTION)
//! appended. Malformed emissions are not errors — they become empty-prompt
//! rounds that earn no format credit downstream.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AgentContext, AgentError};
use crate::env::{EnvError, Environment};
use crate::history::{History, PromptTemplate, Question, Trajectory, TrajectoryMeta, Turn};
use crate::mix_seed;
use crate::parser;

/// Round budget and per-response cap for one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    /// Interaction rounds before the forced final emission (and therefore
    /// the maximum number of environment calls).
    pub max_turns: usize,
    /// Hard cap on whitespace tokens kept from a single environment
    /// response; longer responses are cut at the cap.
    pub max_single_turn_response_tokens: usize,
    /// When false, answer segments do not terminate the episode early; the
    /// loop always plays out the full budget plus the forced final.
    pub stop_on_answer: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            max_turns: 5,
            max_single_turn_response_tokens: 1024,
            stop_on_answer: true,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), EpisodeError> {
        if self.max_turns == 0 {
            return Err(EpisodeError::InvalidConfig("max_turns must be at least 1".into()));
        }
        if self.max_single_turn_response_tokens == 0 {
            return Err(EpisodeError::InvalidConfig(
                "max_single_turn_response_tokens must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("invalid loop configuration: {0}")]
    InvalidConfig(String),
    /// The environment failed; everything recorded before the failure rides
    /// along so callers can log the partial episode.
    #[error("environment failed mid-episode: {source}")]
    Env {
        source: EnvError,
        partial: Box<Trajectory>,
    },
    #[error("agent failed mid-episode: {source}")]
    Agent {
        source: AgentError,
        partial: Box<Trajectory>,
    },
}

/// Mutable episode state, bundled so error paths can snapshot it.
struct EpisodeState {
    history: History,
    emissions: Vec<String>,
    log_probs: Vec<f64>,
    actions: Vec<usize>,
    all_sampled: bool,
    prompt_tokens: usize,
    response_tokens: usize,
}

impl EpisodeState {
    fn new(question: Question, template: PromptTemplate) -> Self {
        EpisodeState {
            history: History::new(question, template),
            emissions: Vec::new(),
            log_probs: Vec::new(),
            actions: Vec::new(),
            all_sampled: true,
            prompt_tokens: 0,
            response_tokens: 0,
        }
    }

    fn record_emission(&mut self, raw: &str, action: Option<usize>, log_prob: Option<f64>) {
        self.emissions.push(raw.to_string());
        match (action, log_prob) {
            (Some(a), Some(lp)) => {
                self.actions.push(a);
                self.log_probs.push(lp);
            }
            _ => self.all_sampled = false,
        }
    }

    fn into_trajectory(
        self,
        final_think: Option<String>,
        final_answer: Option<String>,
        env_id: &str,
        seed: u64,
        start: Instant,
    ) -> Trajectory {
        let sampled = self.all_sampled && !self.actions.is_empty();
        Trajectory {
            history: self.history,
            emissions: self.emissions,
            final_think,
            final_answer,
            step_log_probs: sampled.then_some(self.log_probs),
            step_actions: sampled.then_some(self.actions),
            reward: None,
            meta: TrajectoryMeta {
                env_id: env_id.to_string(),
                seed,
                duration_ms: start.elapsed().as_millis() as u64,
                prompt_tokens: self.prompt_tokens,
                response_tokens: self.response_tokens,
            },
        }
    }
}

fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Cuts `text` after its `cap`-th whitespace token, reporting whether
/// anything was dropped. Whitespace inside the kept prefix is preserved.
fn truncate_to_tokens(text: &str, cap: usize) -> (String, bool) {
    let mut tokens = 0usize;
    let mut in_token = false;
    for (offset, ch) in text.char_indices() {
        if ch.is_whitespace() {
            in_token = false;
        } else if !in_token {
            in_token = true;
            tokens += 1;
            if tokens > cap {
                return (text[..offset].trim_end().to_string(), true);
            }
        }
    }
    (text.to_string(), false)
}

/// Runs one full episode against the given environment. Per-emission seeds
/// derive from `seed` via [`mix_seed`], so equal inputs replay identically
/// for deterministic agents and environments.
pub fn run_episode(
    agent: &dyn Agent,
    env: &dyn Environment,
    question: Question,
    template: PromptTemplate,
    config: &LoopConfig,
    seed: u64,
) -> Result<Trajectory, EpisodeError> {
    config.validate()?;
    let start = Instant::now();
    let mut state = EpisodeState::new(question, template);

    for round in 1..=config.max_turns {
        let ctx = AgentContext {
            history: &state.history,
            force_answer: false,
        };
        let emission = match agent.emit(&ctx, mix_seed(seed, (round - 1) as u64)) {
            Ok(emission) => emission,
            Err(source) => {
                return Err(EpisodeError::Agent {
                    source,
                    partial: Box::new(state.into_trajectory(None, None, env.id(), seed, start)),
                })
            }
        };
        state.record_emission(&emission.raw, emission.action, emission.log_prob);
        let parsed = parser::parse(&emission.raw);

        if config.stop_on_answer && parsed.has_answer() {
            return Ok(state.into_trajectory(parsed.think, parsed.answer, env.id(), seed, start));
        }

        let turn = match parsed.prompt {
            Some(prompt) if parsed.prompt_well_formed => {
                state.prompt_tokens += count_tokens(&prompt);
                let response = match env.respond(&state.history, &prompt) {
                    Ok(response) => response,
                    Err(source) => {
                        return Err(EpisodeError::Env {
                            source,
                            partial: Box::new(
                                state.into_trajectory(None, None, env.id(), seed, start),
                            ),
                        })
                    }
                };
                let (text, cut) =
                    truncate_to_tokens(&response.text, config.max_single_turn_response_tokens);
                if response.truncated || cut {
                    log::warn!(
                        "round {round}: environment response truncated (backend: {}, local cap: {cut})",
                        response.truncated
                    );
                }
                state.response_tokens += count_tokens(&text);
                Turn {
                    index: round,
                    think: parsed.think.unwrap_or_default(),
                    prompt,
                    response: Some(text),
                }
            }
            // Prompt-less (or disabled-answer) emission: count the round,
            // call nothing.
            _ => Turn {
                index: round,
                think: parsed.think.unwrap_or_default(),
                prompt: String::new(),
                response: Some(String::new()),
            },
        };
        state.history = state
            .history
            .append_turn(turn)
            .expect("round indices increase one at a time");
    }

    // Budget spent without a terminal answer: request exactly one more
    // emission with the answer-now instruction appended.
    let ctx = AgentContext {
        history: &state.history,
        force_answer: true,
    };
    let emission = match agent.emit(&ctx, mix_seed(seed, config.max_turns as u64)) {
        Ok(emission) => emission,
        Err(source) => {
            return Err(EpisodeError::Agent {
                source,
                partial: Box::new(state.into_trajectory(None, None, env.id(), seed, start)),
            })
        }
    };
    state.record_emission(&emission.raw, emission.action, emission.log_prob);
    let parsed = parser::parse(&emission.raw);
    Ok(state.into_trajectory(parsed.think, parsed.answer, env.id(), seed, start))
}
