//! The small-agent side of the protocol: a policy that reads the rendered
//! conversation and emits tagged text.
//!
//! Two policies ship. [`RemoteAgent`] asks a chat endpoint to produce the
//! emission, which is how a trained model is driven. [`ToyAgent`] is a
//! four-action softmax policy over canned emissions; it is small enough to
//! optimize in-process and is the ground truth for the policy-gradient math
//! in [`crate::grpo`].

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grpo::softmax;
use crate::history::{History, Question};
use crate::wire::{ChatMessage, RetryPolicy, WireClient, WireError};

/// Appended to the rendered context when the interaction budget is spent,
/// telling the policy this emission must be the final one.
pub const FORCED_ANSWER_INSTRUCTION: &str = "You have no interaction rounds left. Do not send \
another <interaction_prompt>. Reply with <think>...</think> followed by <answer>...</answer> \
containing your final answer.";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AgentError {
    #[error("agent backend unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: u32, message: String },
}

impl From<WireError> for AgentError {
    fn from(err: WireError) -> Self {
        match err {
            WireError::Unavailable { attempts, message } => {
                AgentError::Unavailable { attempts, message }
            }
            WireError::Rejected { status, message } => AgentError::Unavailable {
                attempts: 1,
                message: format!("HTTP {status}: {message}"),
            },
            WireError::Protocol(message) => AgentError::Unavailable {
                attempts: 1,
                message,
            },
        }
    }
}

/// What the policy sees when asked to emit: the conversation so far plus
/// whether this emission is the forced final one.
#[derive(Debug, Clone, Copy)]
pub struct AgentContext<'a> {
    pub history: &'a History,
    pub force_answer: bool,
}

impl AgentContext<'_> {
    /// The exact text presented to the policy: the full accumulated context,
    /// with the forced-answer instruction appended when the budget is spent.
    pub fn rendered_input(&self) -> String {
        let mut out = self.history.render_context();
        if self.force_answer {
            out.push('\n');
            out.push_str(FORCED_ANSWER_INSTRUCTION);
        }
        out
    }
}

/// One raw emission, with sampling bookkeeping when the policy exposes it.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentEmission {
    pub raw: String,
    /// Index of the sampled action, for policies with an enumerable action
    /// set (the toy policy). Remote policies report `None`.
    pub action: Option<usize>,
    /// Log-probability of the sampled action at emission time.
    pub log_prob: Option<f64>,
}

impl AgentEmission {
    pub fn raw_only(raw: impl Into<String>) -> Self {
        AgentEmission {
            raw: raw.into(),
            action: None,
            log_prob: None,
        }
    }
}

pub trait Agent: Send + Sync {
    /// Produces the next emission. `seed` fully determines any sampling the
    /// policy does, so equal (context, seed) pairs give equal emissions for
    /// deterministic policies.
    fn emit(&self, ctx: &AgentContext<'_>, seed: u64) -> Result<AgentEmission, AgentError>;
}

/// The toy policy's action alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyAction {
    /// Emit a well-formed think + interaction prompt.
    Interact = 0,
    /// Emit a well-formed think + the correct answer.
    CorrectAnswer = 1,
    /// Emit a well-formed think + a wrong answer.
    WrongAnswer = 2,
    /// Emit text with a broken tag structure.
    Malformed = 3,
}

pub const TOY_ACTION_COUNT: usize = 4;

impl ToyAction {
    pub const ALL: [ToyAction; TOY_ACTION_COUNT] = [
        ToyAction::Interact,
        ToyAction::CorrectAnswer,
        ToyAction::WrongAnswer,
        ToyAction::Malformed,
    ];

    pub fn from_index(index: usize) -> Option<ToyAction> {
        ToyAction::ALL.get(index).copied()
    }
}

/// Softmax policy over the four toy actions, sampled i.i.d. per emission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicyParams {
    pub logits: Vec<f64>,
}

impl Default for ToyPolicyParams {
    fn default() -> Self {
        ToyPolicyParams::uniform()
    }
}

impl ToyPolicyParams {
    /// All-zero logits: the uniform distribution over actions.
    pub fn uniform() -> Self {
        ToyPolicyParams {
            logits: vec![0.0; TOY_ACTION_COUNT],
        }
    }

    pub fn probs(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn log_prob(&self, action: usize) -> f64 {
        self.probs()[action].ln()
    }

    /// Inverse-CDF sample from the action distribution.
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let probs = self.probs();
        let draw: f64 = rng.gen();
        let mut cumulative = 0.0;
        for (index, p) in probs.iter().enumerate() {
            cumulative += p;
            if draw < cumulative {
                return index;
            }
        }
        probs.len() - 1
    }
}

/// In-process policy emitting canned protocol text per sampled action.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyAgent {
    pub params: ToyPolicyParams,
    pub correct_answer: String,
    pub wrong_answer: String,
}

impl ToyAgent {
    pub fn new(
        params: ToyPolicyParams,
        correct_answer: impl Into<String>,
        wrong_answer: impl Into<String>,
    ) -> Self {
        ToyAgent {
            params,
            correct_answer: correct_answer.into(),
            wrong_answer: wrong_answer.into(),
        }
    }

    /// A toy agent whose correct action answers with the question's first
    /// gold answer; used when driving arbitrary datasets with the toy policy.
    pub fn for_question(question: &Question, params: ToyPolicyParams) -> Self {
        let correct = question
            .gold_answers
            .first()
            .cloned()
            .unwrap_or_default();
        ToyAgent::new(params, correct, "I do not know")
    }

    /// The emission text for each action. Public so tests can assert on the
    /// exact protocol text the policy produces.
    pub fn render_action(&self, action: ToyAction, ctx: &AgentContext<'_>) -> String {
        match action {
            ToyAction::Interact => format!(
                "<think>I need more information before answering.</think>\n\
                 <interaction_prompt>{}</interaction_prompt>",
                ctx.history.question.text
            ),
            ToyAction::CorrectAnswer => format!(
                "<think>I am confident in the answer.</think>\n<answer>{}</answer>",
                self.correct_answer
            ),
            ToyAction::WrongAnswer => format!(
                "<think>I will guess.</think>\n<answer>{}</answer>",
                self.wrong_answer
            ),
            ToyAction::Malformed => "<think>I lost track of the tag format".to_string(),
        }
    }
}

impl Agent for ToyAgent {
    fn emit(&self, ctx: &AgentContext<'_>, seed: u64) -> Result<AgentEmission, AgentError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let action = self.params.sample(&mut rng);
        let log_prob = self.params.log_prob(action);
        let toy_action = ToyAction::from_index(action).expect("sample stays in range");
        Ok(AgentEmission {
            raw: self.render_action(toy_action, ctx),
            action: Some(action),
            log_prob: Some(log_prob),
        })
    }
}

/// Policy backed by a chat endpoint: the rendered context goes out as a
/// single user message and the completion comes back as the raw emission.
pub struct RemoteAgent {
    endpoint: String,
    model_name: String,
    max_tokens: u32,
    temperature: f64,
    client: WireClient,
}

impl RemoteAgent {
    pub fn new(endpoint: impl Into<String>, model_name: impl Into<String>) -> Self {
        RemoteAgent {
            endpoint: endpoint.into(),
            model_name: model_name.into(),
            max_tokens: 1024,
            temperature: 1.0,
            client: WireClient::from_env(),
        }
    }

    pub fn with_limits(mut self, max_tokens: u32, temperature: f64) -> Self {
        self.max_tokens = max_tokens;
        self.temperature = temperature;
        self
    }

    pub fn with_client(mut self, client: WireClient) -> Self {
        self.client = client;
        self
    }

    pub fn without_backoff(self) -> Self {
        let client = self.client.clone().with_retry(RetryPolicy::without_backoff());
        self.with_client(client)
    }
}

impl Agent for RemoteAgent {
    fn emit(&self, ctx: &AgentContext<'_>, _seed: u64) -> Result<AgentEmission, AgentError> {
        let outcome = self.client.chat(
            &self.endpoint,
            &self.model_name,
            vec![ChatMessage::user(ctx.rendered_input())],
            self.max_tokens,
            self.temperature,
        )?;
        if outcome.truncated {
            log::warn!("agent emission hit the response-length limit; parsing what arrived");
        }
        Ok(AgentEmission::raw_only(outcome.content))
    }
}
