//! Environment backends — the large-LLM side of the protocol — and the
//! session-level router that picks one per episode.
//!
//! Two backends ship: [`RemoteChatEnv`] speaks the chat-completions wire
//! protocol against a real endpoint, and [`ScriptedEnv`] answers from an
//! ordered rule list for deterministic tests and toy training. Both are
//! stateless between calls: every conversation turn is supplied per request,
//! so a backend handle can serve many concurrent episodes.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::{History, Question};
use crate::wire::{ChatMessage, RetryPolicy, WireClient, WireError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvError {
    #[error("environment unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: u32, message: String },
    #[error("environment returned only whitespace")]
    EmptyResponse,
    #[error("no environment registered under id {0:?}")]
    UnknownEnvId(String),
    #[error("invalid environment configuration: {0}")]
    InvalidSpec(String),
}

impl From<WireError> for EnvError {
    fn from(err: WireError) -> Self {
        match err {
            WireError::Unavailable { attempts, message } => {
                EnvError::Unavailable { attempts, message }
            }
            WireError::Rejected { status, message } => EnvError::Unavailable {
                attempts: 1,
                message: format!("HTTP {status}: {message}"),
            },
            WireError::Protocol(message) => EnvError::Unavailable {
                attempts: 1,
                message,
            },
        }
    }
}

/// One environment reply, with the backend's truncation report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvResponse {
    pub text: String,
    /// True when the backend stopped on its length limit.
    pub truncated: bool,
}

/// The large-LLM side of an interaction: given the conversation so far and a
/// fresh prompt, produce a response.
pub trait Environment: Send + Sync {
    fn id(&self) -> &str;
    fn respond(&self, history: &History, prompt: &str) -> Result<EnvResponse, EnvError>;
}

/// One entry of a scripted response table. A rule fires when the prompt
/// contains `match_substring` (always, if absent) and the 1-based turn
/// number is at least `min_turn` (always, if absent).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_substring: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_turn: Option<usize>,
    pub response: String,
}

impl ScriptedRule {
    /// A rule that fires on any prompt at any turn — the default response.
    pub fn default_response(response: impl Into<String>) -> Self {
        ScriptedRule {
            match_substring: None,
            min_turn: None,
            response: response.into(),
        }
    }

    pub fn matches(&self, turn: usize, prompt: &str) -> bool {
        let substring_ok = self
            .match_substring
            .as_deref()
            .is_none_or(|needle| prompt.contains(needle));
        let turn_ok = self.min_turn.is_none_or(|min| turn >= min);
        substring_ok && turn_ok
    }

    fn is_catch_all(&self) -> bool {
        self.match_substring.as_deref().is_none_or(str::is_empty)
            && self.min_turn.is_none_or(|min| min <= 1)
    }
}

/// Deterministic environment answering from an ordered rule list (first
/// match wins). Construction requires a catch-all rule so every prompt has
/// an answer.
#[derive(Debug, Clone)]
pub struct ScriptedEnv {
    id: String,
    rules: Vec<ScriptedRule>,
}

impl ScriptedEnv {
    pub fn new(id: impl Into<String>, rules: Vec<ScriptedRule>) -> Result<Self, EnvError> {
        if !rules.iter().any(ScriptedRule::is_catch_all) {
            return Err(EnvError::InvalidSpec(
                "scripted rules must include a default (catch-all) rule".into(),
            ));
        }
        Ok(ScriptedEnv {
            id: id.into(),
            rules,
        })
    }

    /// Parses the rules-file format: a JSON list of
    /// `{match_substring, min_turn, response}` objects applied in order.
    pub fn from_rules_json(id: impl Into<String>, json: &str) -> Result<Self, EnvError> {
        let rules: Vec<ScriptedRule> = serde_json::from_str(json)
            .map_err(|err| EnvError::InvalidSpec(format!("bad rules JSON: {err}")))?;
        ScriptedEnv::new(id, rules)
    }

    pub fn from_rules_file(id: impl Into<String>, path: impl AsRef<Path>) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|err| {
            EnvError::InvalidSpec(format!("cannot read rules file {:?}: {err}", path.as_ref()))
        })?;
        ScriptedEnv::from_rules_json(id, &text)
    }

    pub fn rules(&self) -> &[ScriptedRule] {
        &self.rules
    }

    /// Rule resolution for a (turn, prompt) pair, independent of a History.
    pub fn response_for(&self, turn: usize, prompt: &str) -> &str {
        self.rules
            .iter()
            .find(|rule| rule.matches(turn, prompt))
            .map(|rule| rule.response.as_str())
            .unwrap_or("") // unreachable: construction guarantees a catch-all
    }
}

impl Environment for ScriptedEnv {
    fn id(&self) -> &str {
        &self.id
    }

    fn respond(&self, history: &History, prompt: &str) -> Result<EnvResponse, EnvError> {
        let turn = history.len() + 1;
        let text = self.response_for(turn, prompt);
        if text.trim().is_empty() {
            return Err(EnvError::EmptyResponse);
        }
        Ok(EnvResponse {
            text: text.to_string(),
            truncated: false,
        })
    }
}

/// Maps a conversation onto chat-completions messages: the instantiated
/// template and the first prompt form the first user message; after that,
/// prompts are user messages and responses assistant messages. Rounds where
/// the agent sent nothing (empty prompt and response) are skipped — they
/// carry no content for the environment.
pub fn chat_messages(history: &History, prompt: &str) -> Vec<ChatMessage> {
    let intro = history.template.instantiate(&history.question.text);
    let exchanges: Vec<(&str, &str)> = history
        .turns()
        .iter()
        .map(|t| (t.prompt.as_str(), t.response.as_deref().unwrap_or("")))
        .filter(|(p, r)| !(p.is_empty() && r.is_empty()))
        .collect();
    let mut messages = Vec::with_capacity(exchanges.len() * 2 + 1);
    match exchanges.first() {
        None => messages.push(ChatMessage::user(format!("{intro}\n{prompt}"))),
        Some((first_prompt, _)) => {
            messages.push(ChatMessage::user(format!("{intro}\n{first_prompt}")))
        }
    }
    for (i, (_, response)) in exchanges.iter().enumerate() {
        messages.push(ChatMessage::assistant(*response));
        match exchanges.get(i + 1) {
            Some((next_prompt, _)) => messages.push(ChatMessage::user(*next_prompt)),
            None => messages.push(ChatMessage::user(prompt)),
        }
    }
    messages
}

/// Chat-completions backend for a remote large LLM.
pub struct RemoteChatEnv {
    id: String,
    endpoint: String,
    model_name: String,
    max_response_tokens: u32,
    temperature: f64,
    client: WireClient,
}

impl RemoteChatEnv {
    pub fn new(
        id: impl Into<String>,
        endpoint: impl Into<String>,
        model_name: impl Into<String>,
    ) -> Self {
        RemoteChatEnv {
            id: id.into(),
            endpoint: endpoint.into(),
            model_name: model_name.into(),
            max_response_tokens: 1024,
            temperature: 0.0,
            client: WireClient::from_env(),
        }
    }

    pub fn with_limits(mut self, max_response_tokens: u32, temperature: f64) -> Self {
        self.max_response_tokens = max_response_tokens;
        self.temperature = temperature;
        self
    }

    pub fn with_client(mut self, client: WireClient) -> Self {
        self.client = client;
        self
    }

    /// No-sleep retries; failure tests stay fast without changing the
    /// attempt budget.
    pub fn without_backoff(self) -> Self {
        let client = self.client.clone().with_retry(RetryPolicy::without_backoff());
        self.with_client(client)
    }
}

impl Environment for RemoteChatEnv {
    fn id(&self) -> &str {
        &self.id
    }

    fn respond(&self, history: &History, prompt: &str) -> Result<EnvResponse, EnvError> {
        let messages = chat_messages(history, prompt);
        let outcome = self.client.chat(
            &self.endpoint,
            &self.model_name,
            messages,
            self.max_response_tokens,
            self.temperature,
        )?;
        if outcome.content.trim().is_empty() {
            return Err(EnvError::EmptyResponse);
        }
        Ok(EnvResponse {
            text: outcome.content,
            truncated: outcome.truncated,
        })
    }
}

/// Declarative description of an environment, as found in config files.
/// The id is supplied externally — config files key environments by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    #[serde(flatten)]
    pub kind: EnvKind,
    #[serde(default = "default_max_response_tokens")]
    pub max_response_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
}

fn default_max_response_tokens() -> u32 {
    1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvKind {
    RemoteChat { endpoint: String, model_name: String },
    Scripted { rules: Vec<ScriptedRule> },
}

impl EnvSpec {
    /// Instantiates the described backend under the given id.
    pub fn build(&self, id: &str) -> Result<Arc<dyn Environment>, EnvError> {
        if self.max_response_tokens == 0 {
            return Err(EnvError::InvalidSpec(
                "max_response_tokens must be at least 1".into(),
            ));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(EnvError::InvalidSpec(
                "temperature must be finite and non-negative".into(),
            ));
        }
        match &self.kind {
            EnvKind::RemoteChat {
                endpoint,
                model_name,
            } => Ok(Arc::new(
                RemoteChatEnv::new(id, endpoint, model_name)
                    .with_limits(self.max_response_tokens, self.temperature),
            )),
            EnvKind::Scripted { rules } => Ok(Arc::new(ScriptedEnv::new(id, rules.clone())?)),
        }
    }
}

/// How an episode picks its environment from the registered pool.
#[derive(Debug, Clone, PartialEq)]
pub enum RouterPolicy {
    /// Always the same environment (the training-time setting).
    Fixed(String),
    /// Seeded sample from a distribution over environment ids.
    Weighted(Vec<(String, f64)>),
}

impl RouterPolicy {
    pub fn validate(&self) -> Result<(), EnvError> {
        match self {
            RouterPolicy::Fixed(_) => Ok(()),
            RouterPolicy::Weighted(weights) => {
                if weights.is_empty() {
                    return Err(EnvError::InvalidSpec("weighted router has no entries".into()));
                }
                let mut total = 0.0;
                for (id, w) in weights {
                    if !w.is_finite() || *w < 0.0 {
                        return Err(EnvError::InvalidSpec(format!(
                            "weight for {id:?} must be finite and non-negative"
                        )));
                    }
                    total += w;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(EnvError::InvalidSpec(format!(
                        "router weights sum to {total}, expected 1"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Picks an environment id for one episode. Fixed mode ignores the seed;
/// weighted mode samples reproducibly from the seeded generator. The
/// question is part of the routing contract but unused by the built-in
/// modes, which do not condition on content.
pub fn route_id<'a>(
    policy: &'a RouterPolicy,
    _question: &Question,
    seed: u64,
) -> Result<&'a str, EnvError> {
    policy.validate()?;
    match policy {
        RouterPolicy::Fixed(id) => Ok(id),
        RouterPolicy::Weighted(weights) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let draw: f64 = rng.gen();
            let mut cumulative = 0.0;
            for (id, weight) in weights {
                cumulative += weight;
                if draw < cumulative {
                    return Ok(id);
                }
            }
            // Rounding can leave the final cumulative a hair under 1.0.
            Ok(&weights[weights.len() - 1].0)
        }
    }
}

/// The pool of registered environments, keyed by id.
#[derive(Default, Clone)]
pub struct EnvRegistry {
    envs: BTreeMap<String, Arc<dyn Environment>>,
}

impl EnvRegistry {
    pub fn new() -> Self {
        EnvRegistry::default()
    }

    pub fn register(&mut self, env: Arc<dyn Environment>) -> Result<(), EnvError> {
        let id = env.id().to_string();
        if self.envs.contains_key(&id) {
            return Err(EnvError::InvalidSpec(format!(
                "environment id {id:?} registered twice"
            )));
        }
        self.envs.insert(id, env);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&Arc<dyn Environment>, EnvError> {
        self.envs
            .get(id)
            .ok_or_else(|| EnvError::UnknownEnvId(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.envs.keys().map(String::as_str)
    }

    /// Routes and resolves in one step, failing on unregistered ids.
    pub fn route(
        &self,
        policy: &RouterPolicy,
        question: &Question,
        seed: u64,
    ) -> Result<&Arc<dyn Environment>, EnvError> {
        let id = route_id(policy, question, seed)?;
        self.get(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::PromptTemplate;
    use crate::mix_seed;

    fn question() -> Question {
        Question::new("q", "What is the capital of France?", vec!["Paris".into()], "qa").unwrap()
    }

    fn history() -> History {
        History::new(question(), PromptTemplate::default())
    }

    fn capital_env() -> ScriptedEnv {
        ScriptedEnv::new(
            "scripted",
            vec![
                ScriptedRule {
                    match_substring: Some("capital of France".into()),
                    min_turn: None,
                    response: "Paris".into(),
                },
                ScriptedRule::default_response("I don't know"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn scripted_rule_matching() {
        let env = capital_env();
        let reply = env.respond(&history(), "What is the capital of France?").unwrap();
        assert_eq!(reply.text, "Paris");
        assert!(!reply.truncated);
        let fallback = env.respond(&history(), "unrelated").unwrap();
        assert_eq!(fallback.text, "I don't know");
    }

    #[test]
    fn scripted_env_is_deterministic() {
        let env = capital_env();
        let a = env.respond(&history(), "the capital of France?").unwrap();
        let b = env.respond(&history(), "the capital of France?").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn min_turn_gates_rules() {
        let env = ScriptedEnv::new(
            "s",
            vec![
                ScriptedRule {
                    match_substring: None,
                    min_turn: Some(2),
                    response: "later".into(),
                },
                ScriptedRule::default_response("first"),
            ],
        )
        .unwrap();
        assert_eq!(env.response_for(1, "x"), "first");
        assert_eq!(env.response_for(2, "x"), "later");
    }

    #[test]
    fn scripted_env_requires_catch_all() {
        let err = ScriptedEnv::new(
            "s",
            vec![ScriptedRule {
                match_substring: Some("only".into()),
                min_turn: None,
                response: "x".into(),
            }],
        )
        .unwrap_err();
        assert!(matches!(err, EnvError::InvalidSpec(_)));
    }

    #[test]
    fn whitespace_response_is_empty_error() {
        let env = ScriptedEnv::new("s", vec![ScriptedRule::default_response("  \n ")]).unwrap();
        assert_eq!(
            env.respond(&history(), "anything"),
            Err(EnvError::EmptyResponse)
        );
    }

    #[test]
    fn rules_json_round_trip() {
        let json = r#"[
            {"match_substring": "capital", "min_turn": 1, "response": "Paris"},
            {"response": "default"}
        ]"#;
        let env = ScriptedEnv::from_rules_json("s", json).unwrap();
        assert_eq!(env.rules().len(), 2);
        assert_eq!(env.response_for(1, "the capital?"), "Paris");
        assert_eq!(env.response_for(1, "other"), "default");
    }

    #[test]
    fn chat_mapping_first_message_carries_template() {
        let h = history();
        let messages = chat_messages(&h, "please explain");
        assert_eq!(messages.len(), 1);
        assert_eq!(messages[0].role, "user");
        assert!(messages[0].content.contains("What is the capital of France?"));
        assert!(messages[0].content.ends_with("please explain"));
    }

    #[test]
    fn chat_mapping_alternates_roles() {
        let h = history()
            .append_turn(crate::history::Turn {
                index: 1,
                think: "t1".into(),
                prompt: "p1".into(),
                response: Some("r1".into()),
            })
            .unwrap()
            .append_turn(crate::history::Turn {
                index: 2,
                think: "t2".into(),
                prompt: "p2".into(),
                response: Some("r2".into()),
            })
            .unwrap();
        let messages = chat_messages(&h, "p3");
        let roles: Vec<&str> = messages.iter().map(|m| m.role.as_str()).collect();
        assert_eq!(roles, vec!["user", "assistant", "user", "assistant", "user"]);
        assert!(messages[0].content.ends_with("p1"));
        assert_eq!(messages[1].content, "r1");
        assert_eq!(messages[2].content, "p2");
        assert_eq!(messages[3].content, "r2");
        assert_eq!(messages[4].content, "p3");
    }

    #[test]
    fn chat_mapping_skips_contentless_rounds() {
        let h = history()
            .append_turn(crate::history::Turn {
                index: 1,
                think: "thought but no prompt".into(),
                prompt: String::new(),
                response: Some(String::new()),
            })
            .unwrap();
        let messages = chat_messages(&h, "p2");
        assert_eq!(messages.len(), 1);
        assert!(messages[0].content.ends_with("p2"));
    }

    #[test]
    fn fixed_route_always_returns_fixed_id() {
        let policy = RouterPolicy::Fixed("alpha".into());
        for seed in 0..10 {
            assert_eq!(route_id(&policy, &question(), seed).unwrap(), "alpha");
        }
    }

    #[test]
    fn degenerate_weights_always_pick_the_unit_entry() {
        let policy = RouterPolicy::Weighted(vec![("only".into(), 1.0)]);
        for seed in 0..100 {
            assert_eq!(route_id(&policy, &question(), seed).unwrap(), "only");
        }
    }

    #[test]
    fn even_weights_split_close_to_half() {
        let policy = RouterPolicy::Weighted(vec![("A".into(), 0.5), ("B".into(), 0.5)]);
        let q = question();
        let draws = 10_000;
        let a_count = (0..draws)
            .filter(|&i| route_id(&policy, &q, mix_seed(42, i)).unwrap() == "A")
            .count();
        let fraction = a_count as f64 / draws as f64;
        assert!(
            (0.48..=0.52).contains(&fraction),
            "empirical A frequency {fraction} outside [0.48, 0.52]"
        );
    }

    #[test]
    fn route_is_reproducible() {
        let policy = RouterPolicy::Weighted(vec![("A".into(), 0.3), ("B".into(), 0.7)]);
        let q = question();
        let first: Vec<String> = (0..50)
            .map(|i| route_id(&policy, &q, i).unwrap().to_string())
            .collect();
        let second: Vec<String> = (0..50)
            .map(|i| route_id(&policy, &q, i).unwrap().to_string())
            .collect();
        assert_eq!(first, second);
    }

    #[test]
    fn router_weight_validation() {
        let bad_sum = RouterPolicy::Weighted(vec![("A".into(), 0.5), ("B".into(), 0.6)]);
        assert!(bad_sum.validate().is_err());
        let negative = RouterPolicy::Weighted(vec![("A".into(), -0.5), ("B".into(), 1.5)]);
        assert!(negative.validate().is_err());
    }

    #[test]
    fn registry_resolves_and_rejects_unknown() {
        let mut registry = EnvRegistry::new();
        registry.register(Arc::new(capital_env())).unwrap();
        assert!(registry.get("scripted").is_ok());
        assert_eq!(
            registry.get("nope").err(),
            Some(EnvError::UnknownEnvId("nope".into()))
        );
        let routed = registry
            .route(&RouterPolicy::Fixed("scripted".into()), &question(), 0)
            .unwrap();
        assert_eq!(routed.id(), "scripted");
    }

    #[test]
    fn registry_rejects_duplicate_ids() {
        let mut registry = EnvRegistry::new();
        registry.register(Arc::new(capital_env())).unwrap();
        assert!(registry.register(Arc::new(capital_env())).is_err());
    }

    #[test]
    fn env_spec_builds_scripted_backend() {
        let spec: EnvSpec = serde_json::from_str(
            r#"{
                "kind": "scripted",
                "rules": [{"response": "always"}]
            }"#,
        )
        .unwrap();
        let env = spec.build("s").unwrap();
        assert_eq!(env.id(), "s");
        let reply = env.respond(&history(), "x").unwrap();
        assert_eq!(reply.text, "always");
    }
}
