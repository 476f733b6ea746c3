//! A multi-turn collaborative prompting engine.
//!
//! A small *agent* policy works on a question by repeatedly crafting
//! interaction prompts for a large-LLM *environment*, reading the responses,
//! and finally committing to an answer. Every exchange is appended to an
//! immutable [`history::History`] whose rendering is the agent's full context
//! for the next round. Episodes are scored with a double-constrained reward:
//! format signals must hit a cap before answer quality earns any credit.
//!
//! Module map:
//!
//! - [`parser`] — tag grammar for agent emissions and the format signals
//!   consumed by the reward.
//! - [`history`] — questions, templates, turns, histories, trajectories, and
//!   deterministic context rendering.
//! - [`reward`] — gated format/answer reward plus the EM / token-F1 /
//!   semantic-similarity metrics.
//! - [`env`] — environment backends (remote chat, scripted) and session
//!   routing over an environment pool.
//! - [`agent`] — agent backends: a remote LLM and a toy softmax policy whose
//!   gradients are analytic.
//! - [`episode`] — the interaction loop state machine producing trajectories.
//! - [`grpo`] — group-relative policy optimization math (standardized
//!   advantages, clipped surrogate, KL penalty) and toy-policy training.
//! - [`theory`] — Monte-Carlo verification of the interaction theory:
//!   Bayes-risk contraction and transfer under bounded environment shift.
//! - [`harness`] — datasets, batched runs, trajectory logs, offline
//!   re-scoring, and report aggregation.
//! - [`stubserver`] — a deterministic local chat-completions server for
//!   wire-level tests.
//! - [`wire`] — the HTTP chat/embeddings client shared by remote backends.
//! - [`fixtures`] — small self-contained task setups used by examples,
//!   the CLI demo mode, and the test suite.

pub mod agent;
pub mod env;
pub mod episode;
pub mod fixtures;
pub mod grpo;
pub mod harness;
pub mod history;
pub mod parser;
pub mod reward;
pub mod stubserver;
pub mod theory;
pub mod wire;

pub use agent::{Agent, AgentContext, AgentEmission, RemoteAgent, ToyAgent, ToyPolicyParams};
pub use env::{EnvRegistry, Environment, RemoteChatEnv, RouterPolicy, ScriptedEnv, ScriptedRule};
pub use episode::{run_episode, LoopConfig};
pub use grpo::{train_toy, GrpoBatch, GrpoConfig, TrainingReport};
pub use harness::{
    aggregate, evaluate_logs, load_dataset, run_batch, score_record, BatchOptions, Config,
    RunReport, TrajectoryRecord,
};
pub use history::{History, PromptTemplate, Question, Trajectory, Turn};
pub use parser::{parse, FormatSignals, ParsedOutput};
pub use reward::{total_reward, RewardBreakdown, RewardConfig};
pub use stubserver::StubServer;
pub use theory::{
    exact_contraction_curve, simulate_contraction, simulate_transfer, ObservationKernel,
    SimConfig, SimPolicy,
};

/// Environment variable holding the bearer token for remote LLM endpoints.
pub const API_KEY_ENV: &str = "PROMPTLOOP_API_KEY";

/// Environment variable controlling log verbosity (`error`..`trace`).
pub const LOG_LEVEL_ENV: &str = "PROMPTLOOP_LOG_LEVEL";

/// Derives a per-subtask seed from a run seed and an index.
///
/// SplitMix64 finalizer: consecutive indices map to statistically independent
/// streams, so episodes and emissions can be seeded as `mix_seed(run, i)`
/// without correlated randomness between neighbours.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
