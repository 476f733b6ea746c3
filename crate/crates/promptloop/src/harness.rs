//! Batch execution and bookkeeping: JSONL datasets in, trajectory logs and
//! aggregated reports out, plus offline re-scoring of saved logs and the
//! TOML configuration the CLI reads.
//!
//! Reproducibility contract: records are produced in dataset order no matter
//! the parallelism, every random choice derives from the run seed, and the
//! exact scoring function that filled a record online is re-run offline by
//! [`evaluate_logs`] — so re-scoring an untouched log reproduces the online
//! report bit for bit.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, RemoteAgent, ToyAgent, ToyPolicyParams};
use crate::env::{EnvError, EnvRegistry, EnvSpec, RouterPolicy};
use crate::episode::{run_episode, EpisodeError, LoopConfig};
use crate::grpo::GrpoConfig;
use crate::history::{PromptTemplate, Question, Trajectory};
use crate::mix_seed;
use crate::parser::FormatSignals;
use crate::reward::{
    best_semantic_similarity, exact_match, total_reward, Encoder, RewardConfig, RewardError,
};

/// Version stamped into every trajectory record; [`evaluate_logs`] refuses
/// logs written under any other version.
pub const LOG_SCHEMA_VERSION: u32 = 1;

/// Task tag attached to log lines that could not be parsed at all.
pub const UNPARSEABLE_TASK: &str = "(unparseable)";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dataset contains no questions")]
    EmptyDataset,
    #[error("log written under schema version {found}, this build reads version {LOG_SCHEMA_VERSION}")]
    SchemaMismatch { found: u32 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One dataset line: `{"id": …, "question": …, "golds": […], "task": …}`.
/// `id` defaults to the line number and `task` to `"default"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecord {
    #[serde(default)]
    pub id: Option<String>,
    pub question: String,
    pub golds: Vec<String>,
    #[serde(default)]
    pub task: Option<String>,
}

/// Reads a JSONL dataset into validated questions. Blank lines are skipped;
/// anything else must parse, or the error names the offending line.
pub fn load_dataset(path: &Path) -> Result<Vec<Question>, HarnessError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut questions = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line_no = index + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord =
            serde_json::from_str(&line).map_err(|e| HarnessError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        let id = record.id.unwrap_or_else(|| format!("line-{line_no}"));
        if !seen_ids.insert(id.clone()) {
            log::warn!("dataset line {line_no}: duplicate id {id:?}");
        }
        let task = record.task.unwrap_or_else(|| "default".to_string());
        let question =
            Question::new(id, record.question, record.golds, task).map_err(|e| {
                HarnessError::Parse {
                    line: line_no,
                    message: e.to_string(),
                }
            })?;
        questions.push(question);
    }
    if questions.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    Ok(questions)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub think: String,
    pub prompt: String,
    pub response: String,
}

/// One JSONL log line: the full episode plus its scores. Failed episodes
/// carry an `error` message and zeroed scores; they are excluded from
/// aggregate means but counted as failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub version: u32,
    pub id: String,
    pub question: String,
    pub golds: Vec<String>,
    pub task: String,
    pub turns: Vec<TurnRecord>,
    pub final_think: Option<String>,
    pub final_answer: Option<String>,
    pub r_fmt: f64,
    pub r_ans: f64,
    pub r_total: f64,
    pub em: f64,
    pub f1: f64,
    pub ssim: f64,
    pub env_id: String,
    pub seed: u64,
    pub duration_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrajectoryRecord {
    /// An unscored record carrying the episode's protocol content.
    pub fn from_trajectory(question: &Question, trajectory: &Trajectory) -> Self {
        TrajectoryRecord {
            version: LOG_SCHEMA_VERSION,
            id: question.id.clone(),
            question: question.text.clone(),
            golds: question.gold_answers.clone(),
            task: question.task_tag.clone(),
            turns: trajectory
                .history
                .turns()
                .iter()
                .map(|t| TurnRecord {
                    think: t.think.clone(),
                    prompt: t.prompt.clone(),
                    response: t.response.clone().unwrap_or_default(),
                })
                .collect(),
            final_think: trajectory.final_think.clone(),
            final_answer: trajectory.final_answer.clone(),
            r_fmt: 0.0,
            r_ans: 0.0,
            r_total: 0.0,
            em: 0.0,
            f1: 0.0,
            ssim: 0.0,
            env_id: trajectory.meta.env_id.clone(),
            seed: trajectory.meta.seed,
            duration_ms: trajectory.meta.duration_ms,
            error: None,
        }
    }

    fn failure(question: &Question, seed: u64, env_id: String, message: String) -> Self {
        TrajectoryRecord {
            version: LOG_SCHEMA_VERSION,
            id: question.id.clone(),
            question: question.text.clone(),
            golds: question.gold_answers.clone(),
            task: question.task_tag.clone(),
            turns: Vec::new(),
            final_think: None,
            final_answer: None,
            r_fmt: 0.0,
            r_ans: 0.0,
            r_total: 0.0,
            em: 0.0,
            f1: 0.0,
            ssim: 0.0,
            env_id,
            seed,
            duration_ms: 0,
            error: Some(message),
        }
    }

    /// Format signals reconstructed from the persisted turns and final
    /// fields. Matches the signals the loop extracted from raw emissions:
    /// a turn earns its bit iff both think and prompt were non-empty, and
    /// the final bits mirror the parsed answer's presence and content.
    pub fn signals(&self) -> FormatSignals {
        FormatSignals {
            turn_complete: self
                .turns
                .iter()
                .map(|t| !t.think.is_empty() && !t.prompt.is_empty())
                .collect(),
            answer_parseable: self.final_answer.is_some(),
            answer_non_empty: self
                .final_answer
                .as_deref()
                .is_some_and(|a| !a.is_empty()),
            final_complete: self.final_think.is_some() && self.final_answer.is_some(),
        }
    }
}

/// Fills a record's reward and metric fields from its protocol content.
/// Both the online runner and the offline re-scorer call this — that shared
/// path is what makes re-scoring bit-identical.
pub fn score_record(
    record: &mut TrajectoryRecord,
    reward_cfg: &RewardConfig,
    encoder: &dyn Encoder,
) -> Result<(), RewardError> {
    let signals = record.signals();
    let pred = record.final_answer.as_deref().unwrap_or("");
    let breakdown = total_reward(&signals, pred, &record.golds, reward_cfg)?;
    record.r_fmt = breakdown.format;
    record.r_ans = breakdown.answer;
    record.r_total = breakdown.total;
    record.em = if exact_match(pred, &record.golds)? { 1.0 } else { 0.0 };
    record.f1 = breakdown.answer;
    record.ssim = best_semantic_similarity(pred, &record.golds, encoder)?;
    Ok(())
}

/// Aggregates for one task tag. Means cover completed episodes only;
/// failures are counted and excluded. EM/F1/SSim are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetAggregate {
    pub task: String,
    pub episodes: usize,
    pub failures: usize,
    pub em_percent: f64,
    pub f1_percent: f64,
    pub ssim_percent: f64,
    pub mean_turns: f64,
}

/// Per-task aggregates plus a macro-averaged overall row: the overall
/// percentages average the per-task means (every task weighs the same,
/// regardless of size), while its counts are sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub datasets: Vec<DatasetAggregate>,
    pub overall: DatasetAggregate,
}

fn mean_of<F: Fn(&TrajectoryRecord) -> f64>(records: &[&TrajectoryRecord], f: F) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().map(|r| f(r)).sum::<f64>() / records.len() as f64
}

/// Groups records by task tag and computes the report. Record order inside
/// each group follows input order, so sums (and their rounding) are
/// deterministic.
pub fn aggregate(records: &[TrajectoryRecord]) -> RunReport {
    let mut groups: BTreeMap<&str, Vec<&TrajectoryRecord>> = BTreeMap::new();
    for record in records {
        groups.entry(record.task.as_str()).or_default().push(record);
    }
    let mut datasets = Vec::with_capacity(groups.len());
    for (task, members) in &groups {
        let completed: Vec<&TrajectoryRecord> = members
            .iter()
            .copied()
            .filter(|r| r.error.is_none())
            .collect();
        datasets.push(DatasetAggregate {
            task: task.to_string(),
            episodes: completed.len(),
            failures: members.len() - completed.len(),
            em_percent: 100.0 * mean_of(&completed, |r| r.em),
            f1_percent: 100.0 * mean_of(&completed, |r| r.f1),
            ssim_percent: 100.0 * mean_of(&completed, |r| r.ssim),
            mean_turns: mean_of(&completed, |r| r.turns.len() as f64),
        });
    }
    fn macro_mean(datasets: &[DatasetAggregate], f: impl Fn(&DatasetAggregate) -> f64) -> f64 {
        if datasets.is_empty() {
            return 0.0;
        }
        datasets.iter().map(f).sum::<f64>() / datasets.len() as f64
    }
    let overall = DatasetAggregate {
        task: "overall".to_string(),
        episodes: datasets.iter().map(|d| d.episodes).sum(),
        failures: datasets.iter().map(|d| d.failures).sum(),
        em_percent: macro_mean(&datasets, |d| d.em_percent),
        f1_percent: macro_mean(&datasets, |d| d.f1_percent),
        ssim_percent: macro_mean(&datasets, |d| d.ssim_percent),
        mean_turns: macro_mean(&datasets, |d| d.mean_turns),
    };
    RunReport { datasets, overall }
}

/// Builds the agent driving one question; batch runners call it once per
/// episode so per-question policies (like the toy agent, whose correct
/// answer depends on the gold) come out right.
pub type AgentFactory<'a> = dyn Fn(&Question) -> Arc<dyn Agent> + Sync + 'a;

/// Owned, thread-safe [`AgentFactory`], as built from configuration.
pub type BoxedAgentFactory = Box<dyn Fn(&Question) -> Arc<dyn Agent> + Send + Sync>;

#[derive(Debug, Clone)]
pub struct BatchOptions {
    /// Concurrent episode workers (≥ 1). Does not affect results or record
    /// order, only wall-clock.
    pub parallelism: usize,
    pub seed: u64,
    /// When false, `duration_ms` is zeroed so fixed-seed runs over
    /// deterministic backends produce byte-identical logs.
    pub measure_time: bool,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            parallelism: 1,
            seed: 0,
            measure_time: true,
        }
    }
}

pub struct BatchOutcome {
    pub report: RunReport,
    pub records: Vec<TrajectoryRecord>,
}

/// Runs one episode per question (concurrently up to the parallelism bound),
/// scores each, optionally writes the JSONL log, and returns the aggregate
/// report. Individual episode failures become failure records; they never
/// abort the batch.
#[allow(clippy::too_many_arguments)]
pub fn run_batch(
    questions: &[Question],
    agent_for: &AgentFactory<'_>,
    registry: &EnvRegistry,
    router: &RouterPolicy,
    template: &PromptTemplate,
    loop_cfg: &LoopConfig,
    reward_cfg: &RewardConfig,
    encoder: &(dyn Encoder + Sync),
    options: &BatchOptions,
    log_path: Option<&Path>,
) -> Result<BatchOutcome, HarnessError> {
    if questions.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    if options.parallelism == 0 {
        return Err(HarnessError::InvalidConfig("parallelism must be at least 1".into()));
    }
    reward_cfg.validate()?;
    router.validate()?;
    // Fail fast on routes to unregistered environments.
    match router {
        RouterPolicy::Fixed(id) => {
            registry.get(id)?;
        }
        RouterPolicy::Weighted(weights) => {
            for (id, _) in weights {
                registry.get(id)?;
            }
        }
    }

    let slots: Mutex<Vec<Option<TrajectoryRecord>>> =
        Mutex::new(vec![None; questions.len()]);
    let next_index = AtomicUsize::new(0);
    let workers = options.parallelism.min(questions.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next_index.fetch_add(1, Ordering::SeqCst);
                if index >= questions.len() {
                    break;
                }
                let record = run_one(
                    &questions[index],
                    agent_for,
                    registry,
                    router,
                    template,
                    loop_cfg,
                    reward_cfg,
                    encoder,
                    options,
                    mix_seed(options.seed, index as u64),
                );
                slots.lock().unwrap()[index] = Some(record);
            });
        }
    });

    let records: Vec<TrajectoryRecord> = slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("every index was processed"))
        .collect();

    if let Some(path) = log_path {
        write_log(path, &records)?;
    }
    Ok(BatchOutcome {
        report: aggregate(&records),
        records,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    question: &Question,
    agent_for: &AgentFactory<'_>,
    registry: &EnvRegistry,
    router: &RouterPolicy,
    template: &PromptTemplate,
    loop_cfg: &LoopConfig,
    reward_cfg: &RewardConfig,
    encoder: &(dyn Encoder + Sync),
    options: &BatchOptions,
    seed: u64,
) -> TrajectoryRecord {
    let env = registry
        .route(router, question, seed)
        .expect("router ids were checked before the batch started");
    let agent = agent_for(question);
    let mut record = match run_episode(
        agent.as_ref(),
        env.as_ref(),
        question.clone(),
        template.clone(),
        loop_cfg,
        seed,
    ) {
        Ok(trajectory) => {
            let mut record = TrajectoryRecord::from_trajectory(question, &trajectory);
            if let Err(err) = score_record(&mut record, reward_cfg, encoder) {
                record.error = Some(format!("scoring failed: {err}"));
            }
            record
        }
        Err(err) => {
            let (message, partial) = match err {
                EpisodeError::Env { source, partial } => (source.to_string(), Some(partial)),
                EpisodeError::Agent { source, partial } => (source.to_string(), Some(partial)),
                other => (other.to_string(), None),
            };
            log::warn!("episode {id} failed: {message}", id = question.id);
            match partial {
                Some(trajectory) => {
                    let mut record = TrajectoryRecord::from_trajectory(question, &trajectory);
                    record.error = Some(message);
                    record
                }
                None => TrajectoryRecord::failure(question, seed, String::new(), message),
            }
        }
    };
    if !options.measure_time {
        record.duration_ms = 0;
    }
    record
}

/// Writes one JSON line per record.
pub fn write_log(path: &Path, records: &[TrajectoryRecord]) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record)
            .expect("trajectory records always serialize");
        writeln!(writer, "{line}").map_err(|e| io_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

/// Loads a trajectory log and rebuilds the run report by re-scoring every
/// record from its protocol content. Unparseable lines become counted
/// failures; an unknown schema version is a hard error.
pub fn evaluate_logs(
    log_path: &Path,
    reward_cfg: &RewardConfig,
    encoder: &dyn Encoder,
) -> Result<RunReport, HarnessError> {
    reward_cfg.validate()?;
    let file = File::open(log_path).map_err(|e| io_err(log_path, e))?;
    let mut records = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line_no = index + 1;
        let line = line.map_err(|e| io_err(log_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TrajectoryRecord>(&line) {
            Ok(mut record) => {
                if record.version != LOG_SCHEMA_VERSION {
                    return Err(HarnessError::SchemaMismatch {
                        found: record.version,
                    });
                }
                if record.error.is_none() {
                    if let Err(err) = score_record(&mut record, reward_cfg, encoder) {
                        record.error = Some(format!("scoring failed: {err}"));
                    }
                }
                records.push(record);
            }
            Err(err) => {
                log::warn!("log line {line_no} is not a trajectory record: {err}");
                records.push(TrajectoryRecord {
                    version: LOG_SCHEMA_VERSION,
                    id: format!("line-{line_no}"),
                    question: String::new(),
                    golds: Vec::new(),
                    task: UNPARSEABLE_TASK.to_string(),
                    turns: Vec::new(),
                    final_think: None,
                    final_answer: None,
                    r_fmt: 0.0,
                    r_ans: 0.0,
                    r_total: 0.0,
                    em: 0.0,
                    f1: 0.0,
                    ssim: 0.0,
                    env_id: String::new(),
                    seed: 0,
                    duration_ms: 0,
                    error: Some(format!("unparseable log line: {err}")),
                });
            }
        }
    }
    Ok(aggregate(&records))
}

/// `[agent]` section of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub kind: AgentKind,
    /// Remote-agent endpoint base URL.
    pub endpoint: String,
    pub model_name: String,
    pub max_tokens: u32,
    pub temperature: f64,
    /// Toy-policy logits; omitted means uniform.
    pub logits: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Remote,
    Toy,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            kind: AgentKind::Toy,
            endpoint: "http://127.0.0.1:8080".into(),
            model_name: "small-agent".into(),
            max_tokens: 1024,
            temperature: 1.0,
            logits: None,
        }
    }
}

impl AgentConfig {
    /// The per-question agent factory this configuration describes.
    pub fn factory(&self) -> BoxedAgentFactory {
        match self.kind {
            AgentKind::Remote => {
                let agent: Arc<dyn Agent> = Arc::new(
                    RemoteAgent::new(self.endpoint.clone(), self.model_name.clone())
                        .with_limits(self.max_tokens, self.temperature),
                );
                Box::new(move |_| Arc::clone(&agent))
            }
            AgentKind::Toy => {
                let params = match &self.logits {
                    Some(logits) => ToyPolicyParams {
                        logits: logits.clone(),
                    },
                    None => ToyPolicyParams::uniform(),
                };
                Box::new(move |question| {
                    Arc::new(ToyAgent::for_question(question, params.clone()))
                })
            }
        }
    }
}

/// The whole configuration file:
/// `[agent]`, `[env.<id>]`, `[reward]`, `[grpo]`, `[loop]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub agent: AgentConfig,
    pub env: BTreeMap<String, EnvSpec>,
    pub reward: RewardConfig,
    pub grpo: GrpoConfig,
    #[serde(rename = "loop")]
    pub episode: LoopConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Config::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Config, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::InvalidConfig(e.to_string()))
    }

    /// Builds every `[env.<id>]` entry into a registry.
    pub fn registry(&self) -> Result<EnvRegistry, HarnessError> {
        let mut registry = EnvRegistry::new();
        for (id, spec) in &self.env {
            registry.register(spec.build(id)?)?;
        }
        Ok(registry)
    }
}

/// Parses the CLI router syntax: a bare id means route everything there;
/// `a=0.7,b=0.3` samples per episode with those weights.
pub fn parse_router(text: &str) -> Result<RouterPolicy, HarnessError> {
    if !text.contains('=') {
        if text.trim().is_empty() {
            return Err(HarnessError::InvalidConfig("router spec is empty".into()));
        }
        return Ok(RouterPolicy::Fixed(text.trim().to_string()));
    }
    let mut weights = Vec::new();
    for part in text.split(',') {
        let (id, weight) = part.split_once('=').ok_or_else(|| {
            HarnessError::InvalidConfig(format!("router entry {part:?} is not id=weight"))
        })?;
        let weight: f64 = weight.trim().parse().map_err(|e| {
            HarnessError::InvalidConfig(format!("weight in {part:?}: {e}"))
        })?;
        weights.push((id.trim().to_string(), weight));
    }
    let policy = RouterPolicy::Weighted(weights);
    policy.validate()?;
    Ok(policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ScriptedEnv, ScriptedRule};
    use crate::reward::HashedBagEncoder;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(content.as_bytes()).unwrap();
        file.flush().unwrap();
        file
    }

    fn echo_registry() -> EnvRegistry {
        let mut registry = EnvRegistry::new();
        registry
            .register(Arc::new(
                ScriptedEnv::new(
                    "echo",
                    vec![ScriptedRule::default_response("the answer is Paris")],
                )
                .unwrap(),
            ))
            .unwrap();
        registry
    }

    /// Factory for agents that interact once, then answer with the first
    /// gold — the all-correct oracle pair for a scripted environment.
    fn oracle_factory() -> BoxedAgentFactory {
        Box::new(|question| {
            Arc::new(crate::fixtures::SequenceAgent::new(
                ToyAgent::for_question(question, ToyPolicyParams::uniform()),
                vec![
                    crate::agent::ToyAction::Interact,
                    crate::agent::ToyAction::CorrectAnswer,
                ],
            ))
        })
    }

    fn run_opts(seed: u64) -> BatchOptions {
        BatchOptions {
            parallelism: 2,
            seed,
            measure_time: false,
        }
    }

    fn questions() -> Vec<Question> {
        vec![
            Question::new("q1", "capital of France?", vec!["Paris".into()], "geo").unwrap(),
            Question::new("q2", "2 + 2?", vec!["4".into()], "math").unwrap(),
            Question::new("q3", "capital of Italy?", vec!["Rome".into()], "geo").unwrap(),
        ]
    }

    #[test]
    fn dataset_round_trip_and_line_ids() {
        let file = write_temp(concat!(
            r#"{"question": "capital of France?", "golds": ["Paris"]}"#,
            "\n\n",
            r#"{"id": "named", "question": "2+2?", "golds": ["4"], "task": "math"}"#,
            "\n",
        ));
        let questions = load_dataset(file.path()).unwrap();
        assert_eq!(questions.len(), 2);
        assert_eq!(questions[0].id, "line-1");
        assert_eq!(questions[0].task_tag, "default");
        assert_eq!(questions[1].id, "named");
        assert_eq!(questions[1].task_tag, "math");
    }

    #[test]
    fn dataset_errors_name_the_line() {
        let file = write_temp("{\"question\": \"no golds\"}\n");
        match load_dataset(file.path()).unwrap_err() {
            HarnessError::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("expected Parse, got {other}"),
        }

        let empty_golds = write_temp("{\"question\": \"q\", \"golds\": []}\n");
        assert!(matches!(
            load_dataset(empty_golds.path()).unwrap_err(),
            HarnessError::Parse { line: 1, .. }
        ));

        let blank = write_temp("\n\n");
        assert!(matches!(
            load_dataset(blank.path()).unwrap_err(),
            HarnessError::EmptyDataset
        ));
    }

    #[test]
    fn oracle_pair_scores_perfect_em() {
        let registry = echo_registry();
        let outcome = run_batch(
            &questions(),
            &*oracle_factory(),
            &registry,
            &RouterPolicy::Fixed("echo".into()),
            &PromptTemplate::default(),
            &LoopConfig::default(),
            &RewardConfig::default(),
            &HashedBagEncoder::default(),
            &run_opts(7),
            None,
        )
        .unwrap();
        assert_eq!(outcome.report.overall.episodes, 3);
        assert_eq!(outcome.report.overall.failures, 0);
        assert_eq!(outcome.report.overall.em_percent, 100.0);
        assert_eq!(outcome.report.overall.f1_percent, 100.0);
        // Two tasks: geo (2 episodes) and math (1).
        assert_eq!(outcome.report.datasets.len(), 2);
        assert_eq!(outcome.report.datasets[0].task, "geo");
        assert_eq!(outcome.report.datasets[1].task, "math");
        for record in &outcome.records {
            assert_eq!(record.r_total, 1.0);
            assert_eq!(record.turns.len(), 1);
        }
    }

    #[test]
    fn records_keep_dataset_order_regardless_of_parallelism() {
        let registry = echo_registry();
        let run = |parallelism| {
            run_batch(
                &questions(),
                &*oracle_factory(),
                &registry,
                &RouterPolicy::Fixed("echo".into()),
                &PromptTemplate::default(),
                &LoopConfig::default(),
                &RewardConfig::default(),
                &HashedBagEncoder::default(),
                &BatchOptions {
                    parallelism,
                    seed: 3,
                    measure_time: false,
                },
                None,
            )
            .unwrap()
        };
        let serial = run(1);
        let parallel = run(8);
        assert_eq!(serial.records, parallel.records);
        assert_eq!(serial.report, parallel.report);
    }

    #[test]
    fn log_round_trip_reproduces_the_report() {
        let registry = echo_registry();
        let log = tempfile::NamedTempFile::new().unwrap();
        let outcome = run_batch(
            &questions(),
            &*oracle_factory(),
            &registry,
            &RouterPolicy::Fixed("echo".into()),
            &PromptTemplate::default(),
            &LoopConfig::default(),
            &RewardConfig::default(),
            &HashedBagEncoder::default(),
            &run_opts(11),
            Some(log.path()),
        )
        .unwrap();
        let offline = evaluate_logs(
            log.path(),
            &RewardConfig::default(),
            &HashedBagEncoder::default(),
        )
        .unwrap();
        assert_eq!(outcome.report, offline);
    }

    #[test]
    fn tampered_answer_drops_em() {
        let registry = echo_registry();
        let log = tempfile::NamedTempFile::new().unwrap();
        run_batch(
            &questions(),
            &*oracle_factory(),
            &registry,
            &RouterPolicy::Fixed("echo".into()),
            &PromptTemplate::default(),
            &LoopConfig::default(),
            &RewardConfig::default(),
            &HashedBagEncoder::default(),
            &run_opts(5),
            Some(log.path()),
        )
        .unwrap();
        let tampered: String = std::fs::read_to_string(log.path())
            .unwrap()
            .replace("\"final_answer\":\"Paris\"", "\"final_answer\":\"Lyon\"");
        let tampered_file = write_temp(&tampered);
        let report = evaluate_logs(
            tampered_file.path(),
            &RewardConfig::default(),
            &HashedBagEncoder::default(),
        )
        .unwrap();
        assert!(report.overall.em_percent < 100.0);
    }

    #[test]
    fn malformed_log_line_counts_as_failure() {
        let registry = echo_registry();
        let log = tempfile::NamedTempFile::new().unwrap();
        run_batch(
            &questions(),
            &*oracle_factory(),
            &registry,
            &RouterPolicy::Fixed("echo".into()),
            &PromptTemplate::default(),
            &LoopConfig::default(),
            &RewardConfig::default(),
            &HashedBagEncoder::default(),
            &run_opts(5),
            Some(log.path()),
        )
        .unwrap();
        let mut contents = std::fs::read_to_string(log.path()).unwrap();
        contents.push_str("this is not json\n");
        let patched = write_temp(&contents);
        let report = evaluate_logs(
            patched.path(),
            &RewardConfig::default(),
            &HashedBagEncoder::default(),
        )
        .unwrap();
        assert_eq!(report.overall.failures, 1);
        assert_eq!(report.overall.episodes, 3);
        assert!(report
            .datasets
            .iter()
            .any(|d| d.task == UNPARSEABLE_TASK && d.failures == 1));
    }

    #[test]
    fn unknown_schema_version_is_rejected() {
        let file = write_temp(
            r#"{"version": 99, "id": "x", "question": "q", "golds": ["g"], "task": "t", "turns": [], "final_think": null, "final_answer": null, "r_fmt": 0.0, "r_ans": 0.0, "r_total": 0.0, "em": 0.0, "f1": 0.0, "ssim": 0.0, "env_id": "e", "seed": 0, "duration_ms": 0}
"#,
        );
        assert!(matches!(
            evaluate_logs(
                file.path(),
                &RewardConfig::default(),
                &HashedBagEncoder::default()
            ),
            Err(HarnessError::SchemaMismatch { found: 99 })
        ));
    }

    #[test]
    fn batch_failures_are_counted_not_fatal() {
        let mut registry = EnvRegistry::new();
        registry
            .register(Arc::new(
                ScriptedEnv::new(
                    "empty",
                    vec![ScriptedRule::default_response("   ")],
                )
                .unwrap(),
            ))
            .unwrap();
        // Whitespace-only responses make the environment error out.
        let outcome = run_batch(
            &questions(),
            &*oracle_factory(),
            &registry,
            &RouterPolicy::Fixed("empty".into()),
            &PromptTemplate::default(),
            &LoopConfig::default(),
            &RewardConfig::default(),
            &HashedBagEncoder::default(),
            &run_opts(2),
            None,
        )
        .unwrap();
        assert_eq!(outcome.report.overall.failures, 3);
        assert_eq!(outcome.report.overall.episodes, 0);
        for record in &outcome.records {
            assert!(record.error.is_some());
        }
    }

    #[test]
    fn hand_computed_fixture_aggregate() {
        // Two records in one task: EM 1 and 0, F1 1.0 and 0.5 → means 50%
        // and 75%; one failure excluded.
        let mut records = vec![
            TrajectoryRecord {
                em: 1.0,
                f1: 1.0,
                ssim: 1.0,
                ..TrajectoryRecord::failure(
                    &Question::new("a", "q", vec!["g".into()], "t").unwrap(),
                    0,
                    String::new(),
                    String::new(),
                )
            },
            TrajectoryRecord {
                em: 0.0,
                f1: 0.5,
                ssim: 0.0,
                ..TrajectoryRecord::failure(
                    &Question::new("b", "q", vec!["g".into()], "t").unwrap(),
                    0,
                    String::new(),
                    String::new(),
                )
            },
        ];
        for r in &mut records {
            r.error = None;
        }
        records.push(TrajectoryRecord::failure(
            &Question::new("c", "q", vec!["g".into()], "t").unwrap(),
            0,
            String::new(),
            "boom".into(),
        ));
        let report = aggregate(&records);
        assert_eq!(report.datasets.len(), 1);
        let d = &report.datasets[0];
        assert_eq!(d.episodes, 2);
        assert_eq!(d.failures, 1);
        assert_eq!(d.em_percent, 50.0);
        assert_eq!(d.f1_percent, 75.0);
        assert_eq!(d.ssim_percent, 50.0);
    }

    #[test]
    fn config_parses_all_sections() {
        let config = Config::parse(
            r#"
            [agent]
            kind = "toy"
            logits = [0.5, 0.0, -0.5, -1.0]

            [env.stub]
            kind = "scripted"
            rules = [{ response = "always this" }]

            [env.live]
            kind = "remote-chat"
            endpoint = "http://127.0.0.1:9999"
            model_name = "big-model"
            max_response_tokens = 256

            [reward]
            turn_weight = 0.4

            [grpo]
            group_size = 16

            [loop]
            max_turns = 3
            "#,
        )
        .unwrap();
        assert_eq!(config.agent.kind, AgentKind::Toy);
        assert_eq!(config.grpo.group_size, 16);
        assert_eq!(config.episode.max_turns, 3);
        assert_eq!(config.env.len(), 2);
        let registry = config.registry().unwrap();
        assert!(registry.get("stub").is_ok());
        assert!(registry.get("live").is_ok());
    }

    #[test]
    fn default_config_is_empty_but_valid() {
        let config = Config::parse("").unwrap();
        assert_eq!(config, Config::default());
        assert_eq!(config.episode.max_turns, 5);
        assert!(config.env.is_empty());
    }

    #[test]
    fn router_parsing() {
        assert_eq!(
            parse_router("alpha").unwrap(),
            RouterPolicy::Fixed("alpha".into())
        );
        assert_eq!(
            parse_router("a=0.25,b=0.75").unwrap(),
            RouterPolicy::Weighted(vec![("a".into(), 0.25), ("b".into(), 0.75)])
        );
        assert!(parse_router("a=0.2,b=0.2").is_err()); // weights must sum to 1
        assert!(parse_router("").is_err());
    }
}
