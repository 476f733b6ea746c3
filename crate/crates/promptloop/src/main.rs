//! Command-line front end: batch runs over JSONL datasets, toy-policy
//! training, offline log re-scoring, the theory simulators, and a local
//! stub server for wire-level testing.

use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use promptloop::agent::{ToyAction, ToyPolicyParams};
use promptloop::env::{RouterPolicy, ScriptedEnv, ScriptedRule};
use promptloop::grpo::train_toy;
use promptloop::harness::{
    evaluate_logs, load_dataset, parse_router, run_batch, AgentKind, BatchOptions, Config,
    RunReport,
};
use promptloop::history::PromptTemplate;
use promptloop::reward::HashedBagEncoder;
use promptloop::stubserver::StubServer;
use promptloop::theory::{
    simulate_contraction, simulate_transfer, ContractionSpec, TransferSpec,
};
use promptloop::{fixtures, LOG_LEVEL_ENV};

#[derive(Parser)]
#[command(
    name = "promptloop",
    version,
    about = "Multi-turn collaborative prompting: run, train, score, simulate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a dataset through the interaction loop and report EM/F1/SSim.
    Run(RunArgs),
    /// Train the toy policy on the scripted bandit and print the curve.
    TrainToy(TrainToyArgs),
    /// Re-score a trajectory log offline; prints the same report as `run`.
    Eval(EvalArgs),
    /// Monte-Carlo simulators for belief contraction and transfer.
    #[command(subcommand)]
    Sim(SimCommand),
    /// Serve a deterministic chat-completions stub until interrupted.
    StubServer(StubServerArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSONL dataset: one {"question", "golds", ...} object per line.
    #[arg(long)]
    dataset: PathBuf,
    /// TOML configuration file ([agent], [env.<id>], [reward], [loop]).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Agent backend, overriding the config file.
    #[arg(long, value_enum)]
    agent: Option<AgentArg>,
    /// Route every episode to this environment id.
    #[arg(long)]
    env: Option<String>,
    /// Weighted routing over environment ids, e.g. "fast=0.9,slow=0.1".
    #[arg(long)]
    router: Option<String>,
    /// Interaction budget per episode, overriding the config file.
    #[arg(long)]
    max_turns: Option<usize>,
    /// Concurrent episode workers.
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the trajectory log (JSONL, one record per episode) here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Zero the duration_ms field so fixed-seed logs are byte-stable.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum AgentArg {
    Toy,
    Remote,
}

#[derive(Args)]
struct TrainToyArgs {
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    clip_eps: Option<f64>,
    #[arg(long)]
    kl_beta: Option<f64>,
    /// Gradient-ascent step size.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// TOML configuration file (seeds [grpo] and [reward]).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the full training report (JSON) here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Trajectory log produced by `run --out`.
    #[arg(long)]
    log: PathBuf,
    /// TOML configuration file (for the [reward] section).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the aggregated report (JSON) here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SimCommand {
    /// Estimate E[V(H_t)] per round and check it never rises beyond noise.
    Contraction(SimArgs),
    /// Estimate policy values under a shifted environment kernel.
    Transfer(SimArgs),
}

#[derive(Args)]
struct SimArgs {
    /// JSON spec: kernel(s), policy (or policies), and the sim config.
    #[arg(long)]
    config: PathBuf,
    /// Write the full report (JSON) here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StubServerArgs {
    /// Port to bind on 127.0.0.1; 0 picks a free one.
    #[arg(long, default_value_t = 0)]
    port: u16,
    /// Path to a JSON array of scripted rules; the last must be a catch-all.
    #[arg(long)]
    rules: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_LEVEL_ENV, "warn"))
        .format_timestamp(None)
        .init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<(), Box<dyn Error>> {
    match command {
        Command::Run(args) => cmd_run(args),
        Command::TrainToy(args) => cmd_train_toy(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sim(SimCommand::Contraction(args)) => cmd_sim_contraction(args),
        Command::Sim(SimCommand::Transfer(args)) => cmd_sim_transfer(args),
        Command::StubServer(args) => cmd_stub_server(args),
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, Box<dyn Error>> {
    Ok(match path {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    })
}

fn cmd_run(args: RunArgs) -> Result<(), Box<dyn Error>> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(agent) = args.agent {
        config.agent.kind = match agent {
            AgentArg::Toy => AgentKind::Toy,
            AgentArg::Remote => AgentKind::Remote,
        };
    }
    if let Some(max_turns) = args.max_turns {
        config.episode.max_turns = max_turns;
    }

    let questions = load_dataset(&args.dataset)?;
    let mut registry = config.registry()?;
    if registry.ids().next().is_none() {
        if config.agent.kind == AgentKind::Remote {
            return Err("no environments configured; add an [env.<id>] section".into());
        }
        // Toy runs work out of the box against a scripted placeholder.
        registry.register(Arc::new(ScriptedEnv::new(
            "builtin",
            vec![ScriptedRule::default_response(
                "No environment is configured; this is a scripted placeholder response.",
            )],
        )?))?;
    }

    let router = match (&args.router, &args.env) {
        (Some(spec), _) => parse_router(spec)?,
        (None, Some(id)) => RouterPolicy::Fixed(id.clone()),
        (None, None) => {
            let ids: Vec<&str> = registry.ids().collect();
            if ids.len() == 1 {
                RouterPolicy::Fixed(ids[0].to_string())
            } else {
                return Err(format!(
                    "several environments are registered ({}); pick one with --env \
                     or weight them with --router",
                    ids.join(", ")
                )
                .into());
            }
        }
    };

    let factory = config.agent.factory();
    let options = BatchOptions {
        parallelism: args.parallelism,
        seed: args.seed,
        measure_time: !args.no_timing,
    };
    let outcome = run_batch(
        &questions,
        &*factory,
        &registry,
        &router,
        &PromptTemplate::default(),
        &config.episode,
        &config.reward,
        &HashedBagEncoder::default(),
        &options,
        args.out.as_deref(),
    )?;
    print_report(&outcome.report);
    if let Some(path) = &args.out {
        eprintln!("trajectory log written to {}", path.display());
    }
    Ok(())
}

fn print_report(report: &RunReport) {
    println!(
        "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>7}",
        "task", "episodes", "failures", "em%", "f1%", "ssim%", "turns"
    );
    for row in report.datasets.iter().chain([&report.overall]) {
        println!(
            "{:<16} {:>8} {:>8} {:>8.2} {:>8.2} {:>8.2} {:>7.2}",
            row.task,
            row.episodes,
            row.failures,
            row.em_percent,
            row.f1_percent,
            row.ssim_percent,
            row.mean_turns
        );
    }
}

fn cmd_train_toy(args: TrainToyArgs) -> Result<(), Box<dyn Error>> {
    let config = load_config(args.config.as_deref())?;
    let mut grpo = config.grpo.clone();
    if let Some(group_size) = args.group_size {
        grpo.group_size = group_size;
    }
    if let Some(clip_eps) = args.clip_eps {
        grpo.clip_eps = clip_eps;
    }
    if let Some(kl_beta) = args.kl_beta {
        grpo.kl_beta = kl_beta;
    }
    if let Some(lr) = args.lr {
        grpo.learning_rate = lr;
    }

    let fixture = fixtures::capital_bandit();
    let initial = match &config.agent.logits {
        Some(logits) => ToyPolicyParams {
            logits: logits.clone(),
        },
        None => ToyPolicyParams::uniform(),
    };
    let report = train_toy(
        &fixture.env,
        initial,
        std::slice::from_ref(&fixture.question),
        &fixture.template,
        &fixture.loop_cfg,
        &fixture.reward_cfg,
        &grpo,
        args.iterations,
        args.seed,
    )?;

    let stride = (args.iterations / 10).max(1);
    for row in report.iterations.iter().filter(|r| {
        r.iter % stride == 0 || r.iter + 1 == args.iterations
    }) {
        println!(
            "iter {:>4}  mean reward {:+.3}  objective {:+.5}",
            row.iter, row.mean_reward, row.objective
        );
    }
    if let Some(last) = report.iterations.last() {
        println!("final action distribution:");
        for (action, prob) in ToyAction::ALL.iter().zip(&last.action_probs) {
            println!("  {action:?}: {prob:.4}");
        }
    }
    if let Some(path) = &args.report {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
        eprintln!("training report written to {}", path.display());
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Box<dyn Error>> {
    let config = load_config(args.config.as_deref())?;
    let report = evaluate_logs(&args.log, &config.reward, &HashedBagEncoder::default())?;
    print_report(&report);
    if let Some(path) = &args.out {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
        eprintln!("report written to {}", path.display());
    }
    Ok(())
}

fn cmd_sim_contraction(args: SimArgs) -> Result<(), Box<dyn Error>> {
    let spec: ContractionSpec =
        serde_json::from_str(&std::fs::read_to_string(&args.config)?)?;
    let report = simulate_contraction(&spec.kernel, &spec.policy, &spec.config)?;
    println!("risk potential by round ({} episodes):", report.episodes);
    for row in &report.rounds {
        println!("  t={:<3} mean {:.6}  se {:.6}", row.round, row.mean, row.std_err);
    }
    let verdict = if report.non_increasing_within(2.0) {
        "yes"
    } else {
        "NO"
    };
    println!("non-increasing within 2.0 standard errors: {verdict}");
    if let Some(path) = &args.out {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
        eprintln!("report written to {}", path.display());
    }
    Ok(())
}

fn cmd_sim_transfer(args: SimArgs) -> Result<(), Box<dyn Error>> {
    let spec: TransferSpec = serde_json::from_str(&std::fs::read_to_string(&args.config)?)?;
    let report = simulate_transfer(
        &spec.kernel_l,
        &spec.kernel_lprime,
        &spec.policy_star,
        &spec.policy_alt,
        &spec.config,
    )?;
    let line = |label: &str, v: &promptloop::theory::ValueEstimate| {
        println!("  {label:<22} {:.4} ± {:.4}  ({} episodes)", v.mean, v.std_err, v.episodes);
    };
    println!("policy values (success probability):");
    line("star in source", &report.star_in_l);
    line("star in shifted", &report.star_in_lprime);
    line("alt in source", &report.alt_in_l);
    line("alt in shifted", &report.alt_in_lprime);
    println!(
        "measured kernel shift: max row TV {:.4} (budget {:.4})",
        report.max_tv, report.tv_eps
    );
    println!(
        "value shift star {:.4} (bound {:.4}), alt {:.4} (bound {:.4})",
        report.value_shift(true),
        report.shift_bound(true, 3.0),
        report.value_shift(false),
        report.shift_bound(false, 3.0)
    );
    println!(
        "source margin {:.4} ± {:.4}; survives the shift budget: {}",
        report.l_margin(),
        report.l_margin_std_err(),
        if report.margin_certified(3.0) { "yes" } else { "not provable at this budget" }
    );
    if let Some(path) = &args.out {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
        eprintln!("report written to {}", path.display());
    }
    Ok(())
}

fn cmd_stub_server(args: StubServerArgs) -> Result<(), Box<dyn Error>> {
    let rules: Vec<ScriptedRule> = match &args.rules {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => vec![ScriptedRule::default_response(
            "This is a scripted stub response.",
        )],
    };
    // Borrow the scripted-env validation (catch-all required, etc.).
    ScriptedEnv::new("stub", rules.clone())?;
    let server = StubServer::with_rules(args.port, rules)?;
    println!("stub server listening on {}", server.endpoint());
    println!("chat endpoint: {}/v1/chat/completions", server.endpoint());
    server.serve_forever()
}
