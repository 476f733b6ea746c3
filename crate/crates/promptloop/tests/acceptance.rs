//! The acceptance gauntlet: one test per release criterion, each printing a
//! single `criterion NN PASS` line (visible with `--nocapture`). Everything
//! runs against scripted backends — no network, no external services.

use std::io::{Read as _, Write as _};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use promptloop::agent::{ToyAction, ToyPolicyParams};
use promptloop::env::{EnvError, EnvRegistry, Environment, EnvResponse, RemoteChatEnv, RouterPolicy, ScriptedEnv, ScriptedRule};
use promptloop::episode::LoopConfig;
use promptloop::fixtures::{capital_bandit, identifiable_kernel, probe_or_noise_kernel, uninformative_kernel, SequenceAgent};
use promptloop::grpo::{
    log_softmax, policy_gradient, standardize_advantages, surrogate_objective, train_toy,
    GrpoBatch, GrpoConfig,
};
use promptloop::harness::{aggregate, evaluate_logs, run_batch, BatchOptions, BoxedAgentFactory};
use promptloop::history::{History, PromptTemplate, Question, Trajectory};
use promptloop::parser::FormatSignals;
use promptloop::reward::{
    answer_reward, exact_match, token_f1, total_reward, HashedBagEncoder, RewardConfig,
};
use promptloop::stubserver::StubServer;
use promptloop::theory::{
    exact_contraction_curve, simulate_contraction, simulate_transfer, ObservationKernel,
    SimConfig, SimPolicy,
};

fn pass(number: u32, what: &str, elapsed: Duration) {
    println!("criterion {number:02} PASS — {what} ({:.2}s)", elapsed.as_secs_f64());
}

const WORD_POOL: &[&str] = &[
    "paris", "rome", "berlin", "four", "4", "the", "a", "an", "forty-two", "blue",
    "cat", "dog", "answer", "is", "U.S.A.", "don't", "1984", "city",
];

fn random_phrase(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    let n = rng.gen_range(0..=max_words);
    (0..n)
        .map(|_| WORD_POOL[rng.gen_range(0..WORD_POOL.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

/// Coherent random format signals: the content and completeness bits only
/// ever fire when an answer parsed at all, matching what the tag parser can
/// actually produce.
fn random_signals(rng: &mut ChaCha8Rng) -> FormatSignals {
    let turns = rng.gen_range(0..=6);
    let answer_parseable = rng.gen_bool(0.7);
    FormatSignals {
        turn_complete: (0..turns).map(|_| rng.gen_bool(0.7)).collect(),
        answer_parseable,
        answer_non_empty: answer_parseable && rng.gen_bool(0.8),
        final_complete: answer_parseable && rng.gen_bool(0.8),
    }
}

#[test]
fn criterion_01_reward_gating() {
    let start = Instant::now();
    let cfg = RewardConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xFACADE);
    let pairs = 10_000;
    for _ in 0..pairs {
        let signals = random_signals(&mut rng);
        let pred = random_phrase(&mut rng, 4);
        let gold_count = rng.gen_range(1..=3);
        let golds: Vec<String> = (0..gold_count)
            .map(|_| random_phrase(&mut rng, 3))
            .collect();
        let b = total_reward(&signals, &pred, &golds, &cfg).unwrap();
        assert!(b.format <= cfg.cap, "format reward exceeded the cap: {}", b.format);
        assert!(b.format >= 0.0);
        if (b.format - cfg.cap).abs() <= 1e-12 {
            assert_eq!(b.total, b.answer, "open gate must pass the answer reward through");
        } else {
            assert_eq!(b.total, b.format - cfg.cap, "closed gate must be the format shortfall");
            assert!(b.total <= 0.0, "closed-gate total must not be positive: {}", b.total);
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(5), "gating suite too slow: {elapsed:?}");
    pass(1, &format!("reward gating over {pairs} randomized pairs"), elapsed);
}

/// Twenty hand-scored (prediction, golds, EM, F1) cases. The F1 values were
/// worked out by hand from the normalization rules: lowercase, strip ASCII
/// punctuation, drop the articles a/an/the, collapse whitespace, then take
/// the token-multiset harmonic mean (best gold wins).
fn hand_scored_fixture() -> Vec<(&'static str, Vec<&'static str>, bool, f64)> {
    vec![
        ("Paris", vec!["Paris"], true, 1.0),
        ("paris.", vec!["Paris"], true, 1.0),
        ("The Eiffel Tower", vec!["Eiffel Tower"], true, 1.0),
        // Token multisets match even though the order differs.
        ("Einstein, Albert!", vec!["Albert Einstein"], false, 1.0),
        // Punctuation stripping fuses "forty-two" into one token.
        ("forty-two", vec!["forty two"], false, 0.0),
        // Duplicate tokens count once per gold occurrence: P=1/2, R=1.
        ("blue blue", vec!["blue"], false, 2.0 / 3.0),
        ("", vec!["anything"], false, 0.0),
        ("an apple", vec!["apple"], true, 1.0),
        // P=1/3, R=1 → F1 = 1/2.
        ("The answer is Paris", vec!["Paris"], false, 0.5),
        // P=2/3, R=1 → F1 = 4/5.
        ("New York City", vec!["New York"], false, 0.8),
        ("1984", vec!["1984", "Nineteen Eighty-Four"], true, 1.0),
        // Best gold is "nineteen eightyfour": overlap 1, P=1/3, R=1/2.
        ("Nineteen Eighty Four", vec!["1984", "Nineteen Eighty-Four"], false, 0.4),
        ("   Paris   ", vec!["Paris"], true, 1.0),
        ("don't", vec!["dont"], true, 1.0),
        ("U.S.A.", vec!["USA"], true, 1.0),
        // Both sides normalize to nothing at all — a perfect (vacuous) match.
        ("a an the", vec!["the a an"], true, 1.0),
        ("cat", vec!["dog", "cat", "mouse"], true, 1.0),
        // No stemming: "dogs" is not "dog".
        ("cats and dogs", vec!["dog"], false, 0.0),
        ("To be, or not to be", vec!["to be or not to be"], true, 1.0),
        // Same token multiset, different order.
        ("7 April 1770", vec!["April 7, 1770"], false, 1.0),
    ]
}

#[test]
fn criterion_02_metric_oracles() {
    let start = Instant::now();
    for (i, (pred, golds, want_em, want_f1)) in hand_scored_fixture().into_iter().enumerate() {
        let golds: Vec<String> = golds.into_iter().map(String::from).collect();
        let em = exact_match(pred, &golds).unwrap();
        let f1 = answer_reward(pred, &golds).unwrap();
        assert_eq!(em, want_em, "item {i}: EM for {pred:?} vs {golds:?}");
        assert!(
            (f1 - want_f1).abs() < 1e-9,
            "item {i}: F1 for {pred:?} vs {golds:?}: got {f1}, want {want_f1}"
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0xF1F1);
    let fuzz = 10_000;
    for _ in 0..fuzz {
        let a = random_phrase(&mut rng, 5);
        let b = random_phrase(&mut rng, 5);
        let ab = token_f1(&a, &b);
        let ba = token_f1(&b, &a);
        assert_eq!(ab, ba, "F1 must be symmetric: {a:?} / {b:?}");
        assert!((0.0..=1.0).contains(&ab), "F1 out of range: {ab}");
        assert_eq!(token_f1(&a, &a), 1.0, "self-F1 must be perfect: {a:?}");
    }
    pass(2, &format!("EM/F1 hand fixture (20 items) + {fuzz} fuzz cases"), start.elapsed());
}

#[test]
fn criterion_03_advantage_standardization() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xAD7A);
    for batch in 0..1_000 {
        let m = rng.gen_range(2..=128);
        let rewards: Vec<f64> = if batch % 10 == 0 {
            vec![rng.gen_range(-1.0..1.0); m]
        } else {
            (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        let advantages = standardize_advantages(&rewards, 1e-8);
        let mean = advantages.iter().sum::<f64>() / m as f64;
        assert!(mean.abs() <= 1e-9, "advantage mean {mean} too large for batch {batch}");
        if batch % 10 == 0 {
            assert!(
                advantages.iter().all(|&a| a == 0.0),
                "constant batch must standardize to zeros"
            );
        }
    }
    let two_point = standardize_advantages(&[0.0, 2.0], 1e-8);
    assert!((two_point[0] + 1.0).abs() < 1e-4 && (two_point[1] - 1.0).abs() < 1e-4);
    pass(3, "advantage standardization over 1000 random batches", start.elapsed());
}

/// A self-contained surrogate-objective instance for the gradient check.
struct GradInstance {
    batch: GrpoBatch,
    params: ToyPolicyParams,
    ref_params: ToyPolicyParams,
    cfg: GrpoConfig,
}

fn synthetic_trajectory(actions: Vec<usize>, old_log_probs: Vec<f64>) -> Trajectory {
    let question = Question::new("g", "gradient probe", vec!["x".into()], "grad").unwrap();
    Trajectory {
        history: History::new(question, PromptTemplate::default()),
        emissions: Vec::new(),
        final_think: None,
        final_answer: None,
        step_log_probs: Some(old_log_probs),
        step_actions: Some(actions),
        reward: None,
        meta: Default::default(),
    }
}

/// Draws an instance whose sampled ratios sit well away from the clip
/// boundaries: a central difference probes `θ ± h`, so the objective must be
/// smooth in that whole neighbourhood for the comparison to mean anything.
fn random_grad_instance(rng: &mut ChaCha8Rng) -> GradInstance {
    'outer: loop {
        let dims = rng.gen_range(3..=6);
        let logits: Vec<f64> = (0..dims).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let params = ToyPolicyParams { logits };
        let ref_params = ToyPolicyParams {
            logits: (0..dims).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        };
        let cfg = GrpoConfig {
            clip_eps: rng.gen_range(0.05..0.5),
            kl_beta: if rng.gen_bool(0.5) { rng.gen_range(0.0..0.1) } else { 0.0 },
            adv_eps: 1e-8,
            ..GrpoConfig::default()
        };
        let group = rng.gen_range(2..=6);
        let mut trajectories = Vec::with_capacity(group);
        let rewards: Vec<f64> = (0..group).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let log_probs = log_softmax(&params.logits);
        for _ in 0..group {
            let steps = rng.gen_range(1..=4);
            let mut actions = Vec::with_capacity(steps);
            let mut old = Vec::with_capacity(steps);
            for _ in 0..steps {
                let action = rng.gen_range(0..dims);
                // Behaviour-policy log-prob: the current one plus noise, so
                // ratios land in roughly [0.74, 1.35].
                let old_lp = log_probs[action] + rng.gen_range(-0.3..0.3);
                let ratio = (log_probs[action] - old_lp).exp();
                for bound in [1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps] {
                    if (ratio - bound).abs() < 1e-3 {
                        continue 'outer;
                    }
                }
                actions.push(action);
                old.push(old_lp);
            }
            trajectories.push(synthetic_trajectory(actions, old));
        }
        return GradInstance {
            batch: GrpoBatch::new(trajectories, rewards, 1e-8),
            params,
            ref_params,
            cfg,
        };
    }
}

#[test]
fn criterion_04_gradient_check() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6D17);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for instance in 0..100 {
        let GradInstance { batch, params, ref_params, cfg } = random_grad_instance(&mut rng);
        let grad = policy_gradient(&batch, &params, &ref_params, &cfg).unwrap();
        for (j, &analytic) in grad.iter().enumerate() {
            let mut plus = params.clone();
            plus.logits[j] += h;
            let mut minus = params.clone();
            minus.logits[j] -= h;
            let fd = (surrogate_objective(&batch, &plus, &ref_params, &cfg).unwrap()
                - surrogate_objective(&batch, &minus, &ref_params, &cfg).unwrap())
                / (2.0 * h);
            let rel = (analytic - fd).abs() / fd.abs().max(analytic.abs()).max(1e-8);
            assert!(
                rel < 1e-4,
                "instance {instance} dim {j}: analytic {analytic} vs finite difference {fd} (rel {rel})"
            );
            worst = worst.max(rel);
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(30), "gradient check too slow: {elapsed:?}");
    pass(4, &format!("policy gradient vs finite differences, worst rel err {worst:.2e}"), elapsed);
}

#[test]
fn criterion_05_toy_convergence() {
    let start = Instant::now();
    let fixture = capital_bandit();
    let cfg = GrpoConfig {
        learning_rate: 0.5,
        group_size: 16,
        ..GrpoConfig::default()
    };
    for seed in [1, 2, 3] {
        let report = train_toy(
            &fixture.env,
            ToyPolicyParams::uniform(),
            std::slice::from_ref(&fixture.question),
            &fixture.template,
            &fixture.loop_cfg,
            &fixture.reward_cfg,
            &cfg,
            200,
            seed,
        )
        .unwrap();

        // The optimal policy keeps interacting sometimes, so the clean
        // convergence signal is conditional: when the policy commits to a
        // terminal answer action, how often is it the correct one?
        let probs = &report.iterations.last().unwrap().action_probs;
        let correct = probs[ToyAction::CorrectAnswer as usize];
        let terminal = correct
            + probs[ToyAction::WrongAnswer as usize]
            + probs[ToyAction::Malformed as usize];
        let conditional = correct / terminal;
        assert!(
            conditional > 0.9,
            "seed {seed}: P(correct | terminal) = {conditional:.4} after 200 iterations"
        );

        // Smoothed trend: non-overlapping 25-iteration block means must
        // never drop by more than ~2.5 pooled standard errors (0.10 at this
        // group size) and must rise overall.
        let rewards: Vec<f64> = report.iterations.iter().map(|r| r.mean_reward).collect();
        let blocks: Vec<f64> = rewards.chunks(25).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        for pair in blocks.windows(2) {
            assert!(
                pair[1] >= pair[0] - 0.10,
                "seed {seed}: smoothed reward dropped {:.3} → {:.3}",
                pair[0],
                pair[1]
            );
        }
        assert!(
            blocks.last().unwrap() - blocks.first().unwrap() > 0.10,
            "seed {seed}: smoothed reward never rose: {blocks:?}"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(120), "convergence check too slow: {elapsed:?}");
    pass(5, "toy GRPO converges on the prompt bandit for 3 seeds", elapsed);
}

#[test]
fn criterion_06_contraction_simulation() {
    let start = Instant::now();

    // Headline run: a cleanly identifiable kernel must drive the Bayes risk
    // from 2/3 to almost nothing in ten rounds.
    let kernel = identifiable_kernel(3, 0.9);
    let cfg = SimConfig {
        horizon: 10,
        episodes: 10_000,
        prior: vec![1.0 / 3.0; 3],
        seed: 101,
        tv_eps: 0.0,
    };
    let report = simulate_contraction(&kernel, &SimPolicy::FixedAction { action: 0 }, &cfg).unwrap();
    assert!(
        report.non_increasing_within(2.0),
        "risk rose beyond noise: {:?}",
        report.paired_diffs
    );
    assert!(
        report.terminal_mean() < 0.01,
        "terminal risk too high: {}",
        report.terminal_mean()
    );

    // Exact-DP oracle sweep over every small instance we can enumerate.
    let instances: Vec<(ObservationKernel, Vec<f64>)> = vec![
        (identifiable_kernel(2, 0.7), vec![0.5, 0.5]),
        (identifiable_kernel(3, 0.8), vec![1.0 / 3.0; 3]),
        (identifiable_kernel(3, 0.8), vec![0.5, 0.3, 0.2]),
        (probe_or_noise_kernel(3, 0.85), vec![1.0 / 3.0; 3]),
        (uninformative_kernel(3, 4), vec![1.0 / 3.0; 3]),
    ];
    let policies = [
        SimPolicy::FixedAction { action: 0 },
        SimPolicy::RoundRobin,
        SimPolicy::GreedyInfoGain,
    ];
    let mut checked = 0;
    for (kernel, prior) in &instances {
        for policy in &policies {
            for horizon in 1..=3 {
                let exact = exact_contraction_curve(kernel, policy, prior, horizon).unwrap();
                for pair in exact.windows(2) {
                    assert!(
                        pair[1] <= pair[0] + 1e-12,
                        "exact risk curve rose: {exact:?}"
                    );
                }
                let cfg = SimConfig {
                    horizon,
                    episodes: 4_000,
                    prior: prior.clone(),
                    seed: 311 + horizon as u64,
                    tv_eps: 0.0,
                };
                let mc = simulate_contraction(kernel, policy, &cfg).unwrap();
                for (round, stat) in mc.rounds.iter().enumerate() {
                    let slack = 5.0 * stat.std_err + 1e-12;
                    assert!(
                        (stat.mean - exact[round]).abs() <= slack,
                        "round {round}: MC {} vs exact {} (allowed {slack})",
                        stat.mean,
                        exact[round]
                    );
                }
                checked += 1;
            }
        }
    }

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(60), "contraction suite too slow: {elapsed:?}");
    pass(6, &format!("risk contraction: headline run + {checked} exact-DP agreements"), elapsed);
}

#[test]
fn criterion_07_transfer_simulation() {
    let start = Instant::now();
    let kernel_l = probe_or_noise_kernel(3, 0.85);
    // The probe row (0.85, 0.075, 0.075) sits at TV distance 0.85 − 1/3 from
    // uniform, so mixing with weight δ = ε / that distance lands the shifted
    // kernel exactly ε away.
    let probe_tv = 0.85 - 1.0 / 3.0;
    let star = SimPolicy::GreedyInfoGain;
    let alt = SimPolicy::FixedAction { action: 0 }; // the noise action
    for eps in [0.0, 0.01, 0.05] {
        let kernel_lprime = kernel_l.mix_with_uniform(eps / probe_tv);
        let cfg = SimConfig {
            horizon: 3,
            episodes: 20_000,
            prior: vec![1.0 / 3.0; 3],
            seed: 202,
            tv_eps: eps,
        };
        let report =
            simulate_transfer(&kernel_l, &kernel_lprime, &star, &alt, &cfg).unwrap();
        assert!(
            (report.max_tv - eps).abs() < 1e-9,
            "ε={eps}: constructed shift measured {}",
            report.max_tv
        );
        for is_star in [true, false] {
            let shift = report.value_shift(is_star);
            let bound = report.shift_bound(is_star, 3.0);
            assert!(
                shift <= bound,
                "ε={eps} star={is_star}: |ΔV| = {shift:.4} exceeds T·ε + 3·CI = {bound:.4}"
            );
        }
        if eps == 0.0 {
            assert_eq!(report.value_shift(true), 0.0, "identical kernels must shift nothing");
            assert_eq!(report.value_shift(false), 0.0);
        }
        // Margin transfer: whenever the source margin clears 2Tε plus noise
        // slack, the better policy must still be better after the shift.
        if report.margin_certified(3.0) {
            assert!(
                report.lprime_margin() > 0.0,
                "ε={eps}: certified margin did not survive the shift"
            );
        } else {
            assert!(eps > 0.0, "the unshifted margin must certify");
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(60), "transfer suite too slow: {elapsed:?}");
    pass(7, "transfer bound holds for ε ∈ {0, 0.01, 0.05} with margin certification", elapsed);
}

fn batch_questions() -> Vec<Question> {
    vec![
        Question::new("q1", "What is the capital of France?", vec!["Paris".into()], "geo").unwrap(),
        Question::new("q2", "What is 2 + 2?", vec!["4".into(), "four".into()], "math").unwrap(),
        Question::new("q3", "What is the capital of Italy?", vec!["Rome".into()], "geo").unwrap(),
    ]
}

fn scripted_registry(id: &str, response: &str) -> EnvRegistry {
    let mut registry = EnvRegistry::new();
    registry
        .register(Arc::new(
            ScriptedEnv::new(id, vec![ScriptedRule::default_response(response)]).unwrap(),
        ))
        .unwrap();
    registry
}

/// Counts every `respond` call that reaches the wrapped environment.
struct CountingEnv {
    inner: ScriptedEnv,
    calls: AtomicUsize,
}

impl Environment for CountingEnv {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn respond(&self, history: &History, prompt: &str) -> Result<EnvResponse, EnvError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.respond(history, prompt)
    }
}

fn sequence_factory(actions: Vec<ToyAction>) -> BoxedAgentFactory {
    Box::new(move |question| {
        Arc::new(SequenceAgent::new(
            promptloop::agent::ToyAgent::for_question(question, ToyPolicyParams::uniform()),
            actions.clone(),
        ))
    })
}

#[test]
fn criterion_08_protocol_determinism() {
    let start = Instant::now();

    // Same seed, scripted everything: the two logs must match byte for byte.
    let questions = batch_questions();
    let registry = scripted_registry("echo", "All roads lead to Rome.");
    let run_to = |path: &std::path::Path| {
        run_batch(
            &questions,
            &*sequence_factory(vec![ToyAction::Interact, ToyAction::CorrectAnswer]),
            &registry,
            &RouterPolicy::Fixed("echo".into()),
            &PromptTemplate::default(),
            &LoopConfig::default(),
            &RewardConfig::default(),
            &HashedBagEncoder::default(),
            &BatchOptions { parallelism: 3, seed: 99, measure_time: false },
            Some(path),
        )
        .unwrap()
    };
    let log_a = tempfile::NamedTempFile::new().unwrap();
    let log_b = tempfile::NamedTempFile::new().unwrap();
    run_to(log_a.path());
    run_to(log_b.path());
    let bytes_a = std::fs::read(log_a.path()).unwrap();
    let bytes_b = std::fs::read(log_b.path()).unwrap();
    assert!(!bytes_a.is_empty());
    assert_eq!(bytes_a, bytes_b, "fixed-seed logs must be byte-identical");

    // Call budget: an agent that never answers drives exactly max_turns
    // environment calls; a malformed agent drives none.
    for (actions, expected_calls) in [
        (vec![ToyAction::Interact], 3),
        (vec![ToyAction::Malformed], 0),
        (vec![ToyAction::CorrectAnswer], 0),
    ] {
        let counting = Arc::new(CountingEnv {
            inner: ScriptedEnv::new("counted", vec![ScriptedRule::default_response("hm")]).unwrap(),
            calls: AtomicUsize::new(0),
        });
        let mut registry = EnvRegistry::new();
        registry.register(counting.clone() as Arc<dyn Environment>).unwrap();
        run_batch(
            &questions[..1],
            &*sequence_factory(actions),
            &registry,
            &RouterPolicy::Fixed("counted".into()),
            &PromptTemplate::default(),
            &LoopConfig { max_turns: 3, ..LoopConfig::default() },
            &RewardConfig::default(),
            &HashedBagEncoder::default(),
            &BatchOptions { parallelism: 1, seed: 1, measure_time: false },
            None,
        )
        .unwrap();
        let calls = counting.calls.load(Ordering::SeqCst);
        assert!(calls <= 3, "loop exceeded its environment-call budget: {calls}");
        assert_eq!(calls, expected_calls);
    }

    pass(8, "byte-identical logs and environment calls within the turn budget", start.elapsed());
}

/// Accepts connections and answers each with bytes that are not HTTP,
/// counting how many times anyone connected.
fn spawn_garbage_server() -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}", listener.local_addr().unwrap());
    let connections = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&connections);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            counter.fetch_add(1, Ordering::SeqCst);
            let mut scratch = [0u8; 4096];
            let _ = stream.read(&mut scratch);
            let _ = stream.write_all(b"*** this is not an http response ***\r\n");
        }
    });
    (endpoint, connections)
}

#[test]
fn criterion_09_wire_conformance() {
    let start = Instant::now();

    // Round trip through the real HTTP client: the stub's scripted answer
    // must appear verbatim in the trajectory log.
    let scripted_text = "Paris is the capital of France.";
    let server = StubServer::with_rules(
        0,
        vec![ScriptedRule::default_response(scripted_text)],
    )
    .unwrap();
    let mut registry = EnvRegistry::new();
    registry
        .register(Arc::new(
            RemoteChatEnv::new("stub-remote", server.endpoint(), "big-model").without_backoff(),
        ))
        .unwrap();
    let outcome = run_batch(
        &batch_questions()[..1],
        &*sequence_factory(vec![ToyAction::Interact, ToyAction::CorrectAnswer]),
        &registry,
        &RouterPolicy::Fixed("stub-remote".into()),
        &PromptTemplate::default(),
        &LoopConfig::default(),
        &RewardConfig::default(),
        &HashedBagEncoder::default(),
        &BatchOptions { parallelism: 1, seed: 4, measure_time: false },
        None,
    )
    .unwrap();
    let record = &outcome.records[0];
    assert!(record.error.is_none(), "stub round trip failed: {:?}", record.error);
    assert_eq!(record.turns.len(), 1);
    assert_eq!(record.turns[0].response, scripted_text, "scripted answer must survive verbatim");
    assert_eq!(server.request_count(), 1);

    // Malformed HTTP: the client must retry its full budget and surface the
    // failure as an unavailable environment — exactly 3 connection attempts.
    let (endpoint, connections) = spawn_garbage_server();
    let env = RemoteChatEnv::new("garbage", endpoint, "big-model").without_backoff();
    let history = History::new(batch_questions()[0].clone(), PromptTemplate::default());
    match env.respond(&history, "hello?") {
        Err(EnvError::Unavailable { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected Unavailable after retries, got {other:?}"),
    }
    assert_eq!(connections.load(Ordering::SeqCst), 3, "retry budget is exactly 3 attempts");

    pass(9, "stub round trip verbatim; malformed HTTP fails as unavailable after 3 tries", start.elapsed());
}

#[test]
fn criterion_10_offline_rescoring() {
    let start = Instant::now();

    // A log with successes across two tasks plus genuine failures, written
    // by two batches into one file.
    let questions = batch_questions();
    let registry = scripted_registry("echo", "Consult the atlas.");
    let log_good = tempfile::NamedTempFile::new().unwrap();
    let good = run_batch(
        &questions,
        &*sequence_factory(vec![ToyAction::Interact, ToyAction::CorrectAnswer]),
        &registry,
        &RouterPolicy::Fixed("echo".into()),
        &PromptTemplate::default(),
        &LoopConfig::default(),
        &RewardConfig::default(),
        &HashedBagEncoder::default(),
        &BatchOptions { parallelism: 2, seed: 21, measure_time: false },
        Some(log_good.path()),
    )
    .unwrap();

    let broken_registry = scripted_registry("broken", "   ");
    let log_bad = tempfile::NamedTempFile::new().unwrap();
    let bad = run_batch(
        &questions[..1],
        &*sequence_factory(vec![ToyAction::Interact, ToyAction::CorrectAnswer]),
        &broken_registry,
        &RouterPolicy::Fixed("broken".into()),
        &PromptTemplate::default(),
        &LoopConfig::default(),
        &RewardConfig::default(),
        &HashedBagEncoder::default(),
        &BatchOptions { parallelism: 1, seed: 22, measure_time: false },
        Some(log_bad.path()),
    )
    .unwrap();
    assert_eq!(bad.report.overall.failures, 1, "the whitespace env must fail the episode");

    let mut combined = std::fs::read_to_string(log_good.path()).unwrap();
    combined.push_str(&std::fs::read_to_string(log_bad.path()).unwrap());
    let log_all = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(log_all.path(), &combined).unwrap();

    let mut records = good.records.clone();
    records.extend(bad.records.clone());
    let online = aggregate(&records);
    let offline = evaluate_logs(
        log_all.path(),
        &RewardConfig::default(),
        &HashedBagEncoder::default(),
    )
    .unwrap();
    assert_eq!(online, offline, "offline re-scoring must reproduce the online report exactly");
    assert_eq!(offline.overall.failures, 1);
    assert!(offline.overall.episodes >= 3);

    pass(10, "offline re-scoring reproduces the online report bit for bit", start.elapsed());
}
