//! Group-relative policy optimization for the toy policy: standardized
//! advantages, the clipped surrogate with an exact-KL penalty, its analytic
//! gradient, and a plain gradient-ascent training loop.
//!
//! Everything here is closed-form over the four-action softmax policy, which
//! keeps the implementation honest: the gradient is checked against central
//! finite differences, and training is checked against the enumerable reward
//! table of the scripted bandit. No autodiff, no optimizer state.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::ToyPolicyParams;
use crate::env::Environment;
use crate::episode::{run_episode, EpisodeError, LoopConfig};
use crate::history::{PromptTemplate, Question, Trajectory};
use crate::mix_seed;
use crate::reward::{total_reward, RewardConfig, RewardError};

/// Optimization constants, at toy scale.
///
/// Full-scale training in the source experiments used batch 128, learning
/// rate 1e-6, PPO mini-batch 64, micro-batch 2, 5 policy updates per batch,
/// and 8192-token context/response windows; those values are metadata here —
/// the in-process policy needs the small defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    /// Half-width of the ratio clip interval `[1−ε, 1+ε]`.
    pub clip_eps: f64,
    /// Weight of the KL penalty toward the frozen reference policy.
    pub kl_beta: f64,
    /// Stability constant added to the variance before the advantage square
    /// root.
    pub adv_eps: f64,
    pub learning_rate: f64,
    /// Trajectories sampled per group (the standardization unit).
    pub group_size: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            clip_eps: 0.2,
            kl_beta: 0.001,
            adv_eps: 1e-8,
            learning_rate: 1e-2,
            group_size: 8,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(GrpoError::InvalidConfig(format!(
                "clip_eps must lie in (0, 1), got {}",
                self.clip_eps
            )));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return Err(GrpoError::InvalidConfig("kl_beta must be finite and ≥ 0".into()));
        }
        if !self.adv_eps.is_finite() || self.adv_eps <= 0.0 {
            return Err(GrpoError::InvalidConfig("adv_eps must be positive".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(GrpoError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.group_size < 2 {
            return Err(GrpoError::InvalidConfig("group_size must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("batch contains no trajectories")]
    EmptyBatch,
    #[error("policy ratio overflowed to a non-finite value")]
    NonFiniteRatio,
    #[error("trajectory lacks sampling bookkeeping (actions and log-probs)")]
    MissingSampling,
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

/// One group of sampled trajectories with their rewards and standardized
/// advantages.
#[derive(Debug, Clone)]
pub struct GrpoBatch {
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl GrpoBatch {
    /// Pairs trajectories with rewards and fills in standardized advantages.
    pub fn new(trajectories: Vec<Trajectory>, rewards: Vec<f64>, adv_eps: f64) -> Self {
        assert_eq!(trajectories.len(), rewards.len(), "one reward per trajectory");
        let advantages = standardize_advantages(&rewards, adv_eps);
        GrpoBatch {
            trajectories,
            rewards,
            advantages,
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `ln softmax`, computed without exponentiating large logits.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - max - log_sum).collect()
}

/// Exact KL divergence between the categorical policies of two logit
/// vectors.
pub fn kl_divergence(params: &ToyPolicyParams, reference: &ToyPolicyParams) -> f64 {
    let p = softmax(&params.logits);
    let log_p = log_softmax(&params.logits);
    let log_ref = log_softmax(&reference.logits);
    p.iter()
        .zip(log_p.iter().zip(&log_ref))
        .map(|(&pi, (&lp, &lr))| pi * (lp - lr))
        .sum()
}

/// Centers and rescales group rewards: `(r − mean) / sqrt(pop_var + eps)`.
/// Constant groups come out as exact zeros: the summed mean of `n` equal
/// values need not round back to the value itself, and the tiny residuals
/// would otherwise be amplified by the `1/sqrt(eps)` scale.
pub fn standardize_advantages(rewards: &[f64], adv_eps: f64) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return vec![0.0; rewards.len()];
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let variance = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let scale = (variance + adv_eps).sqrt();
    rewards.iter().map(|r| (r - mean) / scale).collect()
}

/// Per-step sampling records of one trajectory.
fn steps(trajectory: &Trajectory) -> Result<(&[usize], &[f64]), GrpoError> {
    match (&trajectory.step_actions, &trajectory.step_log_probs) {
        (Some(actions), Some(log_probs)) if actions.len() == log_probs.len() && !actions.is_empty() => {
            Ok((actions, log_probs))
        }
        _ => Err(GrpoError::MissingSampling),
    }
}

/// The clipped-ratio objective
/// `J = mean_i [ (1/|τᵢ|) Σ_t min(ρ·Â, clip(ρ, 1±ε)·Â) ] − β·KL(π‖π_ref)`
/// with `ρ = exp(log π(a) − log π_old(a))` from the recorded sampling-time
/// log-probs.
pub fn surrogate_objective(
    batch: &GrpoBatch,
    params: &ToyPolicyParams,
    ref_params: &ToyPolicyParams,
    cfg: &GrpoConfig,
) -> Result<f64, GrpoError> {
    cfg.validate()?;
    if batch.trajectories.is_empty() {
        return Err(GrpoError::EmptyBatch);
    }
    let log_probs = log_softmax(&params.logits);
    let mut total = 0.0;
    for (trajectory, &advantage) in batch.trajectories.iter().zip(&batch.advantages) {
        let (actions, old_log_probs) = steps(trajectory)?;
        let mut trajectory_sum = 0.0;
        for (&action, &old_lp) in actions.iter().zip(old_log_probs) {
            let ratio = (log_probs[action] - old_lp).exp();
            if !ratio.is_finite() {
                return Err(GrpoError::NonFiniteRatio);
            }
            let clipped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
            trajectory_sum += (ratio * advantage).min(clipped * advantage);
        }
        total += trajectory_sum / actions.len() as f64;
    }
    let mean = total / batch.trajectories.len() as f64;
    Ok(mean - cfg.kl_beta * kl_divergence(params, ref_params))
}

/// Exact gradient of [`surrogate_objective`] with respect to the logits.
///
/// Where the clip binds (the min picks the clipped branch at a saturated
/// ratio), that step contributes zero gradient; elsewhere the step
/// contributes `Â·ρ·(e_a − p)`. The KL term contributes
/// `−β·p_j·(ln(p_j/ref_j) − KL)`.
pub fn policy_gradient(
    batch: &GrpoBatch,
    params: &ToyPolicyParams,
    ref_params: &ToyPolicyParams,
    cfg: &GrpoConfig,
) -> Result<Vec<f64>, GrpoError> {
    cfg.validate()?;
    if batch.trajectories.is_empty() {
        return Err(GrpoError::EmptyBatch);
    }
    let dims = params.logits.len();
    let probs = softmax(&params.logits);
    let log_probs = log_softmax(&params.logits);
    let mut grad = vec![0.0; dims];

    let batch_scale = 1.0 / batch.trajectories.len() as f64;
    for (trajectory, &advantage) in batch.trajectories.iter().zip(&batch.advantages) {
        let (actions, old_log_probs) = steps(trajectory)?;
        let step_scale = batch_scale / actions.len() as f64;
        for (&action, &old_lp) in actions.iter().zip(old_log_probs) {
            let ratio = (log_probs[action] - old_lp).exp();
            if !ratio.is_finite() {
                return Err(GrpoError::NonFiniteRatio);
            }
            let clipped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
            // The min picks the unclipped branch on ties, matching the
            // objective; only a strictly smaller clipped branch (which is
            // constant in θ) zeroes the step's gradient.
            if ratio * advantage <= clipped * advantage {
                let coefficient = step_scale * advantage * ratio;
                for (j, g) in grad.iter_mut().enumerate() {
                    let indicator = if j == action { 1.0 } else { 0.0 };
                    *g += coefficient * (indicator - probs[j]);
                }
            }
        }
    }

    if cfg.kl_beta != 0.0 {
        let log_ref = log_softmax(&ref_params.logits);
        let kl = kl_divergence(params, ref_params);
        for (j, g) in grad.iter_mut().enumerate() {
            *g -= cfg.kl_beta * probs[j] * (log_probs[j] - log_ref[j] - kl);
        }
    }
    Ok(grad)
}

/// One line of the training report: the state after iteration `iter`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iter: usize,
    /// Mean total reward of the group sampled this iteration.
    pub mean_reward: f64,
    /// Surrogate objective evaluated after the parameter update.
    pub objective: f64,
    /// Logits after the update.
    pub logits: Vec<f64>,
    /// Action distribution after the update.
    pub action_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub iterations: Vec<IterationReport>,
    pub final_params: ToyPolicyParams,
}

impl TrainingReport {
    /// Mean rewards smoothed with a trailing window, for trend checks.
    pub fn smoothed_rewards(&self, window: usize) -> Vec<f64> {
        let rewards: Vec<f64> = self.iterations.iter().map(|r| r.mean_reward).collect();
        if window == 0 || rewards.len() < window {
            return rewards;
        }
        rewards
            .windows(window)
            .map(|w| w.iter().sum::<f64>() / window as f64)
            .collect()
    }
}

/// Trains the toy policy on a scripted environment by plain gradient ascent:
/// each iteration samples one group with the current policy (so ratios start
/// at 1), takes a single gradient step, and logs the result. The reference
/// policy for the KL penalty is frozen at the initial parameters.
///
/// Each sampled episode gets its own agent built from the question being
/// asked ([`crate::agent::ToyAgent::for_question`]), so the correct action
/// always matches that question's gold answer.
#[allow(clippy::too_many_arguments)]
pub fn train_toy(
    env: &dyn Environment,
    initial: ToyPolicyParams,
    questions: &[Question],
    template: &PromptTemplate,
    loop_cfg: &LoopConfig,
    reward_cfg: &RewardConfig,
    cfg: &GrpoConfig,
    iterations: usize,
    seed: u64,
) -> Result<TrainingReport, GrpoError> {
    cfg.validate()?;
    if questions.is_empty() {
        return Err(GrpoError::InvalidConfig("question set is empty".into()));
    }
    let ref_params = initial.clone();
    let mut params = initial;
    let mut reports = Vec::with_capacity(iterations);

    for iter in 0..iterations {
        let old = params.clone();
        let mut trajectories = Vec::with_capacity(cfg.group_size);
        let mut rewards = Vec::with_capacity(cfg.group_size);
        for member in 0..cfg.group_size {
            let draw = iter * cfg.group_size + member;
            let question = questions[draw % questions.len()].clone();
            let agent = crate::agent::ToyAgent::for_question(&question, old.clone());
            let golds = question.gold_answers.clone();
            let mut trajectory = run_episode(
                &agent,
                env,
                question,
                template.clone(),
                loop_cfg,
                mix_seed(seed, draw as u64),
            )?;
            let breakdown = total_reward(
                &trajectory.format_signals(),
                trajectory.answer_text(),
                &golds,
                reward_cfg,
            )?;
            rewards.push(breakdown.total);
            trajectory.reward = Some(breakdown);
            trajectories.push(trajectory);
        }
        let mean_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let batch = GrpoBatch::new(trajectories, rewards, cfg.adv_eps);
        let grad = policy_gradient(&batch, &old, &ref_params, cfg)?;
        let logits: Vec<f64> = old
            .logits
            .iter()
            .zip(&grad)
            .map(|(l, g)| l + cfg.learning_rate * g)
            .collect();
        params = ToyPolicyParams { logits };
        let objective = surrogate_objective(&batch, &params, &ref_params, cfg)?;
        reports.push(IterationReport {
            iter,
            mean_reward,
            objective,
            logits: params.logits.clone(),
            action_probs: params.probs(),
        });
    }
    Ok(TrainingReport {
        iterations: reports,
        final_params: params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::{History, TrajectoryMeta};
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn question() -> Question {
        Question::new("q", "What is the capital of France?", vec!["Paris".into()], "qa").unwrap()
    }

    /// A trajectory that exists only to carry sampling bookkeeping.
    fn synthetic(actions: Vec<usize>, old_log_probs: Vec<f64>) -> Trajectory {
        Trajectory {
            history: History::new(question(), PromptTemplate::default()),
            emissions: vec![String::new(); actions.len()],
            final_think: None,
            final_answer: None,
            step_log_probs: Some(old_log_probs),
            step_actions: Some(actions),
            reward: None,
            meta: TrajectoryMeta::default(),
        }
    }

    fn batch_from(
        specs: Vec<(Vec<usize>, Vec<f64>)>,
        rewards: Vec<f64>,
        adv_eps: f64,
    ) -> GrpoBatch {
        let trajectories = specs
            .into_iter()
            .map(|(actions, lps)| synthetic(actions, lps))
            .collect();
        GrpoBatch::new(trajectories, rewards, adv_eps)
    }

    #[test]
    fn standardize_centers_and_scales() {
        let advantages = standardize_advantages(&[0.0, 2.0], 1e-8);
        assert!((advantages[0] + 1.0).abs() < 1e-4);
        assert!((advantages[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn constant_batch_standardizes_to_zero() {
        let advantages = standardize_advantages(&[1.0, 1.0, 1.0, 1.0], 1e-8);
        for a in advantages {
            assert!(a.abs() < 1e-6);
        }
    }

    #[test]
    fn identical_policies_with_zero_kl_weight_score_zero() {
        let params = ToyPolicyParams {
            logits: vec![0.3, -0.2, 0.1, 0.0],
        };
        let log_probs = log_softmax(&params.logits);
        let batch = batch_from(
            vec![
                (vec![0], vec![log_probs[0]]),
                (vec![1, 2], vec![log_probs[1], log_probs[2]]),
                (vec![3], vec![log_probs[3]]),
            ],
            vec![1.0, 0.0, -1.0],
            1e-8,
        );
        let cfg = GrpoConfig {
            kl_beta: 0.0,
            ..GrpoConfig::default()
        };
        let j = surrogate_objective(&batch, &params, &params, &cfg).unwrap();
        assert!(j.abs() < 1e-9, "ratio-one objective must equal mean advantage (0), got {j}");
    }

    #[test]
    fn hand_evaluated_clip_branch() {
        // Single trajectory, single action: Â = 1 forced via adv input, ρ = 2.
        let params = ToyPolicyParams {
            logits: vec![0.0, 0.0, 0.0, 0.0],
        };
        let log_probs = log_softmax(&params.logits);
        // old log-prob chosen so ρ = exp(lp − old) = 2.
        let old = log_probs[0] - 2.0_f64.ln();
        let mut batch = batch_from(vec![(vec![0], vec![old])], vec![0.0], 1e-8);
        batch.advantages = vec![1.0];
        let cfg = GrpoConfig {
            clip_eps: 0.2,
            kl_beta: 0.0,
            ..GrpoConfig::default()
        };
        let j = surrogate_objective(&batch, &params, &params, &cfg).unwrap();
        assert!((j - 1.2).abs() < 1e-9, "min(2·1, 1.2·1) = 1.2, got {j}");
    }

    #[test]
    fn kl_of_identical_policies_is_zero() {
        let params = ToyPolicyParams {
            logits: vec![1.0, -2.0, 0.5, 0.0],
        };
        assert!(kl_divergence(&params, &params).abs() < 1e-12);
        let other = ToyPolicyParams {
            logits: vec![0.0; 4],
        };
        assert!(kl_divergence(&params, &other) > 0.0);
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (GrpoBatch, ToyPolicyParams, ToyPolicyParams, GrpoConfig) {
        let dims = 4;
        let mut logits = || -> Vec<f64> { (0..dims).map(|_| rng.gen_range(-1.5..1.5)).collect() };
        let params = ToyPolicyParams { logits: logits() };
        let ref_params = ToyPolicyParams { logits: logits() };
        let old_params = ToyPolicyParams { logits: logits() };
        let old_log = log_softmax(&old_params.logits);
        let group = rng.gen_range(2..6);
        let mut specs = Vec::new();
        let mut rewards = Vec::new();
        for _ in 0..group {
            let steps = rng.gen_range(1..4);
            let actions: Vec<usize> = (0..steps).map(|_| rng.gen_range(0..dims)).collect();
            let lps: Vec<f64> = actions.iter().map(|&a| old_log[a]).collect();
            specs.push((actions, lps));
            rewards.push(rng.gen_range(-1.0..1.0));
        }
        let cfg = GrpoConfig {
            clip_eps: rng.gen_range(0.05..0.5),
            kl_beta: rng.gen_range(0.0..0.1),
            ..GrpoConfig::default()
        };
        (batch_from(specs, rewards, cfg.adv_eps), params, ref_params, cfg)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let (batch, params, ref_params, cfg) = random_instance(&mut rng);
            let grad = policy_gradient(&batch, &params, &ref_params, &cfg).unwrap();
            for (j, &analytic) in grad.iter().enumerate() {
                let mut plus = params.clone();
                plus.logits[j] += h;
                let mut minus = params.clone();
                minus.logits[j] -= h;
                let fd = (surrogate_objective(&batch, &plus, &ref_params, &cfg).unwrap()
                    - surrogate_objective(&batch, &minus, &ref_params, &cfg).unwrap())
                    / (2.0 * h);
                let denom = fd.abs().max(analytic.abs()).max(1e-8);
                worst = worst.max((fd - analytic).abs() / denom);
            }
        }
        assert!(worst < 1e-4, "worst relative FD error {worst}");
    }

    #[test]
    fn zero_advantage_zero_kl_gives_zero_gradient() {
        let params = ToyPolicyParams {
            logits: vec![0.4, 0.1, -0.3, 0.0],
        };
        let log_probs = log_softmax(&params.logits);
        let batch = batch_from(
            vec![
                (vec![0], vec![log_probs[0]]),
                (vec![1], vec![log_probs[1]]),
            ],
            vec![0.5, 0.5], // constant rewards → zero advantages
            1e-8,
        );
        let cfg = GrpoConfig {
            kl_beta: 0.0,
            ..GrpoConfig::default()
        };
        let grad = policy_gradient(&batch, &params, &params, &cfg).unwrap();
        for g in grad {
            assert!(g.abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_old_policy_gradient_cancels() {
        // θ == θ_old, β = 0: Σ_i Â_i = 0 makes the summed score terms cancel
        // exactly when every trajectory has the same single-step shape.
        let params = ToyPolicyParams {
            logits: vec![0.2, -0.1, 0.05, 0.0],
        };
        let log_probs = log_softmax(&params.logits);
        let batch = batch_from(
            vec![
                (vec![2], vec![log_probs[2]]),
                (vec![2], vec![log_probs[2]]),
            ],
            vec![1.0, -1.0],
            1e-8,
        );
        let cfg = GrpoConfig {
            kl_beta: 0.0,
            ..GrpoConfig::default()
        };
        let grad = policy_gradient(&batch, &params, &params, &cfg).unwrap();
        for g in grad {
            assert!(g.abs() < 1e-9);
        }
    }

    #[test]
    fn empty_batch_is_an_error() {
        let params = ToyPolicyParams::uniform();
        let batch = GrpoBatch::new(Vec::new(), Vec::new(), 1e-8);
        assert!(matches!(
            surrogate_objective(&batch, &params, &params, &GrpoConfig::default()),
            Err(GrpoError::EmptyBatch)
        ));
    }

    #[test]
    fn missing_bookkeeping_is_an_error() {
        let mut trajectory = synthetic(vec![0], vec![0.0]);
        trajectory.step_actions = None;
        let batch = GrpoBatch::new(vec![trajectory], vec![1.0], 1e-8);
        let params = ToyPolicyParams::uniform();
        assert!(matches!(
            surrogate_objective(&batch, &params, &params, &GrpoConfig::default()),
            Err(GrpoError::MissingSampling)
        ));
    }

    #[test]
    fn clip_validation_rejects_out_of_range() {
        let cfg = GrpoConfig {
            clip_eps: 1.0,
            ..GrpoConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = GrpoConfig {
            group_size: 1,
            ..GrpoConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #[test]
        fn advantages_center_to_zero(rewards in proptest::collection::vec(-10.0f64..10.0, 2..64)) {
            let advantages = standardize_advantages(&rewards, 1e-8);
            let mean: f64 = advantages.iter().sum::<f64>() / advantages.len() as f64;
            prop_assert!(mean.abs() < 1e-9);
        }

        #[test]
        fn advantage_scale_never_exceeds_one(rewards in proptest::collection::vec(-10.0f64..10.0, 2..64)) {
            let advantages = standardize_advantages(&rewards, 1e-8);
            let n = advantages.len() as f64;
            let var: f64 = advantages.iter().map(|a| a * a).sum::<f64>() / n;
            // eps shrinkage only ever reduces the standardized variance.
            prop_assert!(var.sqrt() <= 1.0 + 1e-9);
        }

        #[test]
        fn per_step_term_respects_clip_bound(
            ratio_log in -2.0f64..2.0,
            advantage in -3.0f64..3.0,
            clip_eps in 0.05f64..0.5,
        ) {
            // min(ρÂ, clip(ρ)Â) never exceeds either branch.
            let ratio = ratio_log.exp();
            let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
            let term = (ratio * advantage).min(clipped * advantage);
            prop_assert!(term <= ratio * advantage + 1e-12);
            prop_assert!(term <= clipped * advantage + 1e-12);
        }
    }

    #[test]
    fn objective_invariant_under_clip_inside_trust_region() {
        // When every ratio already lies in [1−ε, 1+ε], clipping is a no-op.
        let params = ToyPolicyParams {
            logits: vec![0.05, -0.05, 0.0, 0.0],
        };
        let old = ToyPolicyParams {
            logits: vec![0.0; 4],
        };
        let old_log = log_softmax(&old.logits);
        let batch = batch_from(
            vec![
                (vec![0], vec![old_log[0]]),
                (vec![1], vec![old_log[1]]),
            ],
            vec![1.0, -1.0],
            1e-8,
        );
        let cfg = GrpoConfig {
            clip_eps: 0.2,
            kl_beta: 0.0,
            ..GrpoConfig::default()
        };
        let log_new = log_softmax(&params.logits);
        // Verify the premise: ratios inside the trust region.
        for (traj, _) in batch.trajectories.iter().zip(&batch.advantages) {
            for (&a, &lp) in traj
                .step_actions
                .as_ref()
                .unwrap()
                .iter()
                .zip(traj.step_log_probs.as_ref().unwrap())
            {
                let ratio = (log_new[a] - lp).exp();
                assert!(ratio > 0.8 && ratio < 1.2);
            }
        }
        // Objective equals the unclipped evaluation with a huge clip range.
        let wide = GrpoConfig {
            clip_eps: 0.999,
            ..cfg.clone()
        };
        let j_tight = surrogate_objective(&batch, &params, &old, &cfg).unwrap();
        let j_wide = surrogate_objective(&batch, &params, &old, &wide).unwrap();
        assert!((j_tight - j_wide).abs() < 1e-12);
    }
}
