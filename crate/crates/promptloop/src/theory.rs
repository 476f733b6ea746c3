//! Monte-Carlo interaction theory: Bayesian posterior tracking over a hidden
//! class, the risk potential `V = 1 − max π`, and simulators that measure
//! how interaction contracts that risk and how values transfer between
//! nearby environments.
//!
//! The model: a hidden class `Y` is drawn from a prior; each round the
//! policy picks an action and receives an observation distributed according
//! to the kernel's `(action, class)` row. Everything is finite, which makes
//! an exhaustive-enumeration oracle ([`exact_contraction_curve`]) possible
//! on small instances — the Monte-Carlo estimates are checked against it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mix_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("invalid simulation configuration: {0}")]
    InvalidConfig(String),
    #[error("observation {observation} under action {action} has zero probability under every class")]
    ZeroEvidence { action: usize, observation: usize },
    #[error(
        "kernels differ by total variation {distance:.6} at (action {action}, class {class}), over the declared budget {budget}"
    )]
    TvBudgetExceeded {
        action: usize,
        class: usize,
        distance: f64,
        budget: f64,
    },
}

/// Class-conditional observation law: `probs[action][class]` is a
/// distribution over the observation alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationKernel {
    pub class_labels: Vec<String>,
    pub action_labels: Vec<String>,
    pub observation_labels: Vec<String>,
    pub probs: Vec<Vec<Vec<f64>>>,
}

impl ObservationKernel {
    pub fn classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn actions(&self) -> usize {
        self.action_labels.len()
    }

    pub fn observations(&self) -> usize {
        self.observation_labels.len()
    }

    pub fn validate(&self) -> Result<(), TheoryError> {
        if self.classes() == 0 || self.actions() == 0 || self.observations() == 0 {
            return Err(TheoryError::InvalidKernel(
                "classes, actions, and observations must all be non-empty".into(),
            ));
        }
        if self.probs.len() != self.actions() {
            return Err(TheoryError::InvalidKernel(format!(
                "expected {} action tables, found {}",
                self.actions(),
                self.probs.len()
            )));
        }
        for (a, per_class) in self.probs.iter().enumerate() {
            if per_class.len() != self.classes() {
                return Err(TheoryError::InvalidKernel(format!(
                    "action {a}: expected {} class rows, found {}",
                    self.classes(),
                    per_class.len()
                )));
            }
            for (c, row) in per_class.iter().enumerate() {
                if row.len() != self.observations() {
                    return Err(TheoryError::InvalidKernel(format!(
                        "action {a}, class {c}: expected {} observation probabilities, found {}",
                        self.observations(),
                        row.len()
                    )));
                }
                let mut sum = 0.0;
                for &p in row {
                    if !(p >= 0.0 && p.is_finite()) {
                        return Err(TheoryError::InvalidKernel(format!(
                            "action {a}, class {c}: probability {p} is negative or non-finite"
                        )));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(TheoryError::InvalidKernel(format!(
                        "action {a}, class {c}: row sums to {sum}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The observation distribution for one (action, class) pair.
    pub fn row(&self, action: usize, class: usize) -> &[f64] {
        &self.probs[action][class]
    }

    /// Blends every row toward the uniform observation distribution:
    /// `(1−delta)·row + delta·uniform`. Useful for building perturbed
    /// kernels with a known total-variation distance (`delta` times each
    /// row's distance to uniform).
    pub fn mix_with_uniform(&self, delta: f64) -> ObservationKernel {
        let uniform = 1.0 / self.observations() as f64;
        let mut mixed = self.clone();
        for per_class in &mut mixed.probs {
            for row in per_class {
                for p in row {
                    *p = (1.0 - delta) * *p + delta * uniform;
                }
            }
        }
        mixed
    }
}

/// Largest per-(action, class) total-variation distance between two kernels
/// over the same shape.
pub fn max_tv_distance(
    a: &ObservationKernel,
    b: &ObservationKernel,
) -> Result<f64, TheoryError> {
    if a.actions() != b.actions()
        || a.classes() != b.classes()
        || a.observations() != b.observations()
    {
        return Err(TheoryError::InvalidKernel(
            "kernels have different shapes".into(),
        ));
    }
    let mut max = 0.0f64;
    for action in 0..a.actions() {
        for class in 0..a.classes() {
            let distance: f64 = a
                .row(action, class)
                .iter()
                .zip(b.row(action, class))
                .map(|(p, q)| (p - q).abs())
                .sum::<f64>()
                / 2.0;
            max = max.max(distance);
        }
    }
    Ok(max)
}

/// Bayes posterior after seeing `observation` from `action`:
/// `π'(y) ∝ π(y)·K_a(obs|y)`.
pub fn posterior_update(
    prior: &[f64],
    kernel: &ObservationKernel,
    action: usize,
    observation: usize,
) -> Result<Vec<f64>, TheoryError> {
    let mut posterior: Vec<f64> = prior
        .iter()
        .enumerate()
        .map(|(y, &p)| p * kernel.row(action, y)[observation])
        .collect();
    let mass: f64 = posterior.iter().sum();
    if mass <= 0.0 {
        return Err(TheoryError::ZeroEvidence {
            action,
            observation,
        });
    }
    for p in &mut posterior {
        *p /= mass;
    }
    Ok(posterior)
}

/// Risk potential `V(π) = 1 − max_y π(y)`: the error probability of the
/// Bayes-optimal guess under the current belief.
pub fn risk_potential(posterior: &[f64]) -> f64 {
    1.0 - posterior.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Deterministic action choosers for the simulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SimPolicy {
    /// Always the same action.
    FixedAction { action: usize },
    /// Cycles through the action set by round index.
    RoundRobin,
    /// Picks the action minimizing the expected risk potential after one
    /// more observation (ties go to the lowest index).
    GreedyInfoGain,
}

impl SimPolicy {
    pub fn choose(&self, round: usize, posterior: &[f64], kernel: &ObservationKernel) -> usize {
        match self {
            SimPolicy::FixedAction { action } => *action,
            SimPolicy::RoundRobin => round % kernel.actions(),
            SimPolicy::GreedyInfoGain => {
                let mut best = 0;
                let mut best_risk = f64::INFINITY;
                for action in 0..kernel.actions() {
                    let risk = expected_posterior_risk(posterior, kernel, action);
                    if risk < best_risk {
                        best_risk = risk;
                        best = action;
                    }
                }
                best
            }
        }
    }

    pub fn validate(&self, kernel: &ObservationKernel) -> Result<(), TheoryError> {
        if let SimPolicy::FixedAction { action } = self {
            if *action >= kernel.actions() {
                return Err(TheoryError::InvalidConfig(format!(
                    "fixed action {action} out of range for {} actions",
                    kernel.actions()
                )));
            }
        }
        Ok(())
    }
}

/// `E_obs[V(posterior | obs)]` for one candidate action under the current
/// belief — the quantity the greedy policy minimizes.
fn expected_posterior_risk(posterior: &[f64], kernel: &ObservationKernel, action: usize) -> f64 {
    let mut expected = 0.0;
    for obs in 0..kernel.observations() {
        let p_obs: f64 = posterior
            .iter()
            .enumerate()
            .map(|(y, &p)| p * kernel.row(action, y)[obs])
            .sum();
        if p_obs <= 0.0 {
            continue;
        }
        let updated = posterior_update(posterior, kernel, action, obs)
            .expect("positive evidence mass by construction");
        expected += p_obs * risk_potential(&updated);
    }
    expected
}

/// Horizon, episode budget, prior, and seed shared by both simulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: usize,
    pub episodes: usize,
    pub prior: Vec<f64>,
    pub seed: u64,
    /// Declared per-(action, class) total-variation budget for transfer
    /// runs; contraction runs ignore it.
    #[serde(default)]
    pub tv_eps: f64,
}

impl SimConfig {
    pub fn validate(&self, kernel: &ObservationKernel) -> Result<(), TheoryError> {
        if self.horizon == 0 {
            return Err(TheoryError::InvalidConfig("horizon must be at least 1".into()));
        }
        if self.episodes < 100 {
            return Err(TheoryError::InvalidConfig(
                "confidence intervals need at least 100 episodes".into(),
            ));
        }
        if self.prior.len() != kernel.classes() {
            return Err(TheoryError::InvalidConfig(format!(
                "prior has {} entries for {} classes",
                self.prior.len(),
                kernel.classes()
            )));
        }
        let mut sum = 0.0;
        for &p in &self.prior {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(TheoryError::InvalidConfig(
                    "prior entries must be finite and non-negative".into(),
                ));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(TheoryError::InvalidConfig(format!(
                "prior sums to {sum}, expected 1"
            )));
        }
        if !(self.tv_eps >= 0.0 && self.tv_eps.is_finite()) {
            return Err(TheoryError::InvalidConfig(
                "tv_eps must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Mean and standard error of one per-round estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStat {
    pub round: usize,
    pub mean: f64,
    pub std_err: f64,
}

/// Paired per-episode difference `V_t − V_{t−1}`, the statistic behind the
/// monotone-contraction check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDiff {
    /// The later round `t` of the pair.
    pub round: usize,
    pub mean: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub episodes: usize,
    /// `E[V(H_t)]` for `t = 0..=horizon`.
    pub rounds: Vec<RoundStat>,
    pub paired_diffs: Vec<PairedDiff>,
}

impl ContractionReport {
    pub fn terminal_mean(&self) -> f64 {
        self.rounds.last().map(|r| r.mean).unwrap_or(0.0)
    }

    /// True when every paired difference is ≤ `sigmas` standard errors
    /// above zero — the risk curve is non-increasing within noise.
    pub fn non_increasing_within(&self, sigmas: f64) -> bool {
        self.paired_diffs
            .iter()
            .all(|d| d.mean <= sigmas * d.std_err)
    }
}

/// Accumulates mean/variance per slot across episodes.
struct RunningStats {
    count: usize,
    sums: Vec<f64>,
    sum_squares: Vec<f64>,
}

impl RunningStats {
    fn new(slots: usize) -> Self {
        RunningStats {
            count: 0,
            sums: vec![0.0; slots],
            sum_squares: vec![0.0; slots],
        }
    }

    fn push(&mut self, values: &[f64]) {
        self.count += 1;
        for (slot, &v) in values.iter().enumerate() {
            self.sums[slot] += v;
            self.sum_squares[slot] += v * v;
        }
    }

    fn mean(&self, slot: usize) -> f64 {
        self.sums[slot] / self.count as f64
    }

    fn std_err(&self, slot: usize) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let mean = self.mean(slot);
        let variance = ((self.sum_squares[slot] / n) - mean * mean).max(0.0) * n / (n - 1.0);
        (variance / n).sqrt()
    }
}

fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let draw: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (index, &p) in probs.iter().enumerate() {
        cumulative += p;
        if draw < cumulative {
            return index;
        }
    }
    probs.len() - 1
}

/// Rolls `episodes` belief trajectories and reports the per-round mean risk
/// potential with standard errors, plus paired round-to-round differences.
pub fn simulate_contraction(
    kernel: &ObservationKernel,
    policy: &SimPolicy,
    cfg: &SimConfig,
) -> Result<ContractionReport, TheoryError> {
    kernel.validate()?;
    cfg.validate(kernel)?;
    policy.validate(kernel)?;

    let slots = cfg.horizon + 1;
    let mut levels = RunningStats::new(slots);
    let mut diffs = RunningStats::new(cfg.horizon);

    for episode in 0..cfg.episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, episode as u64));
        let truth = sample_index(&cfg.prior, &mut rng);
        let mut posterior = cfg.prior.clone();
        let mut risks = Vec::with_capacity(slots);
        risks.push(risk_potential(&posterior));
        for round in 0..cfg.horizon {
            let action = policy.choose(round, &posterior, kernel);
            let observation = sample_index(kernel.row(action, truth), &mut rng);
            posterior = posterior_update(&posterior, kernel, action, observation)?;
            risks.push(risk_potential(&posterior));
        }
        let deltas: Vec<f64> = risks.windows(2).map(|w| w[1] - w[0]).collect();
        levels.push(&risks);
        diffs.push(&deltas);
    }

    Ok(ContractionReport {
        episodes: cfg.episodes,
        rounds: (0..slots)
            .map(|t| RoundStat {
                round: t,
                mean: levels.mean(t),
                std_err: levels.std_err(t),
            })
            .collect(),
        paired_diffs: (0..cfg.horizon)
            .map(|t| PairedDiff {
                round: t + 1,
                mean: diffs.mean(t),
                std_err: diffs.std_err(t),
            })
            .collect(),
    })
}

/// Exhaustive-enumeration counterpart of [`simulate_contraction`]: walks
/// every observation path, weighting by its exact marginal probability.
/// Exponential in the horizon — intended for small instances, where it is
/// the oracle the Monte-Carlo estimates are checked against.
pub fn exact_contraction_curve(
    kernel: &ObservationKernel,
    policy: &SimPolicy,
    prior: &[f64],
    horizon: usize,
) -> Result<Vec<f64>, TheoryError> {
    kernel.validate()?;
    policy.validate(kernel)?;
    let mut states: Vec<(Vec<f64>, f64)> = vec![(prior.to_vec(), 1.0)];
    let mut curve = Vec::with_capacity(horizon + 1);
    curve.push(risk_potential(prior));
    for round in 0..horizon {
        let mut next: Vec<(Vec<f64>, f64)> = Vec::new();
        for (posterior, path_prob) in &states {
            let action = policy.choose(round, posterior, kernel);
            for obs in 0..kernel.observations() {
                let p_obs: f64 = posterior
                    .iter()
                    .enumerate()
                    .map(|(y, &p)| p * kernel.row(action, y)[obs])
                    .sum();
                if p_obs <= 0.0 {
                    continue;
                }
                let updated = posterior_update(posterior, kernel, action, obs)?;
                next.push((updated, path_prob * p_obs));
            }
        }
        states = next;
        curve.push(
            states
                .iter()
                .map(|(posterior, prob)| prob * risk_potential(posterior))
                .sum(),
        );
    }
    Ok(curve)
}

/// Monte-Carlo estimate of one policy's terminal guess accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub episodes: usize,
}

/// Four value estimates — two policies crossed with two environments — plus
/// the measured kernel shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub horizon: usize,
    pub tv_eps: f64,
    /// Largest measured per-(action, class) total-variation distance.
    pub max_tv: f64,
    pub star_in_l: ValueEstimate,
    pub star_in_lprime: ValueEstimate,
    pub alt_in_l: ValueEstimate,
    pub alt_in_lprime: ValueEstimate,
}

impl TransferReport {
    /// `|V_{L'}(π) − V_L(π)|` for the chosen policy.
    pub fn value_shift(&self, star: bool) -> f64 {
        let (l, lp) = self.pair(star);
        (lp.mean - l.mean).abs()
    }

    /// The transfer bound `T·ε` plus `sigmas` combined standard errors.
    pub fn shift_bound(&self, star: bool, sigmas: f64) -> f64 {
        let (l, lp) = self.pair(star);
        let combined = (l.std_err.powi(2) + lp.std_err.powi(2)).sqrt();
        self.horizon as f64 * self.tv_eps + sigmas * combined
    }

    /// `V_L(π*) − V_L(π_alt)`: the source-environment margin.
    pub fn l_margin(&self) -> f64 {
        self.star_in_l.mean - self.alt_in_l.mean
    }

    pub fn lprime_margin(&self) -> f64 {
        self.star_in_lprime.mean - self.alt_in_lprime.mean
    }

    /// Combined standard error of the source-environment margin.
    pub fn l_margin_std_err(&self) -> f64 {
        (self.star_in_l.std_err.powi(2) + self.alt_in_l.std_err.powi(2)).sqrt()
    }

    /// True when the source margin is large enough (`> 2Tε` plus noise
    /// slack) that the advantage must survive the shift.
    pub fn margin_certified(&self, sigmas: f64) -> bool {
        self.l_margin() > 2.0 * self.horizon as f64 * self.tv_eps
            + sigmas * self.l_margin_std_err()
    }

    fn pair(&self, star: bool) -> (&ValueEstimate, &ValueEstimate) {
        if star {
            (&self.star_in_l, &self.star_in_lprime)
        } else {
            (&self.alt_in_l, &self.alt_in_lprime)
        }
    }
}

/// One policy's guess accuracy when its belief updates use `belief_kernel`
/// but observations are drawn from `env_kernel`. Seeds depend only on the
/// policy slot, so runs against different environments of identical law are
/// exactly paired.
fn estimate_value(
    policy: &SimPolicy,
    belief_kernel: &ObservationKernel,
    env_kernel: &ObservationKernel,
    cfg: &SimConfig,
    policy_salt: u64,
) -> Result<ValueEstimate, TheoryError> {
    let mut stats = RunningStats::new(1);
    for episode in 0..cfg.episodes {
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed ^ policy_salt, episode as u64));
        let truth = sample_index(&cfg.prior, &mut rng);
        let mut posterior = cfg.prior.clone();
        for round in 0..cfg.horizon {
            let action = policy.choose(round, &posterior, belief_kernel);
            let observation = sample_index(env_kernel.row(action, truth), &mut rng);
            posterior = posterior_update(&posterior, belief_kernel, action, observation)?;
        }
        let guess = posterior
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("posterior entries are finite"))
            .map(|(index, _)| index)
            .unwrap_or(0);
        stats.push(&[if guess == truth { 1.0 } else { 0.0 }]);
    }
    Ok(ValueEstimate {
        mean: stats.mean(0),
        std_err: stats.std_err(0),
        episodes: cfg.episodes,
    })
}

/// Estimates both policies in both environments. The belief side always
/// uses `kernel_l` — the policy was "trained" there — while observations
/// come from whichever environment is being measured. Fails when the actual
/// kernel shift exceeds the declared `tv_eps`.
pub fn simulate_transfer(
    kernel_l: &ObservationKernel,
    kernel_lprime: &ObservationKernel,
    policy_star: &SimPolicy,
    policy_alt: &SimPolicy,
    cfg: &SimConfig,
) -> Result<TransferReport, TheoryError> {
    kernel_l.validate()?;
    kernel_lprime.validate()?;
    cfg.validate(kernel_l)?;
    policy_star.validate(kernel_l)?;
    policy_alt.validate(kernel_l)?;

    let mut max_tv = 0.0f64;
    for action in 0..kernel_l.actions() {
        for class in 0..kernel_l.classes() {
            let distance: f64 = kernel_l
                .row(action, class)
                .iter()
                .zip(kernel_lprime.row(action, class))
                .map(|(p, q)| (p - q).abs())
                .sum::<f64>()
                / 2.0;
            if distance > cfg.tv_eps + 1e-12 {
                return Err(TheoryError::TvBudgetExceeded {
                    action,
                    class,
                    distance,
                    budget: cfg.tv_eps,
                });
            }
            max_tv = max_tv.max(distance);
        }
    }

    Ok(TransferReport {
        horizon: cfg.horizon,
        tv_eps: cfg.tv_eps,
        max_tv,
        star_in_l: estimate_value(policy_star, kernel_l, kernel_l, cfg, 0x5354_4152)?,
        star_in_lprime: estimate_value(policy_star, kernel_l, kernel_lprime, cfg, 0x5354_4152)?,
        alt_in_l: estimate_value(policy_alt, kernel_l, kernel_l, cfg, 0x414c_5400)?,
        alt_in_lprime: estimate_value(policy_alt, kernel_l, kernel_lprime, cfg, 0x414c_5400)?,
    })
}

/// Kernel + policy + run parameters for a contraction run, as read from a
/// JSON file by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionSpec {
    pub kernel: ObservationKernel,
    pub policy: SimPolicy,
    pub config: SimConfig,
}

/// Both kernels plus the two policies for a transfer run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSpec {
    pub kernel_l: ObservationKernel,
    pub kernel_lprime: ObservationKernel,
    pub policy_star: SimPolicy,
    pub policy_alt: SimPolicy,
    pub config: SimConfig,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    /// Single-action kernel from explicit class rows.
    fn kernel_1a(rows: Vec<Vec<f64>>) -> ObservationKernel {
        let classes = rows.len();
        let observations = rows[0].len();
        ObservationKernel {
            class_labels: labels("y", classes),
            action_labels: labels("a", 1),
            observation_labels: labels("o", observations),
            probs: vec![rows],
        }
    }

    /// Three-class kernel whose one action reveals the class with
    /// probability `hit`.
    fn identifiable(hit: f64) -> ObservationKernel {
        let miss = (1.0 - hit) / 2.0;
        kernel_1a(vec![
            vec![hit, miss, miss],
            vec![miss, hit, miss],
            vec![miss, miss, hit],
        ])
    }

    fn cfg(horizon: usize, episodes: usize, classes: usize, seed: u64) -> SimConfig {
        SimConfig {
            horizon,
            episodes,
            prior: vec![1.0 / classes as f64; classes],
            seed,
            tv_eps: 0.0,
        }
    }

    #[test]
    fn hand_bayes_update() {
        let kernel = kernel_1a(vec![vec![0.9, 0.1], vec![0.3, 0.7]]);
        let posterior = posterior_update(&[0.5, 0.5], &kernel, 0, 0).unwrap();
        assert!((posterior[0] - 0.75).abs() < 1e-12);
        assert!((posterior[1] - 0.25).abs() < 1e-12);
        assert!((risk_potential(&posterior) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn uninformative_kernel_leaves_prior_unchanged() {
        let kernel = kernel_1a(vec![vec![0.6, 0.4], vec![0.6, 0.4]]);
        let prior = [0.3, 0.7];
        for obs in 0..2 {
            let posterior = posterior_update(&prior, &kernel, 0, obs).unwrap();
            assert!((posterior[0] - 0.3).abs() < 1e-12);
            assert!((posterior[1] - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn separating_kernel_concentrates_in_one_step() {
        let kernel = kernel_1a(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let posterior = posterior_update(&[0.5, 0.5], &kernel, 0, 1).unwrap();
        assert_eq!(posterior, vec![0.0, 1.0]);
        assert_eq!(risk_potential(&posterior), 0.0);
    }

    #[test]
    fn zero_evidence_is_an_error() {
        let kernel = kernel_1a(vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
        let err = posterior_update(&[0.5, 0.5], &kernel, 0, 1).unwrap_err();
        assert_eq!(
            err,
            TheoryError::ZeroEvidence {
                action: 0,
                observation: 1
            }
        );
    }

    #[test]
    fn risk_of_uniform_and_point_mass() {
        assert!((risk_potential(&[0.25; 4]) - 0.75).abs() < 1e-12);
        assert_eq!(risk_potential(&[0.0, 1.0, 0.0]), 0.0);
    }

    #[test]
    fn kernel_validation_catches_bad_rows() {
        let mut kernel = kernel_1a(vec![vec![0.9, 0.1], vec![0.3, 0.7]]);
        kernel.probs[0][1][0] = 0.4; // row now sums to 1.1
        assert!(matches!(kernel.validate(), Err(TheoryError::InvalidKernel(_))));
    }

    #[test]
    fn contraction_on_uninformative_kernel_is_flat() {
        let kernel = kernel_1a(vec![vec![0.6, 0.4], vec![0.6, 0.4]]);
        let report = simulate_contraction(
            &kernel,
            &SimPolicy::FixedAction { action: 0 },
            &cfg(5, 200, 2, 11),
        )
        .unwrap();
        for stat in &report.rounds {
            assert!((stat.mean - 0.5).abs() < 1e-12);
            assert!(stat.std_err < 1e-12);
        }
        assert!(report.non_increasing_within(2.0));
    }

    #[test]
    fn contraction_matches_exact_enumeration_on_small_instance() {
        let kernel = identifiable(0.7);
        let policy = SimPolicy::FixedAction { action: 0 };
        let config = cfg(4, 4000, 3, 23);
        let report = simulate_contraction(&kernel, &policy, &config).unwrap();
        let exact = exact_contraction_curve(&kernel, &policy, &config.prior, 4).unwrap();
        assert_eq!(exact.len(), report.rounds.len());
        for (stat, &truth) in report.rounds.iter().zip(&exact) {
            let slack = 4.0 * stat.std_err + 1e-9;
            assert!(
                (stat.mean - truth).abs() <= slack,
                "round {}: mc {} vs exact {} (slack {slack})",
                stat.round,
                stat.mean,
                truth
            );
        }
        // The enumerated curve itself is non-increasing — the proposition
        // holds exactly at this scale.
        for pair in exact.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
    }

    #[test]
    fn informative_kernel_contracts_within_noise() {
        let report = simulate_contraction(
            &identifiable(0.8),
            &SimPolicy::FixedAction { action: 0 },
            &cfg(8, 3000, 3, 7),
        )
        .unwrap();
        assert!(report.non_increasing_within(2.0));
        assert!(report.terminal_mean() < report.rounds[0].mean);
    }

    #[test]
    fn greedy_policy_prefers_the_informative_action() {
        // Action 0 tells nothing; action 1 separates perfectly.
        let kernel = ObservationKernel {
            class_labels: labels("y", 2),
            action_labels: labels("a", 2),
            observation_labels: labels("o", 2),
            probs: vec![
                vec![vec![0.5, 0.5], vec![0.5, 0.5]],
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            ],
        };
        let choice = SimPolicy::GreedyInfoGain.choose(0, &[0.5, 0.5], &kernel);
        assert_eq!(choice, 1);
    }

    #[test]
    fn round_robin_cycles() {
        let kernel = ObservationKernel {
            class_labels: labels("y", 2),
            action_labels: labels("a", 3),
            observation_labels: labels("o", 2),
            probs: vec![vec![vec![0.5, 0.5]; 2]; 3],
        };
        let picks: Vec<usize> = (0..6)
            .map(|round| SimPolicy::RoundRobin.choose(round, &[0.5, 0.5], &kernel))
            .collect();
        assert_eq!(picks, vec![0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn identical_kernels_shift_exactly_zero() {
        let kernel = identifiable(0.8);
        let report = simulate_transfer(
            &kernel,
            &kernel.clone(),
            &SimPolicy::FixedAction { action: 0 },
            &SimPolicy::FixedAction { action: 0 },
            &cfg(5, 500, 3, 99),
        )
        .unwrap();
        assert_eq!(report.max_tv, 0.0);
        assert_eq!(report.value_shift(true), 0.0);
        assert_eq!(report.value_shift(false), 0.0);
    }

    #[test]
    fn tv_budget_violation_is_an_error() {
        let kernel = identifiable(0.9);
        let shifted = kernel.mix_with_uniform(0.5);
        let mut config = cfg(5, 500, 3, 1);
        config.tv_eps = 0.01; // far below the actual distance
        let err = simulate_transfer(
            &kernel,
            &shifted,
            &SimPolicy::FixedAction { action: 0 },
            &SimPolicy::FixedAction { action: 0 },
            &config,
        )
        .unwrap_err();
        assert!(matches!(err, TheoryError::TvBudgetExceeded { .. }));
    }

    #[test]
    fn mixing_scales_tv_distance_linearly() {
        let kernel = identifiable(0.9);
        // Row (0.9, 0.05, 0.05) vs uniform (1/3 each): TV = 0.9 − 1/3.
        let to_uniform = 0.9 - 1.0 / 3.0;
        for &delta in &[0.1, 0.25, 0.5] {
            let mixed = kernel.mix_with_uniform(delta);
            let measured = max_tv_distance(&kernel, &mixed).unwrap();
            assert!(
                (measured - delta * to_uniform).abs() < 1e-12,
                "delta {delta}: measured {measured}"
            );
        }
    }

    #[test]
    fn transfer_shift_respects_the_linear_bound() {
        let kernel = identifiable(0.9);
        let to_uniform = 0.9 - 1.0 / 3.0;
        let eps = 0.05;
        let shifted = kernel.mix_with_uniform(eps / to_uniform);
        let mut config = cfg(6, 2000, 3, 42);
        config.tv_eps = eps;
        let report = simulate_transfer(
            &kernel,
            &shifted,
            &SimPolicy::GreedyInfoGain,
            &SimPolicy::FixedAction { action: 0 },
            &config,
        )
        .unwrap();
        assert!(report.max_tv <= eps + 1e-12);
        for star in [true, false] {
            assert!(
                report.value_shift(star) <= report.shift_bound(star, 3.0),
                "shift {} exceeds bound {}",
                report.value_shift(star),
                report.shift_bound(star, 3.0)
            );
        }
    }

    #[test]
    fn spec_files_round_trip_through_json() {
        let spec = ContractionSpec {
            kernel: identifiable(0.8),
            policy: SimPolicy::GreedyInfoGain,
            config: cfg(5, 1000, 3, 3),
        };
        let json = serde_json::to_string_pretty(&spec).unwrap();
        let back: ContractionSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);

        let policy: SimPolicy = serde_json::from_str(r#"{"kind":"fixed-action","action":2}"#).unwrap();
        assert_eq!(policy, SimPolicy::FixedAction { action: 2 });
    }

    proptest! {
        #[test]
        fn posterior_stays_normalized(
            weights in proptest::collection::vec(0.05f64..1.0, 3),
            obs_weights in proptest::collection::vec(
                proptest::collection::vec(0.05f64..1.0, 3), 3
            ),
            observation in 0usize..3,
        ) {
            let total: f64 = weights.iter().sum();
            let prior: Vec<f64> = weights.iter().map(|w| w / total).collect();
            let rows: Vec<Vec<f64>> = obs_weights
                .iter()
                .map(|row| {
                    let s: f64 = row.iter().sum();
                    row.iter().map(|w| w / s).collect()
                })
                .collect();
            let kernel = kernel_1a(rows);
            let posterior = posterior_update(&prior, &kernel, 0, observation).unwrap();
            let mass: f64 = posterior.iter().sum();
            prop_assert!((mass - 1.0).abs() < 1e-9);
            prop_assert!(posterior.iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn risk_bounds_hold(weights in proptest::collection::vec(0.01f64..1.0, 2..6)) {
            let total: f64 = weights.iter().sum();
            let dist: Vec<f64> = weights.iter().map(|w| w / total).collect();
            let v = risk_potential(&dist);
            let m = dist.len() as f64;
            prop_assert!(v >= -1e-12);
            prop_assert!(v <= 1.0 - 1.0 / m + 1e-12);
        }
    }
}
