//! Self-contained fixtures: the scripted prompt bandit that anchors the
//! optimization checks, a sequence-playing agent for enumerating its
//! outcomes, and small observation kernels for the simulators.

use std::sync::Mutex;

use crate::agent::{Agent, AgentContext, AgentEmission, AgentError, ToyAction, ToyAgent, ToyPolicyParams};
use crate::env::{ScriptedEnv, ScriptedRule};
use crate::episode::LoopConfig;
use crate::history::{PromptTemplate, Question};
use crate::reward::RewardConfig;
use crate::theory::ObservationKernel;

/// The one-round scripted bandit: a single question, a scripted environment
/// that always helps, and a one-turn budget. Under the default reward
/// coefficients exactly one action sequence — interact, then answer
/// correctly — scores 1.0; every other sequence scores 0 or less, which
/// makes the optimization target unambiguous.
pub struct BanditFixture {
    pub question: Question,
    pub env: ScriptedEnv,
    pub template: PromptTemplate,
    pub loop_cfg: LoopConfig,
    pub reward_cfg: RewardConfig,
}

pub fn capital_bandit() -> BanditFixture {
    let question = Question::new(
        "bandit-1",
        "What is the capital of France?",
        vec!["Paris".into()],
        "bandit",
    )
    .expect("fixture question is valid");
    let env = ScriptedEnv::new(
        "bandit-env",
        vec![ScriptedRule::default_response(
            "Paris is the capital of France.",
        )],
    )
    .expect("fixture rules include a catch-all");
    BanditFixture {
        question,
        env,
        template: PromptTemplate::default(),
        loop_cfg: LoopConfig {
            max_turns: 1,
            ..LoopConfig::default()
        },
        reward_cfg: RewardConfig::default(),
    }
}

impl BanditFixture {
    /// A toy agent for this fixture's question with the given policy.
    pub fn agent(&self, params: ToyPolicyParams) -> ToyAgent {
        ToyAgent::for_question(&self.question, params)
    }
}

/// Every action sequence the one-round bandit can produce, with its total
/// reward under the default coefficients, worked out by hand:
///
/// * interact gives one completed turn (0.4); a correct final answer adds
///   0.25 + 0.25 + 0.1 and opens the gate, so the total is the answer F1;
/// * without an interaction the format reward tops out at 0.6, leaving the
///   gate closed and the total at `format − 1`;
/// * a prompt-less final emission scores no answer bits at all.
pub fn bandit_reward_table() -> Vec<(Vec<ToyAction>, f64)> {
    use ToyAction::*;
    vec![
        (vec![Interact, CorrectAnswer], 1.0),
        (vec![Interact, WrongAnswer], 0.0),
        (vec![Interact, Interact], -0.6),
        (vec![Interact, Malformed], -0.6),
        (vec![CorrectAnswer], -0.4),
        (vec![WrongAnswer], -0.4),
        (vec![Malformed], -1.0),
    ]
}

/// Plays a fixed toy-action sequence, repeating the last action once the
/// script runs out. Turns the reward table above into runnable episodes.
pub struct SequenceAgent {
    base: ToyAgent,
    actions: Vec<ToyAction>,
    cursor: Mutex<usize>,
}

impl SequenceAgent {
    pub fn new(base: ToyAgent, actions: Vec<ToyAction>) -> Self {
        assert!(!actions.is_empty(), "sequence must contain at least one action");
        SequenceAgent {
            base,
            actions,
            cursor: Mutex::new(0),
        }
    }
}

impl Agent for SequenceAgent {
    fn emit(&self, ctx: &AgentContext<'_>, _seed: u64) -> Result<AgentEmission, AgentError> {
        let mut cursor = self.cursor.lock().unwrap();
        let action = self.actions[(*cursor).min(self.actions.len() - 1)];
        *cursor += 1;
        Ok(AgentEmission {
            raw: self.base.render_action(action, ctx),
            action: Some(action as usize),
            log_prob: Some(self.base.params.log_prob(action as usize)),
        })
    }
}

fn index_labels(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Single-action kernel whose observation names the true class with
/// probability `hit`, splitting the remainder evenly over the other
/// classes. `hit` well above `1/classes` makes the class identifiable.
pub fn identifiable_kernel(classes: usize, hit: f64) -> ObservationKernel {
    assert!(classes >= 2);
    assert!((0.0..=1.0).contains(&hit));
    let miss = (1.0 - hit) / (classes - 1) as f64;
    let probs = (0..classes)
        .map(|truth| {
            (0..classes)
                .map(|obs| if obs == truth { hit } else { miss })
                .collect()
        })
        .collect();
    ObservationKernel {
        class_labels: index_labels("class-", classes),
        action_labels: vec!["probe".into()],
        observation_labels: index_labels("obs-", classes),
        probs: vec![probs],
    }
}

/// Single-action kernel whose observations carry no information: every
/// class emits the uniform distribution.
pub fn uninformative_kernel(classes: usize, observations: usize) -> ObservationKernel {
    let row = vec![1.0 / observations as f64; observations];
    ObservationKernel {
        class_labels: index_labels("class-", classes),
        action_labels: vec!["noise".into()],
        observation_labels: index_labels("obs-", observations),
        probs: vec![vec![row; classes]],
    }
}

/// Two-action kernel: action 0 is pure noise, action 1 identifies the class
/// with probability `hit`. Separates policies that probe from policies that
/// do not, which is what the transfer margin checks need.
pub fn probe_or_noise_kernel(classes: usize, hit: f64) -> ObservationKernel {
    let noise = uninformative_kernel(classes, classes);
    let probe = identifiable_kernel(classes, hit);
    ObservationKernel {
        class_labels: probe.class_labels.clone(),
        action_labels: vec!["noise".into(), "probe".into()],
        observation_labels: probe.observation_labels.clone(),
        probs: vec![noise.probs[0].clone(), probe.probs[0].clone()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::run_episode;
    use crate::reward::total_reward;

    #[test]
    fn bandit_reward_table_matches_executed_episodes() {
        let fixture = capital_bandit();
        for (actions, expected) in bandit_reward_table() {
            let agent = SequenceAgent::new(
                fixture.agent(ToyPolicyParams::uniform()),
                actions.clone(),
            );
            let trajectory = run_episode(
                &agent,
                &fixture.env,
                fixture.question.clone(),
                fixture.template.clone(),
                &fixture.loop_cfg,
                0,
            )
            .unwrap();
            let breakdown = total_reward(
                &trajectory.format_signals(),
                trajectory.answer_text(),
                &fixture.question.gold_answers,
                &fixture.reward_cfg,
            )
            .unwrap();
            assert!(
                (breakdown.total - expected).abs() < 1e-12,
                "sequence {actions:?}: expected {expected}, scored {}",
                breakdown.total
            );
        }
    }

    #[test]
    fn winning_sequence_is_unique() {
        let table = bandit_reward_table();
        let winners: Vec<_> = table.iter().filter(|(_, r)| *r > 0.99).collect();
        assert_eq!(winners.len(), 1);
        assert_eq!(
            winners[0].0,
            vec![ToyAction::Interact, ToyAction::CorrectAnswer]
        );
        // And everything else is at or below zero.
        for (actions, reward) in &table {
            if actions != &winners[0].0 {
                assert!(*reward <= 0.0);
            }
        }
    }

    #[test]
    fn kernels_validate() {
        identifiable_kernel(3, 0.9).validate().unwrap();
        uninformative_kernel(3, 4).validate().unwrap();
        probe_or_noise_kernel(3, 0.85).validate().unwrap();
    }

    #[test]
    fn sequence_agent_replays_and_repeats() {
        let fixture = capital_bandit();
        let agent = SequenceAgent::new(
            fixture.agent(ToyPolicyParams::uniform()),
            vec![ToyAction::Interact],
        );
        let history = crate::history::History::new(
            fixture.question.clone(),
            fixture.template.clone(),
        );
        let ctx = AgentContext {
            history: &history,
            force_answer: false,
        };
        let first = agent.emit(&ctx, 0).unwrap();
        let second = agent.emit(&ctx, 0).unwrap();
        assert_eq!(first.raw, second.raw, "last action repeats once exhausted");
        assert_eq!(first.action, Some(ToyAction::Interact as usize));
    }
}
