//! Double-constrained episode reward and the QA evaluation metrics.
//!
//! The reward has two parts. The *format* reward is a capped weighted sum of
//! binary protocol signals: one point per completed intermediate turn plus
//! three bits describing the final emission. The *answer* reward is the best
//! token-level F1 of the predicted answer against the gold set. Composition
//! is gated: answer quality earns credit only when the format reward sits
//! exactly at its cap, otherwise the episode scores `format - cap ≤ 0`. An
//! agent therefore cannot buy partial credit for a well-answered but
//! ill-formatted episode, nor for a beautifully formatted non-answer.
//!
//! Metrics: exact match and token F1 share one normalization (lowercase,
//! strip ASCII punctuation, drop the articles a/an/the, collapse whitespace);
//! semantic similarity is the cosine of a pluggable text encoder.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parser::FormatSignals;
use crate::wire::{WireClient, WireError};

/// Equality tolerance for the `format == cap` gate test. The coefficients
/// are exact decimals but their f64 sums may still round in the last bits.
pub const GATE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RewardError {
    #[error("gold answer set is empty")]
    EmptyGoldSet,
    #[error("encoder unavailable: {0}")]
    EncoderUnavailable(String),
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
}

/// Weights of the format signals and the cap that gates answer credit.
///
/// The default weights make the cap reachable only with at least one
/// completed intermediate turn: the three final-emission bits sum to 0.6,
/// so an agent that answers without ever interacting stays below 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Weight per completed intermediate turn.
    pub turn_weight: f64,
    /// Weight of "a well-formed answer segment exists".
    pub answer_parse_weight: f64,
    /// Weight of "the answer text is non-empty".
    pub answer_content_weight: f64,
    /// Weight of "the final emission has both think and answer".
    pub final_format_weight: f64,
    /// Upper limit of the format reward; also the gate threshold.
    pub cap: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            turn_weight: 0.4,
            answer_parse_weight: 0.25,
            answer_content_weight: 0.25,
            final_format_weight: 0.1,
            cap: 1.0,
        }
    }
}

impl RewardConfig {
    /// Checks weight non-negativity, finiteness, and that the three
    /// final-emission weights cannot reach the cap on their own.
    pub fn validate(&self) -> Result<(), RewardError> {
        let fields = [
            ("turn_weight", self.turn_weight),
            ("answer_parse_weight", self.answer_parse_weight),
            ("answer_content_weight", self.answer_content_weight),
            ("final_format_weight", self.final_format_weight),
            ("cap", self.cap),
        ];
        for (name, value) in fields {
            if !value.is_finite() || value < 0.0 {
                return Err(RewardError::InvalidConfig(format!(
                    "{name} must be finite and non-negative, got {value}"
                )));
            }
        }
        if self.cap <= 0.0 {
            return Err(RewardError::InvalidConfig("cap must be positive".into()));
        }
        let final_bits = self.answer_parse_weight + self.answer_content_weight + self.final_format_weight;
        if final_bits > self.cap {
            return Err(RewardError::InvalidConfig(format!(
                "final-emission weights sum to {final_bits}, exceeding the cap {}",
                self.cap
            )));
        }
        Ok(())
    }
}

/// The scored components of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// Capped format reward in `[0, cap]`.
    pub format: f64,
    /// Best token F1 against the golds, in `[0, 1]`.
    pub answer: f64,
    /// Gated total in `[-cap, 1]`.
    pub total: f64,
    /// Whether the format reward reached the cap (answer credit applied).
    pub gated: bool,
}

/// Lowercases, strips ASCII punctuation, removes the articles a/an/the as
/// whole words, and collapses whitespace.
pub fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|word| !matches!(*word, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Token-level F1 between normalized texts: `2·overlap / (|pred| + |gold|)`
/// over whitespace-token multisets. Two empty token lists count as a perfect
/// match; exactly one empty list scores zero.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let pred_norm = normalize(pred);
    let gold_norm = normalize(gold);
    let pred_tokens: Vec<&str> = pred_norm.split_whitespace().collect();
    let gold_tokens: Vec<&str> = gold_norm.split_whitespace().collect();
    match (pred_tokens.is_empty(), gold_tokens.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        (false, false) => {}
    }
    let mut remaining: HashMap<&str, usize> = HashMap::new();
    for token in &gold_tokens {
        *remaining.entry(token).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for token in &pred_tokens {
        if let Some(count) = remaining.get_mut(token) {
            if *count > 0 {
                *count -= 1;
                overlap += 1;
            }
        }
    }
    2.0 * overlap as f64 / (pred_tokens.len() + gold_tokens.len()) as f64
}

/// Best token F1 of the prediction over the gold set.
pub fn answer_reward(pred: &str, golds: &[String]) -> Result<f64, RewardError> {
    if golds.is_empty() {
        return Err(RewardError::EmptyGoldSet);
    }
    Ok(golds
        .iter()
        .map(|gold| token_f1(pred, gold))
        .fold(0.0, f64::max))
}

fn bit(flag: bool) -> f64 {
    if flag {
        1.0
    } else {
        0.0
    }
}

/// Capped weighted sum of the format signals.
pub fn format_reward(signals: &FormatSignals, cfg: &RewardConfig) -> f64 {
    let sum = cfg.turn_weight * signals.completed_turns() as f64
        + cfg.answer_parse_weight * bit(signals.answer_parseable)
        + cfg.answer_content_weight * bit(signals.answer_non_empty)
        + cfg.final_format_weight * bit(signals.final_complete);
    sum.min(cfg.cap)
}

/// Scores an episode: format reward, answer reward, and their gated total.
///
/// When the format reward reaches the cap (within [`GATE_TOLERANCE`]) the
/// total *is* the answer reward; otherwise it is `format - cap`, a
/// non-positive penalty untouched by answer quality.
pub fn total_reward(
    signals: &FormatSignals,
    pred: &str,
    golds: &[String],
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    let format = format_reward(signals, cfg);
    let answer = answer_reward(pred, golds)?;
    let gated = (format - cfg.cap).abs() <= GATE_TOLERANCE;
    let total = if gated { answer } else { format - cfg.cap };
    Ok(RewardBreakdown {
        format,
        answer,
        total,
        gated,
    })
}

/// 1 iff the normalized prediction equals some normalized gold exactly.
pub fn exact_match(pred: &str, golds: &[String]) -> Result<bool, RewardError> {
    if golds.is_empty() {
        return Err(RewardError::EmptyGoldSet);
    }
    let pred_norm = normalize(pred);
    Ok(golds.iter().any(|gold| normalize(gold) == pred_norm))
}

/// Fixed-dimension text embedding used by the semantic-similarity metric.
pub trait Encoder: Send + Sync {
    fn encode(&self, text: &str) -> Result<Vec<f64>, RewardError>;
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm_a: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_a == 0.0 || norm_b == 0.0 {
        return 0.0;
    }
    dot / (norm_a * norm_b)
}

/// Cosine similarity of the encoded prediction and gold; 0.0 when either
/// embedding has zero norm.
pub fn semantic_similarity(
    pred: &str,
    gold: &str,
    encoder: &dyn Encoder,
) -> Result<f64, RewardError> {
    let a = encoder.encode(pred)?;
    let b = encoder.encode(gold)?;
    Ok(cosine(&a, &b))
}

/// Take-best semantic similarity over the gold set, mirroring the max
/// convention of [`answer_reward`].
pub fn best_semantic_similarity(
    pred: &str,
    golds: &[String],
    encoder: &dyn Encoder,
) -> Result<f64, RewardError> {
    if golds.is_empty() {
        return Err(RewardError::EmptyGoldSet);
    }
    let mut best = f64::MIN;
    for gold in golds {
        best = best.max(semantic_similarity(pred, gold, encoder)?);
    }
    Ok(best)
}

/// Deterministic offline encoder: a hashed bag-of-words over normalized
/// tokens. Not a semantic model — it exists so similarity scoring works
/// without a network and reproduces bit-identically everywhere.
#[derive(Debug, Clone)]
pub struct HashedBagEncoder {
    pub dims: usize,
}

impl Default for HashedBagEncoder {
    fn default() -> Self {
        HashedBagEncoder { dims: 256 }
    }
}

/// FNV-1a, fixed here rather than `DefaultHasher` because the std hasher is
/// not guaranteed stable across releases and these vectors land in logs.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &byte in bytes {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl Encoder for HashedBagEncoder {
    fn encode(&self, text: &str) -> Result<Vec<f64>, RewardError> {
        let mut vector = vec![0.0; self.dims];
        for token in normalize(text).split_whitespace() {
            let slot = (fnv1a(token.as_bytes()) % self.dims as u64) as usize;
            vector[slot] += 1.0;
        }
        Ok(vector)
    }
}

/// Remote embeddings backend speaking `POST {endpoint}/v1/embeddings`.
pub struct RemoteEncoder {
    pub endpoint: String,
    pub model: String,
    client: WireClient,
}

impl RemoteEncoder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteEncoder {
            endpoint: endpoint.into(),
            model: model.into(),
            client: WireClient::from_env(),
        }
    }

    pub fn with_client(mut self, client: WireClient) -> Self {
        self.client = client;
        self
    }
}

impl Encoder for RemoteEncoder {
    fn encode(&self, text: &str) -> Result<Vec<f64>, RewardError> {
        self.client
            .embed(&self.endpoint, &self.model, text)
            .map_err(|err: WireError| RewardError::EncoderUnavailable(err.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{extract_signals, parse, ParsedOutput};
    use proptest::prelude::*;

    fn signals(turns: &[bool], parseable: bool, non_empty: bool, complete: bool) -> FormatSignals {
        FormatSignals {
            turn_complete: turns.to_vec(),
            answer_parseable: parseable,
            answer_non_empty: non_empty && parseable,
            final_complete: complete,
        }
    }

    #[test]
    fn normalize_strips_case_punctuation_articles() {
        assert_eq!(normalize("The Quick, Fox!"), "quick fox");
        assert_eq!(normalize(""), "");
        assert_eq!(normalize("a an the"), "");
        assert_eq!(normalize("  spaced\tout  "), "spaced out");
    }

    #[test]
    fn f1_article_stripping_makes_equal_multisets() {
        assert!((token_f1("quick fox", "The quick fox") - 1.0).abs() < 1e-12);
    }

    #[test]
    fn f1_identity_and_disjoint() {
        assert_eq!(token_f1("same text", "same text"), 1.0);
        assert_eq!(token_f1("alpha beta", "gamma delta"), 0.0);
    }

    #[test]
    fn f1_empty_conventions() {
        assert_eq!(token_f1("", ""), 1.0);
        assert_eq!(token_f1("", "x"), 0.0);
        assert_eq!(token_f1("x", ""), 0.0);
    }

    #[test]
    fn f1_counts_multiset_overlap() {
        // pred {blue, blue} vs gold {blue}: overlap 1, sizes 2 + 1.
        assert!((token_f1("blue blue", "blue") - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn answer_reward_takes_best_gold() {
        let golds = vec!["paris".to_string(), "city of paris".to_string()];
        assert_eq!(answer_reward("paris", &golds).unwrap(), 1.0);
        assert_eq!(answer_reward("", &golds).unwrap(), 0.0);
        assert_eq!(answer_reward("x", &[]), Err(RewardError::EmptyGoldSet));
    }

    #[test]
    fn format_reward_caps_at_one_with_defaults() {
        let cfg = RewardConfig::default();
        // Four completed turns: 0.4·4 + 0.25 + 0.25 + 0.1 = 2.2, capped.
        let full = signals(&[true; 4], true, true, true);
        assert_eq!(format_reward(&full, &cfg), 1.0);
        let none = signals(&[], false, false, false);
        assert_eq!(format_reward(&none, &cfg), 0.0);
    }

    #[test]
    fn one_turn_reaches_the_cap_exactly() {
        let cfg = RewardConfig::default();
        let s = signals(&[true], true, true, true);
        let fmt = format_reward(&s, &cfg);
        assert!((fmt - cfg.cap).abs() <= GATE_TOLERANCE);
    }

    #[test]
    fn total_reward_gate_open_and_closed() {
        let cfg = RewardConfig::default();
        let golds = vec!["right answer".to_string()];
        let full = signals(&[true], true, true, true);
        let perfect = total_reward(&full, "right answer", &golds, &cfg).unwrap();
        assert!(perfect.gated);
        assert_eq!(perfect.total, 1.0);
        let wrong = total_reward(&full, "unrelated", &golds, &cfg).unwrap();
        assert!(wrong.gated);
        assert_eq!(wrong.total, 0.0);
        let empty = signals(&[], false, false, false);
        let closed = total_reward(&empty, "right answer", &golds, &cfg).unwrap();
        assert!(!closed.gated);
        assert_eq!(closed.total, -1.0);
    }

    #[test]
    fn dropping_any_final_bit_closes_the_gate_with_one_turn() {
        // From the exact-cap configuration (one turn + all final bits),
        // removing any single final signal must forfeit all answer credit.
        let cfg = RewardConfig::default();
        let golds = vec!["perfect".to_string()];
        let degraded = [
            signals(&[true], false, false, true), // lost parseability (and content)
            signals(&[true], true, false, true),  // empty answer text
            signals(&[true], true, true, false),  // final missing its think
        ];
        for s in degraded {
            let b = total_reward(&s, "perfect", &golds, &cfg).unwrap();
            assert!(!b.gated);
            assert!(b.total <= 0.0, "total {} should be non-positive", b.total);
        }
    }

    #[test]
    fn exact_match_normalizes_both_sides() {
        assert!(exact_match("The Paris", &["paris".to_string()]).unwrap());
        assert!(!exact_match("pari", &["paris".to_string()]).unwrap());
        assert!(exact_match("", &["".to_string()]).unwrap());
        assert_eq!(exact_match("x", &[]), Err(RewardError::EmptyGoldSet));
    }

    #[test]
    fn config_validation_rejects_unreachable_gate() {
        let cfg = RewardConfig {
            cap: 0.5,
            ..RewardConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(RewardConfig::default().validate().is_ok());
    }

    /// Encoder with a fixed lookup table, for hand-checkable cosines.
    struct FixedTableEncoder;

    impl Encoder for FixedTableEncoder {
        fn encode(&self, text: &str) -> Result<Vec<f64>, RewardError> {
            Ok(match text {
                "east" => vec![1.0, 0.0],
                "diagonal" => vec![1.0, 1.0],
                "north" => vec![0.0, 1.0],
                _ => vec![0.0, 0.0],
            })
        }
    }

    #[test]
    fn cosine_of_known_vectors() {
        let enc = FixedTableEncoder;
        let diag = semantic_similarity("east", "diagonal", &enc).unwrap();
        assert!((diag - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
        assert_eq!(semantic_similarity("east", "north", &enc).unwrap(), 0.0);
        // Zero-norm embedding short-circuits to 0.
        assert_eq!(semantic_similarity("east", "unknown", &enc).unwrap(), 0.0);
    }

    #[test]
    fn hashed_bag_encoder_identity_similarity() {
        let enc = HashedBagEncoder::default();
        let same = semantic_similarity("the same text", "same text!", &enc).unwrap();
        assert!((same - 1.0).abs() < 1e-9);
        let different = semantic_similarity("alpha beta", "gamma delta", &enc).unwrap();
        assert!(different < 1.0);
    }

    #[test]
    fn signals_from_parsed_episode_score_end_to_end() {
        let turn = parse("<think>explain</think><interaction_prompt>ask</interaction_prompt>");
        let fin = parse("<think>conclude</think><answer>Paris</answer>");
        let s = extract_signals(&[turn], &fin);
        let b = total_reward(&s, "Paris", &["Paris".to_string()], &RewardConfig::default()).unwrap();
        assert!(b.gated);
        assert_eq!(b.total, 1.0);
        let malformed = extract_signals(&[ParsedOutput::default()], &fin);
        let b2 =
            total_reward(&malformed, "Paris", &["Paris".to_string()], &RewardConfig::default())
                .unwrap();
        assert!(!b2.gated);
        assert!(b2.total < 0.0);
    }

    fn arbitrary_signals() -> impl Strategy<Value = FormatSignals> {
        (
            proptest::collection::vec(any::<bool>(), 0..6),
            any::<bool>(),
            any::<bool>(),
            any::<bool>(),
        )
            .prop_map(|(turns, p, n, c)| FormatSignals {
                turn_complete: turns,
                answer_parseable: p,
                answer_non_empty: n && p,
                final_complete: c,
            })
    }

    proptest! {
        #[test]
        fn format_reward_stays_in_bounds(s in arbitrary_signals()) {
            let cfg = RewardConfig::default();
            let fmt = format_reward(&s, &cfg);
            prop_assert!((0.0..=cfg.cap).contains(&fmt));
        }

        #[test]
        fn f1_symmetric_and_bounded(a in ".{0,30}", b in ".{0,30}") {
            let forward = token_f1(&a, &b);
            let backward = token_f1(&b, &a);
            prop_assert!((forward - backward).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&forward));
        }

        #[test]
        fn exact_match_implies_perfect_f1(a in "[a-zA-Z ]{1,20}") {
            let golds = vec![a.clone()];
            if exact_match(&a, &golds).unwrap() {
                prop_assert!((token_f1(&a, &a) - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn total_reward_range_and_gate(s in arbitrary_signals(), pred in ".{0,20}") {
            let cfg = RewardConfig::default();
            let golds = vec!["gold answer".to_string()];
            let b = total_reward(&s, &pred, &golds, &cfg).unwrap();
            prop_assert!((-cfg.cap..=1.0).contains(&b.total));
            if b.gated {
                prop_assert_eq!(b.total, b.answer);
            } else {
                prop_assert!(b.total <= 0.0);
                prop_assert_eq!(b.total, b.format - cfg.cap);
            }
        }
    }
}
