//! Rollout rewards: modified PAUC plus three penalty terms, their weighted
//! sum, and group-normalized advantages.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, GoldSpan, MetricsError, PaucMode, ReplyEvent};
use crate::scoring::{CorrectnessScorer, JudgeError, ReplicationJudge};

/// Max correctness score used by the PAUC reward.
pub const REWARD_MAX_SCORE: f64 = 4.0;

pub const DEFAULT_LCP_THRESHOLD: usize = 20;

/// Added to the group standard deviation before dividing.
pub const ADVANTAGE_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("reward weight {name} must be finite and non-negative, got {value}")]
    Weight { name: &'static str, value: f64 },
    #[error("reward component {name} must lie in [0, 1], got {value}")]
    Component { name: &'static str, value: f64 },
    #[error("prefix threshold must be at least one character")]
    PrefixThreshold,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub w_pauc: f64,
    pub w_rep: f64,
    pub w_in_span: f64,
    pub w_pfx: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_pauc: 3.0,
            w_rep: 2.0,
            w_in_span: 0.5,
            w_pfx: 2.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), RewardError> {
        for (name, value) in [
            ("w_pauc", self.w_pauc),
            ("w_rep", self.w_rep),
            ("w_in_span", self.w_in_span),
            ("w_pfx", self.w_pfx),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(RewardError::Weight { name, value });
            }
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.w_pauc + self.w_rep + self.w_in_span + self.w_pfx
    }
}

/// The four reward terms before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardComponents {
    pub r_pauc: f64,
    pub r_rep: f64,
    pub r_in_span: f64,
    pub r_pfx: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_pauc: f64,
    pub r_rep: f64,
    pub r_in_span: f64,
    pub r_pfx: f64,
    pub weights: RewardWeights,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn components(&self) -> RewardComponents {
        RewardComponents {
            r_pauc: self.r_pauc,
            r_rep: self.r_rep,
            r_in_span: self.r_in_span,
            r_pfx: self.r_pfx,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixPolicy {
    pub threshold_chars: usize,
}

impl Default for PrefixPolicy {
    fn default() -> Self {
        PrefixPolicy {
            threshold_chars: DEFAULT_LCP_THRESHOLD,
        }
    }
}

impl PrefixPolicy {
    pub fn new(threshold_chars: usize) -> Result<Self, RewardError> {
        if threshold_chars == 0 {
            return Err(RewardError::PrefixThreshold);
        }
        Ok(PrefixPolicy { threshold_chars })
    }
}

/// PAUC reward: per-turn scoring against a max score of 4.
pub fn r_pauc(
    spans: &[GoldSpan],
    replies: &[ReplyEvent],
    scorer: &dyn CorrectnessScorer,
) -> Result<f64, RewardError> {
    r_pauc_with_max(spans, replies, scorer, REWARD_MAX_SCORE)
}

pub fn r_pauc_with_max(
    spans: &[GoldSpan],
    replies: &[ReplyEvent],
    scorer: &dyn CorrectnessScorer,
    max_score: f64,
) -> Result<f64, RewardError> {
    Ok(metrics::pauc_dataset(
        spans,
        replies,
        scorer,
        max_score,
        PaucMode::PerTurn,
    )?)
}

fn one_minus_ratio(violations: usize, total: usize) -> f64 {
    if total == 0 {
        1.0
    } else {
        1.0 - violations as f64 / total as f64
    }
}

/// One minus the fraction of replies already covered by earlier replies.
pub fn r_rep(replies: &[ReplyEvent], judge: &dyn ReplicationJudge) -> Result<f64, RewardError> {
    let covered = metrics::covered_count(replies, judge)?;
    Ok(one_minus_ratio(covered, replies.len()))
}

/// One minus the fraction of replies outside every gold span.
pub fn r_in_span(replies: &[ReplyEvent], spans: &[GoldSpan]) -> f64 {
    let outside = replies
        .iter()
        .filter(|r| !spans.iter().any(|s| s.contains(r.tau)))
        .count();
    one_minus_ratio(outside, replies.len())
}

/// Length in characters of the longest common prefix.
pub fn lcp_chars(a: &str, b: &str) -> usize {
    a.chars().zip(b.chars()).take_while(|(x, y)| x == y).count()
}

/// One minus the fraction of replies that open with a long prefix of some
/// earlier reply.
pub fn r_pfx(replies: &[ReplyEvent], policy: PrefixPolicy) -> f64 {
    let verbose = replies
        .iter()
        .enumerate()
        .filter(|(p, reply)| {
            replies[..*p]
                .iter()
                .map(|prev| lcp_chars(&reply.text, &prev.text))
                .max()
                .is_some_and(|lcp| lcp > policy.threshold_chars)
        })
        .count();
    one_minus_ratio(verbose, replies.len())
}

/// Weighted sum of the four components.
pub fn combined_reward(
    components: RewardComponents,
    weights: RewardWeights,
) -> Result<RewardBreakdown, RewardError> {
    weights.validate()?;
    let RewardComponents {
        r_pauc,
        r_rep,
        r_in_span,
        r_pfx,
    } = components;
    for (name, value) in [
        ("r_pauc", r_pauc),
        ("r_rep", r_rep),
        ("r_in_span", r_in_span),
        ("r_pfx", r_pfx),
    ] {
        if !(0.0..=1.0).contains(&value) {
            return Err(RewardError::Component { name, value });
        }
    }
    let total = weights.w_pauc * r_pauc
        + weights.w_rep * r_rep
        + weights.w_in_span * r_in_span
        + weights.w_pfx * r_pfx;
    Ok(RewardBreakdown {
        r_pauc,
        r_rep,
        r_in_span,
        r_pfx,
        weights,
        total,
    })
}

/// Settings for a full reward evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    pub weights: RewardWeights,
    pub prefix: PrefixPolicy,
    pub max_score: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            weights: RewardWeights::default(),
            prefix: PrefixPolicy::default(),
            max_score: REWARD_MAX_SCORE,
        }
    }
}

/// Computes all four components for a reply stream and combines them.
pub fn evaluate_rewards(
    spans: &[GoldSpan],
    replies: &[ReplyEvent],
    scorer: &dyn CorrectnessScorer,
    judge: &dyn ReplicationJudge,
    config: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    let components = RewardComponents {
        r_pauc: r_pauc_with_max(spans, replies, scorer, config.max_score)?,
        r_rep: r_rep(replies, judge)?,
        r_in_span: r_in_span(replies, spans),
        r_pfx: r_pfx(replies, config.prefix),
    };
    combined_reward(components, config.weights)
}

/// `(r - mean) / (population_std + eps)` within one rollout group.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    let Some(&first) = rewards.first() else {
        return Vec::new();
    };
    // The mean of equal values can differ from them by rounding.
    if rewards.iter().all(|&r| r == first) {
        return vec![0.0; rewards.len()];
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    rewards
        .iter()
        .map(|r| (r - mean) / (std + ADVANTAGE_EPSILON))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{ContainmentJudge, ExactMatchScorer};

    fn replies(texts: &[(&str, f64)]) -> Vec<ReplyEvent> {
        texts
            .iter()
            .map(|(t, tau)| ReplyEvent::new(*t, *tau))
            .collect()
    }

    #[test]
    fn default_weights() {
        let w = RewardWeights::default();
        assert_eq!(
            (w.w_pauc, w.w_rep, w.w_in_span, w.w_pfx),
            (3.0, 2.0, 0.5, 2.0)
        );
    }

    #[test]
    fn combined_examples() {
        let c = RewardComponents {
            r_pauc: 0.5,
            r_rep: 1.0,
            r_in_span: 1.0,
            r_pfx: 1.0,
        };
        assert_eq!(
            combined_reward(c, RewardWeights::default()).unwrap().total,
            6.0
        );
        let zero = RewardComponents {
            r_pauc: 0.0,
            r_rep: 0.0,
            r_in_span: 0.0,
            r_pfx: 0.0,
        };
        assert_eq!(
            combined_reward(zero, RewardWeights::default())
                .unwrap()
                .total,
            0.0
        );
        let proj = RewardWeights {
            w_pauc: 1.0,
            w_rep: 0.0,
            w_in_span: 0.0,
            w_pfx: 0.0,
        };
        let c2 = RewardComponents { r_pauc: 0.37, ..c };
        assert_eq!(combined_reward(c2, proj).unwrap().total, 0.37);
    }

    #[test]
    fn negative_weight_rejected() {
        let w = RewardWeights {
            w_rep: -1.0,
            ..RewardWeights::default()
        };
        let c = RewardComponents {
            r_pauc: 0.5,
            r_rep: 1.0,
            r_in_span: 1.0,
            r_pfx: 1.0,
        };
        assert!(matches!(
            combined_reward(c, w),
            Err(RewardError::Weight { name: "w_rep", .. })
        ));
    }

    #[test]
    fn r_pauc_examples() {
        let spans = vec![GoldSpan::new("the gold", 0.0, 10.0)];
        assert_eq!(r_pauc(&spans, &[], &ExactMatchScorer).unwrap(), 0.125);
        let v = r_pauc(&spans, &replies(&[("the gold", 2.0)]), &ExactMatchScorer).unwrap();
        assert!((v - 0.825).abs() < 1e-12);
    }

    #[test]
    fn r_rep_examples() {
        let judge = ContainmentJudge::default();
        let r = replies(&[("a b", 1.0), ("c d", 2.0), ("a b", 3.0), ("e f", 4.0)]);
        assert_eq!(r_rep(&r, &judge).unwrap(), 0.75);
        assert_eq!(r_rep(&[], &judge).unwrap(), 1.0);
        let same = replies(&[("x", 1.0), ("x", 2.0), ("x", 3.0), ("x", 4.0)]);
        assert_eq!(r_rep(&same, &judge).unwrap(), 0.25);
    }

    #[test]
    fn r_in_span_examples() {
        let spans = vec![
            GoldSpan::new("g", 0.0, 10.0),
            GoldSpan::new("h", 20.0, 30.0),
        ];
        let inside = replies(&[("a", 1.0), ("b", 25.0)]);
        assert_eq!(r_in_span(&inside, &spans), 1.0);
        let mixed = replies(&[
            ("a", 1.0),
            ("b", 15.0),
            ("c", 22.0),
            ("d", 35.0),
            ("e", 5.0),
        ]);
        assert!((r_in_span(&mixed, &spans) - 0.6).abs() < 1e-12);
        assert_eq!(r_in_span(&replies(&[("a", 10.0)]), &spans), 0.0);
        assert_eq!(r_in_span(&[], &spans), 1.0);
    }

    #[test]
    fn r_pfx_examples() {
        let policy = PrefixPolicy::default();
        assert_eq!(r_pfx(&replies(&[("only one reply", 1.0)]), policy), 1.0);
        let first = "The chef adds tamarind paste to a pan.";
        let second = format!("{}and then stirs", &first[..30]);
        assert_eq!(
            r_pfx(&replies(&[(first, 1.0), (&second, 2.0)]), policy),
            0.5
        );
        let r = replies(&[
            ("Hello there, a cat sits", 1.0),
            ("Hello world, a dog runs", 2.0),
        ]);
        assert_eq!(lcp_chars(&r[0].text, &r[1].text), 6);
        assert_eq!(r_pfx(&r, policy), 1.0);
        assert_eq!(r_pfx(&[], policy), 1.0);
    }

    #[test]
    fn lcp_counts_chars_not_bytes() {
        assert_eq!(lcp_chars("héllo", "hélp"), 3);
    }

    #[test]
    fn advantages() {
        assert_eq!(group_advantages(&[5.0; 4]), vec![0.0; 4]);
        assert_eq!(group_advantages(&[7.0]), vec![0.0]);
        let adv = group_advantages(&[1.0, 2.0, 3.0, 4.0]);
        let expected = [-1.3416, -0.4472, 0.4472, 1.3416];
        for (a, e) in adv.iter().zip(expected) {
            assert!((a - e).abs() < 1e-4, "{a} vs {e}");
        }
    }
}
