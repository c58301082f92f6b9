//! PAUC (proactive area under curve) and auxiliary streaming-QA metrics.
//!
//! Within a gold span the reply score is a step curve over time: it starts at
//! [`INITIAL_SCORE`] at `t_start` and jumps to `s_p` at each reply time
//! `tau_p`. PAUC is the area under that curve divided by the area of the
//! constant curve at the maximum score.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Role, Transcript};
use crate::scoring::{CorrectnessScorer, JudgeError, ReplicationJudge};

/// Curve height before the first reply in a span.
pub const INITIAL_SCORE: f64 = 0.5;

/// Separator used when concatenating replies in cumulative mode.
pub const CUMULATIVE_SEPARATOR: &str = " ";

/// A ground-truth answer and the open interval in which it is expected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldSpan {
    #[serde(rename = "gold")]
    pub gold_text: String,
    pub t_start: f64,
    pub t_end: f64,
}

impl GoldSpan {
    pub fn new(gold_text: impl Into<String>, t_start: f64, t_end: f64) -> Self {
        GoldSpan {
            gold_text: gold_text.into(),
            t_start,
            t_end,
        }
    }

    /// Strict containment: replies on either boundary are outside.
    pub fn contains(&self, tau: f64) -> bool {
        self.t_start < tau && tau < self.t_end
    }

    pub fn width(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.t_start.is_finite() && self.t_end.is_finite() && self.t_start < self.t_end) {
            return Err(MetricsError::InvalidSpan(format!(
                "need t_start < t_end, got ({}, {})",
                self.t_start, self.t_end
            )));
        }
        if self.gold_text.trim().is_empty() {
            return Err(MetricsError::InvalidSpan("empty gold text".into()));
        }
        Ok(())
    }
}

/// A non-silent model reply and the time it was emitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplyEvent {
    pub text: String,
    pub tau: f64,
}

impl ReplyEvent {
    pub fn new(text: impl Into<String>, tau: f64) -> Self {
        ReplyEvent {
            text: text.into(),
            tau,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredReply {
    pub tau: f64,
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaucMode {
    /// Score each reply alone against the gold text.
    #[default]
    PerTurn,
    /// Score the concatenation of all in-span replies so far.
    Cumulative,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("invalid gold span: {0}")]
    InvalidSpan(String),
    #[error("gold spans {0} and {1} overlap or are out of order")]
    OverlappingSpans(usize, usize),
    #[error("no gold spans to evaluate")]
    NoSpans,
    #[error("reply time {tau} is outside the open span ({t_start}, {t_end})")]
    ReplyOutsideSpan { tau: f64, t_start: f64, t_end: f64 },
    #[error("reply times must strictly increase ({prev} then {next})")]
    NotIncreasing { prev: f64, next: f64 },
    #[error("max score must exceed the initial score 0.5, got {0}")]
    MaxScore(f64),
    #[error("score {s} outside [0, {max}]")]
    ScoreOutOfRange { s: f64, max: f64 },
    #[error(transparent)]
    Judge(#[from] JudgeError),
}

fn check_max_score(max_score: f64) -> Result<(), MetricsError> {
    if max_score.is_finite() && max_score > INITIAL_SCORE {
        Ok(())
    } else {
        Err(MetricsError::MaxScore(max_score))
    }
}

fn check_times(span: &GoldSpan, taus: impl Iterator<Item = f64>) -> Result<(), MetricsError> {
    let mut prev: Option<f64> = None;
    for tau in taus {
        if !span.contains(tau) {
            return Err(MetricsError::ReplyOutsideSpan {
                tau,
                t_start: span.t_start,
                t_end: span.t_end,
            });
        }
        if let Some(prev) = prev {
            if tau <= prev {
                return Err(MetricsError::NotIncreasing { prev, next: tau });
            }
        }
        prev = Some(tau);
    }
    Ok(())
}

/// Scores the replies that fall inside one span.
pub fn score_replies_in_span(
    span: &GoldSpan,
    replies: &[ReplyEvent],
    scorer: &dyn CorrectnessScorer,
    max_score: f64,
    mode: PaucMode,
) -> Result<Vec<ScoredReply>, MetricsError> {
    span.validate()?;
    check_times(span, replies.iter().map(|r| r.tau))?;
    let mut scored = Vec::with_capacity(replies.len());
    let mut joined = String::new();
    for reply in replies {
        let s = match mode {
            PaucMode::PerTurn => scorer.score(&reply.text, &span.gold_text, max_score)?,
            PaucMode::Cumulative => {
                if !joined.is_empty() {
                    joined.push_str(CUMULATIVE_SEPARATOR);
                }
                joined.push_str(&reply.text);
                scorer.score(&joined, &span.gold_text, max_score)?
            }
        };
        scored.push(ScoredReply { tau: reply.tau, s });
    }
    Ok(scored)
}

/// Area under the reply-score step curve over `[t_start, t_end]`, normalized
/// by `(t_end - t_start) * max_score`.
pub fn pauc(span: &GoldSpan, scored: &[ScoredReply], max_score: f64) -> Result<f64, MetricsError> {
    check_max_score(max_score)?;
    if !(span.t_start.is_finite() && span.t_end.is_finite() && span.t_start < span.t_end) {
        return Err(MetricsError::InvalidSpan(format!(
            "need t_start < t_end, got ({}, {})",
            span.t_start, span.t_end
        )));
    }
    check_times(span, scored.iter().map(|r| r.tau))?;
    for r in scored {
        if !(0.0..=max_score).contains(&r.s) {
            return Err(MetricsError::ScoreOutOfRange {
                s: r.s,
                max: max_score,
            });
        }
    }

    let (Some(first), Some(last)) = (scored.first(), scored.last()) else {
        return Ok(INITIAL_SCORE / max_score);
    };
    let mut area = (first.tau - span.t_start) * INITIAL_SCORE;
    for pair in scored.windows(2) {
        area += (pair[1].tau - pair[0].tau) * pair[0].s;
    }
    area += (span.t_end - last.tau) * last.s;
    Ok(area / (span.width() * max_score))
}

/// Checks that spans are individually valid, sorted and pairwise disjoint.
pub fn validate_spans(spans: &[GoldSpan]) -> Result<(), MetricsError> {
    for span in spans {
        span.validate()?;
    }
    for (i, pair) in spans.windows(2).enumerate() {
        if pair[1].t_start < pair[0].t_end {
            return Err(MetricsError::OverlappingSpans(i, i + 1));
        }
    }
    Ok(())
}

/// Groups replies by the span that strictly contains them. Replies outside
/// every span are dropped.
pub fn assign_replies<'a>(
    spans: &[GoldSpan],
    replies: &'a [ReplyEvent],
) -> Vec<Vec<&'a ReplyEvent>> {
    let mut groups = vec![Vec::new(); spans.len()];
    for reply in replies {
        // First span whose end lies beyond tau; spans are sorted and disjoint.
        let idx = spans.partition_point(|s| s.t_end <= reply.tau);
        if let Some(span) = spans.get(idx) {
            if span.contains(reply.tau) {
                groups[idx].push(reply);
            }
        }
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanScore {
    pub gold: String,
    pub t_start: f64,
    pub t_end: f64,
    pub replies: Vec<ScoredReply>,
    pub pauc: f64,
}

/// Per-span PAUC for a whole dialogue.
pub fn pauc_per_span(
    spans: &[GoldSpan],
    replies: &[ReplyEvent],
    scorer: &dyn CorrectnessScorer,
    max_score: f64,
    mode: PaucMode,
) -> Result<Vec<SpanScore>, MetricsError> {
    check_max_score(max_score)?;
    validate_spans(spans)?;
    let groups = assign_replies(spans, replies);
    spans
        .iter()
        .zip(groups)
        .map(|(span, group)| {
            let in_span: Vec<ReplyEvent> = group.into_iter().cloned().collect();
            let scored = score_replies_in_span(span, &in_span, scorer, max_score, mode)?;
            let value = pauc(span, &scored, max_score)?;
            Ok(SpanScore {
                gold: span.gold_text.clone(),
                t_start: span.t_start,
                t_end: span.t_end,
                replies: scored,
                pauc: value,
            })
        })
        .collect()
}

/// Unweighted mean of per-span PAUC.
pub fn pauc_dataset(
    spans: &[GoldSpan],
    replies: &[ReplyEvent],
    scorer: &dyn CorrectnessScorer,
    max_score: f64,
    mode: PaucMode,
) -> Result<f64, MetricsError> {
    if spans.is_empty() {
        return Err(MetricsError::NoSpans);
    }
    let per_span = pauc_per_span(spans, replies, scorer, max_score, mode)?;
    Ok(mean(per_span.iter().map(|s| s.pauc)))
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    values.sum::<f64>() / n as f64
}

/// Fraction of replies whose content is already covered by earlier replies.
pub fn duplicate_proportion(
    replies: &[ReplyEvent],
    judge: &dyn ReplicationJudge,
) -> Result<f64, JudgeError> {
    if replies.is_empty() {
        return Ok(0.0);
    }
    Ok(covered_count(replies, judge)? as f64 / replies.len() as f64)
}

pub(crate) fn covered_count(
    replies: &[ReplyEvent],
    judge: &dyn ReplicationJudge,
) -> Result<usize, JudgeError> {
    let mut covered = 0;
    for (p, reply) in replies.iter().enumerate() {
        let previous: Vec<&str> = replies[..p].iter().map(|r| r.text.as_str()).collect();
        if judge.is_covered(&reply.text, &previous)? {
            covered += 1;
        }
    }
    Ok(covered)
}

/// Number of assistant turns that are not the no-reply sentinel.
pub fn reply_turn_count(transcript: &Transcript) -> usize {
    transcript
        .turns
        .iter()
        .filter(|t| t.role == Role::Assistant)
        .filter(|t| !transcript.config.is_silence(t.text().unwrap_or_default()))
        .count()
}

/// JSON metrics report for one dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pauc: f64,
    pub duplicate_proportion: f64,
    pub reply_turns: usize,
    pub per_span: Vec<SpanScore>,
    pub mode: PaucMode,
    pub max_score: f64,
    pub cumulative_separator: String,
}

pub fn metrics_report(
    transcript: &Transcript,
    spans: &[GoldSpan],
    scorer: &dyn CorrectnessScorer,
    judge: &dyn ReplicationJudge,
    max_score: f64,
    mode: PaucMode,
) -> Result<MetricsReport, MetricsError> {
    let replies = transcript
        .extract_reply_stream()
        .map_err(|e| MetricsError::InvalidSpan(format!("invalid transcript: {e}")))?;
    report_from_replies(
        &replies,
        reply_turn_count(transcript),
        spans,
        scorer,
        judge,
        max_score,
        mode,
    )
}

pub(crate) fn report_from_replies(
    replies: &[ReplyEvent],
    reply_turns: usize,
    spans: &[GoldSpan],
    scorer: &dyn CorrectnessScorer,
    judge: &dyn ReplicationJudge,
    max_score: f64,
    mode: PaucMode,
) -> Result<MetricsReport, MetricsError> {
    if spans.is_empty() {
        return Err(MetricsError::NoSpans);
    }
    let per_span = pauc_per_span(spans, replies, scorer, max_score, mode)?;
    Ok(MetricsReport {
        pauc: mean(per_span.iter().map(|s| s.pauc)),
        duplicate_proportion: duplicate_proportion(replies, judge)?,
        reply_turns,
        per_span,
        mode,
        max_score,
        cumulative_separator: CUMULATIVE_SEPARATOR.to_string(),
    })
}
