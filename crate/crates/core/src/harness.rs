//! Streaming session simulator with pluggable responders, RL window
//! selection and GRPO group reports.
//!
//! A session is logical, not real-time: each step delivers one user turn of
//! frames (plus any question scheduled inside its window) and asks the
//! responder for the next assistant turn.

use std::collections::{BTreeMap, VecDeque};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{BuiltDialogue, ScheduledQuestion, VideoAnnotation};
use crate::metrics::{self, GoldSpan, MetricsError, MetricsReport, PaucMode, ReplyEvent};
use crate::protocol::{
    Role, StreamConfig, Transcript, TurnEvent, ValidationError, IMAGE, IM_END, IM_START,
};
use crate::rewards::{self, RewardBreakdown, RewardConfig, RewardError, RewardWeights};
use crate::scoring::{CorrectnessScorer, ReplicationJudge};

pub const MIN_WINDOW_SECS: f64 = 20.0;
pub const MAX_WINDOW_SECS: f64 = 60.0;

/// Rollouts per GRPO group.
pub const DEFAULT_GROUP_SIZE: usize = 4;

pub type ResponderError = Box<dyn std::error::Error + Send + Sync>;

/// Produces the assistant turn for the latest user turn in `context`:
/// either a reply or the config's no-reply sentinel.
pub trait Responder {
    fn on_turn(&mut self, context: &Transcript) -> Result<String, ResponderError>;
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("duration must be positive, got {0}")]
    Duration(f64),
    #[error("question schedule must be sorted with times in [0, duration]")]
    Schedule,
    #[error("responder exceeded its {budget:?} budget at turn {turn}")]
    ResponderTimeout {
        turn: usize,
        budget: Duration,
        partial: Box<Transcript>,
    },
    #[error("responder failed at turn {turn}: {source}")]
    Responder {
        turn: usize,
        #[source]
        source: ResponderError,
    },
    #[error("responder returned an unusable reply at turn {turn}: {reason}")]
    InvalidReply { turn: usize, reason: String },
    #[error("video is too short for an RL window: {duration}s < {MIN_WINDOW_SECS}s")]
    VideoTooShort { duration: f64 },
    #[error("rollout {0} has not been evaluated")]
    MissingReward(usize),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

/// Index of the assistant slot being asked for: one per user turn so far.
pub fn current_slot(context: &Transcript) -> usize {
    context.user_turns().saturating_sub(1)
}

/// Never replies.
#[derive(Debug, Clone, Copy, Default)]
pub struct SilentResponder;

impl Responder for SilentResponder {
    fn on_turn(&mut self, context: &Transcript) -> Result<String, ResponderError> {
        Ok(context.config.no_reply_sentinel.clone())
    }
}

/// Replays a fixed list of assistant turns, then stays silent.
#[derive(Debug, Clone, Default)]
pub struct ScriptedResponder {
    turns: VecDeque<String>,
}

impl ScriptedResponder {
    pub fn new(turns: impl IntoIterator<Item = String>) -> Self {
        ScriptedResponder {
            turns: turns.into_iter().collect(),
        }
    }

    /// One turn per line; blank lines mean silence.
    pub fn from_script(script: &str) -> Self {
        ScriptedResponder::new(script.lines().map(|l| l.trim_end_matches('\r').to_string()))
    }
}

impl Responder for ScriptedResponder {
    fn on_turn(&mut self, context: &Transcript) -> Result<String, ResponderError> {
        Ok(match self.turns.pop_front() {
            Some(text) if !text.trim().is_empty() => text,
            _ => context.config.no_reply_sentinel.clone(),
        })
    }
}

/// Emits planned replies at fixed slot indices.
#[derive(Debug, Clone, Default)]
pub struct OracleResponder {
    planned: BTreeMap<usize, String>,
}

impl OracleResponder {
    pub fn new(planned: impl IntoIterator<Item = (usize, String)>) -> Self {
        let mut map = BTreeMap::new();
        for (slot, text) in planned {
            map.entry(slot).or_insert(text);
        }
        OracleResponder { planned: map }
    }

    /// Replays a built dialogue's answers at their end-of-span slots.
    pub fn end_of_span(built: &BuiltDialogue) -> Self {
        OracleResponder::new(built.planned_replies())
    }

    /// Answers each span at its first slot strictly after `t_start`,
    /// delayed by `delay_slots` slots.
    pub fn earliest(
        spans: &[GoldSpan],
        duration: f64,
        config: &StreamConfig,
        delay_slots: usize,
    ) -> Self {
        let grid = crate::dataset::SlotGrid::new(duration, config);
        OracleResponder::new(spans.iter().filter_map(|span| {
            let slot = grid.strictly_after(span.t_start)? + delay_slots;
            (slot < grid.len()).then(|| (slot, span.gold_text.clone()))
        }))
    }

    pub fn planned(&self) -> &BTreeMap<usize, String> {
        &self.planned
    }
}

impl Responder for OracleResponder {
    fn on_turn(&mut self, context: &Transcript) -> Result<String, ResponderError> {
        Ok(self
            .planned
            .get(&current_slot(context))
            .cloned()
            .unwrap_or_else(|| context.config.no_reply_sentinel.clone()))
    }
}

/// Says the same thing every turn.
#[derive(Debug, Clone)]
pub struct RepeatResponder {
    pub text: String,
}

impl Responder for RepeatResponder {
    fn on_turn(&mut self, _context: &Transcript) -> Result<String, ResponderError> {
        Ok(self.text.clone())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SessionOptions {
    /// Wall-clock limit for a single responder call.
    pub step_budget: Option<Duration>,
    /// Sleep for each user turn's frame span. Never changes results.
    pub paced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub transcript: Transcript,
    pub reply_stream: Vec<ReplyEvent>,
    pub metrics: Option<MetricsReport>,
    pub reward: Option<RewardBreakdown>,
}

fn check_reply(reply: &str, turn: usize) -> Result<(), HarnessError> {
    let reason = if reply.trim().is_empty() {
        Some("empty text".to_string())
    } else {
        [IM_START, IM_END, IMAGE]
            .into_iter()
            .find(|m| reply.contains(m))
            .map(|m| format!("contains reserved marker {m}"))
    };
    match reason {
        Some(reason) => Err(HarnessError::InvalidReply { turn, reason }),
        None => Ok(()),
    }
}

/// Streams `duration` seconds of frames through `responder`.
pub fn run_session(
    duration: f64,
    schedule: &[ScheduledQuestion],
    responder: &mut dyn Responder,
    config: &StreamConfig,
    options: SessionOptions,
) -> Result<SessionResult, HarnessError> {
    config.validate().map_err(ValidationError::from)?;
    if !(duration.is_finite() && duration > 0.0) {
        return Err(HarnessError::Duration(duration));
    }
    let sorted = schedule.windows(2).all(|w| w[0].time <= w[1].time);
    if !sorted || schedule.iter().any(|q| !(0.0..=duration).contains(&q.time)) {
        return Err(HarnessError::Schedule);
    }

    let total = config.frame_count_for(duration);
    let per_turn = config.frames_per_user_turn as u64;
    let mut questions = schedule.iter().peekable();
    let mut transcript = Transcript::new(config.clone());
    let mut delivered = 0u64;

    while delivered < total {
        let frames = per_turn.min(total - delivered);
        delivered += frames;
        let turn_time = delivered as f64 * config.frame_interval_secs;
        let mut asked = Vec::new();
        while let Some(q) = questions.next_if(|q| q.time < turn_time) {
            asked.push(q.text.as_str());
        }
        let text = (!asked.is_empty()).then(|| asked.join(" "));
        transcript.push(TurnEvent::user(frames as u32, text));

        let turn = transcript.len();
        let started = Instant::now();
        let reply = responder
            .on_turn(&transcript)
            .map_err(|source| HarnessError::Responder { turn, source })?;
        if let Some(budget) = options.step_budget {
            if started.elapsed() > budget {
                return Err(HarnessError::ResponderTimeout {
                    turn,
                    budget,
                    partial: Box::new(transcript),
                });
            }
        }
        check_reply(&reply, turn)?;
        transcript.push(TurnEvent::assistant(reply));

        if options.paced {
            std::thread::sleep(Duration::from_secs_f64(
                frames as f64 * config.frame_interval_secs,
            ));
        }
    }

    let reply_stream = transcript.extract_reply_stream()?;
    Ok(SessionResult {
        transcript,
        reply_stream,
        metrics: None,
        reward: None,
    })
}

/// Replays a built dialogue's question schedule against `responder`.
pub fn run_dialogue(
    built: &BuiltDialogue,
    responder: &mut dyn Responder,
    options: SessionOptions,
) -> Result<SessionResult, HarnessError> {
    run_session(
        built.duration,
        &built.question_schedule,
        responder,
        &built.transcript.config,
        options,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub mode: PaucMode,
    /// Max score for the reported PAUC metric.
    pub max_score: f64,
    pub reward: RewardConfig,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            mode: PaucMode::PerTurn,
            max_score: rewards::REWARD_MAX_SCORE,
            reward: RewardConfig::default(),
        }
    }
}

/// Fills in metrics and reward for a finished session.
pub fn evaluate_session(
    mut result: SessionResult,
    spans: &[GoldSpan],
    scorer: &dyn CorrectnessScorer,
    judge: &dyn ReplicationJudge,
    settings: &EvalSettings,
) -> Result<SessionResult, HarnessError> {
    let report = metrics::report_from_replies(
        &result.reply_stream,
        metrics::reply_turn_count(&result.transcript),
        spans,
        scorer,
        judge,
        settings.max_score,
        settings.mode,
    )?;
    let reward =
        rewards::evaluate_rewards(spans, &result.reply_stream, scorer, judge, &settings.reward)?;
    result.metrics = Some(report);
    result.reward = Some(reward);
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub index: usize,
    pub reward: RewardBreakdown,
    pub advantage: f64,
}

/// Per-step record handed to an external trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoStepReport {
    pub group_size: usize,
    pub rollouts: Vec<RolloutReport>,
    pub advantages: Vec<f64>,
}

/// Re-weights each evaluated rollout and normalizes totals within the group.
pub fn grpo_step_report(
    group: &[SessionResult],
    weights: RewardWeights,
) -> Result<GrpoStepReport, HarnessError> {
    let breakdowns = group
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let reward = r.reward.ok_or(HarnessError::MissingReward(i))?;
            Ok(rewards::combined_reward(reward.components(), weights)?)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let totals: Vec<f64> = breakdowns.iter().map(|b| b.total).collect();
    let advantages = rewards::group_advantages(&totals);
    let rollouts = breakdowns
        .into_iter()
        .zip(&advantages)
        .enumerate()
        .map(|(index, (reward, &advantage))| RolloutReport {
            index,
            reward,
            advantage,
        })
        .collect();
    Ok(GrpoStepReport {
        group_size: group.len(),
        rollouts,
        advantages,
    })
}

/// A short training window plus the gold dialogue that precedes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlWindow {
    pub window_start: f64,
    pub window_end: f64,
    pub context_turns: Vec<TurnEvent>,
}

impl RlWindow {
    pub fn length(&self) -> f64 {
        self.window_end - self.window_start
    }

    /// Gold spans intersecting the window, clipped to it.
    pub fn clip_spans(&self, spans: &[GoldSpan]) -> Vec<GoldSpan> {
        spans
            .iter()
            .filter_map(|s| {
                let start = s.t_start.max(self.window_start);
                let end = s.t_end.min(self.window_end);
                (start < end).then(|| GoldSpan::new(s.gold_text.clone(), start, end))
            })
            .collect()
    }

    /// Replies emitted inside `(window_start, window_end]`.
    pub fn clip_replies(&self, replies: &[ReplyEvent]) -> Vec<ReplyEvent> {
        replies
            .iter()
            .filter(|r| r.tau > self.window_start && r.tau <= self.window_end)
            .cloned()
            .collect()
    }
}

/// Seeded window of 20 to 60 seconds inside the video.
pub fn select_rl_window(
    annotation: &VideoAnnotation,
    built: &BuiltDialogue,
    seed: u64,
) -> Result<RlWindow, HarnessError> {
    let duration = annotation.duration;
    if duration.is_nan() || duration < MIN_WINDOW_SECS {
        return Err(HarnessError::VideoTooShort { duration });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let length = rng.gen_range(MIN_WINDOW_SECS..=duration.min(MAX_WINDOW_SECS));
    let start = rng.gen_range(0.0..=duration - length);

    let transcript = &built.transcript;
    let mut context_turns = Vec::new();
    for (i, turn) in transcript.turns.iter().enumerate() {
        if transcript.event_timestamp(i)? >= start {
            break;
        }
        context_turns.push(turn.clone());
    }
    Ok(RlWindow {
        window_start: start,
        window_end: start + length,
        context_turns,
    })
}

/// Rewards for the part of a session that falls inside `window`.
pub fn evaluate_window(
    window: &RlWindow,
    spans: &[GoldSpan],
    replies: &[ReplyEvent],
    scorer: &dyn CorrectnessScorer,
    judge: &dyn ReplicationJudge,
    config: &RewardConfig,
) -> Result<RewardBreakdown, HarnessError> {
    let spans = window.clip_spans(spans);
    let replies = window.clip_replies(replies);
    Ok(rewards::evaluate_rewards(
        &spans, &replies, scorer, judge, config,
    )?)
}

/// Number of assistant turns in a transcript (silent or not).
pub fn assistant_turns(transcript: &Transcript) -> usize {
    transcript
        .turns
        .iter()
        .filter(|t| t.role == Role::Assistant)
        .count()
}
