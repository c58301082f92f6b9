//! Builds proactive dialogues (1QnA and nQnA) with gold spans from
//! scene-level annotations.
//!
//! Answers are placed at the end of their reply span: the latest assistant
//! slot whose time lies in `(span.start, span.end]`. Every other assistant
//! slot carries the no-reply sentinel.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::GoldSpan;
use crate::protocol::{
    StreamConfig, Transcript, TranscriptHeader, TurnEvent, ValidationError, NO_REPLY,
};
use crate::scoring::{JudgeError, SummaryProvider};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("{video_id}: invalid annotation: {reason}")]
    Annotation { video_id: String, reason: String },
    #[error("{video_id}: {got} question times given for {expected} question lists")]
    QuestionCount {
        video_id: String,
        expected: usize,
        got: usize,
    },
    #[error("{video_id}: question times must strictly increase within [0, duration)")]
    QuestionTimes { video_id: String },
    #[error("time {t} is outside [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },
    #[error("no assistant slot at or after {t}s (last slot at {last}s)")]
    NoSlot { t: f64, last: f64 },
    #[error("{video_id}: qa index {index} out of range")]
    QaIndex { video_id: String, index: usize },
    #[error("{video_id}: summarizer failed: {source}")]
    Summary {
        video_id: String,
        #[source]
        source: JudgeError,
    },
    #[error("{video_id}: built transcript is invalid: {source}")]
    Transcript {
        video_id: String,
        #[source]
        source: ValidationError,
    },
    #[error("{video_id}: {source}")]
    Io {
        video_id: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub start: f64,
    pub end: f64,
    #[serde(default)]
    pub caption: String,
}

/// One question with an answer (or the sentinel) per scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaList {
    pub question: String,
    pub answers: Vec<String>,
}

impl QaList {
    fn answer(&self, scene: usize) -> Option<&str> {
        self.answers
            .get(scene)
            .map(String::as_str)
            .filter(|a| *a != NO_REPLY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAnnotation {
    pub video_id: String,
    pub duration: f64,
    pub scenes: Vec<Scene>,
    pub qa_lists: Vec<QaList>,
}

impl VideoAnnotation {
    pub fn validate(&self) -> Result<(), BuildError> {
        let bad = |reason: String| BuildError::Annotation {
            video_id: self.video_id.clone(),
            reason,
        };
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(bad(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if self.scenes.is_empty() {
            return Err(bad("no scenes".into()));
        }
        for (i, scene) in self.scenes.iter().enumerate() {
            if !(scene.start.is_finite() && scene.end.is_finite() && scene.start < scene.end) {
                return Err(bad(format!("scene {i} has start >= end")));
            }
            if scene.start < 0.0 || scene.end > self.duration {
                return Err(bad(format!(
                    "scene {i} lies outside [0, {}]",
                    self.duration
                )));
            }
            if i > 0 && scene.start < self.scenes[i - 1].end {
                return Err(bad(format!(
                    "scene {i} overlaps or precedes scene {}",
                    i - 1
                )));
            }
        }
        if self.qa_lists.is_empty() || self.qa_lists.len() > 4 {
            return Err(bad(format!(
                "expected 1 to 4 qa lists, got {}",
                self.qa_lists.len()
            )));
        }
        for (j, qa) in self.qa_lists.iter().enumerate() {
            if qa.question.trim().is_empty() {
                return Err(bad(format!("qa list {j} has an empty question")));
            }
            if qa.answers.len() != self.scenes.len() {
                return Err(bad(format!(
                    "qa list {j} has {} answers for {} scenes",
                    qa.answers.len(),
                    self.scenes.len()
                )));
            }
            if qa.answers.iter().any(|a| a.trim().is_empty()) {
                return Err(bad(format!("qa list {j} has an empty answer")));
            }
            if qa.answers.iter().all(|a| a == NO_REPLY) {
                return Err(bad(format!(
                    "qa list {j} has no answer other than {NO_REPLY:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Discrete assistant slots of a video streamed under a config.
///
/// Slot `k` follows user turn `k`; its time is the number of frames
/// delivered so far times the frame interval.
#[derive(Debug, Clone, Copy)]
pub struct SlotGrid {
    frames: u64,
    frames_per_turn: u64,
    interval: f64,
}

impl SlotGrid {
    pub fn new(duration: f64, config: &StreamConfig) -> Self {
        SlotGrid {
            frames: config.frame_count_for(duration),
            frames_per_turn: config.frames_per_user_turn as u64,
            interval: config.frame_interval_secs,
        }
    }

    pub fn total_frames(&self) -> u64 {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.div_ceil(self.frames_per_turn) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Frames delivered in user turn `k`; only the last turn may be short.
    pub fn frames_in_turn(&self, k: usize) -> u32 {
        let before = k as u64 * self.frames_per_turn;
        self.frames_per_turn.min(self.frames.saturating_sub(before)) as u32
    }

    pub fn time(&self, k: usize) -> f64 {
        let frames = ((k as u64 + 1) * self.frames_per_turn).min(self.frames);
        frames as f64 * self.interval
    }

    pub fn last_time(&self) -> f64 {
        self.time(self.len() - 1)
    }

    fn first_where(&self, pred: impl Fn(f64) -> bool) -> Option<usize> {
        // Slot times are non-decreasing, so `pred` flips at most once.
        let (mut lo, mut hi) = (0, self.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if pred(self.time(mid)) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        (lo < self.len()).then_some(lo)
    }

    /// Earliest slot whose time is `>= t`.
    pub fn at_or_after(&self, t: f64) -> Option<usize> {
        self.first_where(|time| time >= t)
    }

    /// Earliest slot whose time is `> t`; a question asked at `t` joins the
    /// user turn of this slot.
    pub fn strictly_after(&self, t: f64) -> Option<usize> {
        self.first_where(|time| time > t)
    }

    /// Latest slot with `start < time <= end` and, if given, `time < before`.
    pub fn latest_within(&self, start: f64, end: f64, before: Option<f64>) -> Option<usize> {
        let ok = |time: f64| time <= end && before.is_none_or(|b| time < b);
        let past = self.first_where(|time| !ok(time)).unwrap_or(self.len());
        let k = past.checked_sub(1)?;
        (self.time(k) > start).then_some(k)
    }
}

/// Earliest assistant slot at or after `t` as `(index, time)`.
pub fn assistant_slot_after(
    t: f64,
    duration: f64,
    config: &StreamConfig,
) -> Result<(usize, f64), BuildError> {
    if !(t >= 0.0 && t <= duration) {
        return Err(BuildError::TimeOutOfRange { t, duration });
    }
    let grid = SlotGrid::new(duration, config);
    grid.at_or_after(t)
        .map(|k| (k, grid.time(k)))
        .ok_or(BuildError::NoSlot {
            t,
            last: grid.last_time(),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerPlacement {
    #[default]
    EndOfSpan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DialogueKind {
    #[serde(rename = "1qna")]
    OneQuestion,
    #[serde(rename = "nqna")]
    MultiQuestion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledQuestion {
    pub time: f64,
    pub text: String,
}

/// Where one gold answer ended up in the transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub question: usize,
    /// Source scene, or `None` for an immediate (summary) answer.
    pub scene: Option<usize>,
    pub slot: usize,
    pub slot_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltDialogue {
    pub video_id: String,
    pub kind: DialogueKind,
    pub duration: f64,
    pub transcript: Transcript,
    /// Sorted, disjoint; aligned 1:1 with `placements`.
    pub gold_spans: Vec<GoldSpan>,
    pub placements: Vec<Placement>,
    pub question_schedule: Vec<ScheduledQuestion>,
    pub warnings: Vec<String>,
}

impl BuiltDialogue {
    /// Slot index to reply text for every placed answer.
    pub fn planned_replies(&self) -> Vec<(usize, String)> {
        self.placements
            .iter()
            .zip(&self.gold_spans)
            .map(|(p, s)| (p.slot, s.gold_text.clone()))
            .collect()
    }

    pub fn to_record(&self) -> DialogueRecord {
        DialogueRecord {
            video_id: self.video_id.clone(),
            kind: self.kind,
            duration: self.duration,
            header: TranscriptHeader::from(&self.transcript.config),
            turns: self.transcript.turns.clone(),
            spans: self.gold_spans.clone(),
            questions: self.question_schedule.clone(),
            placements: self.placements.clone(),
            warnings: self.warnings.clone(),
        }
    }
}

/// One line of the built-dialogue JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub video_id: String,
    pub kind: DialogueKind,
    pub duration: f64,
    pub header: TranscriptHeader,
    pub turns: Vec<TurnEvent>,
    pub spans: Vec<GoldSpan>,
    pub questions: Vec<ScheduledQuestion>,
    pub placements: Vec<Placement>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl DialogueRecord {
    pub fn into_dialogue(self) -> Result<BuiltDialogue, BuildError> {
        let transcript =
            Transcript::from_parts(self.header.into(), self.turns).map_err(|source| {
                BuildError::Transcript {
                    video_id: self.video_id.clone(),
                    source,
                }
            })?;
        Ok(BuiltDialogue {
            video_id: self.video_id,
            kind: self.kind,
            duration: self.duration,
            transcript,
            gold_spans: self.spans,
            placements: self.placements,
            question_schedule: self.questions,
            warnings: self.warnings,
        })
    }
}

struct Builder<'a> {
    annotation: &'a VideoAnnotation,
    config: &'a StreamConfig,
    grid: SlotGrid,
    user_text: Vec<Option<String>>,
    replies: Vec<Option<String>>,
    spans: Vec<GoldSpan>,
    placements: Vec<Placement>,
    warnings: Vec<String>,
}

impl<'a> Builder<'a> {
    fn new(annotation: &'a VideoAnnotation, config: &'a StreamConfig) -> Self {
        let grid = SlotGrid::new(annotation.duration, config);
        Builder {
            annotation,
            config,
            grid,
            user_text: vec![None; grid.len()],
            replies: vec![None; grid.len()],
            spans: Vec::new(),
            placements: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn place(
        &mut self,
        question: usize,
        scene: Option<usize>,
        slot: usize,
        span: GoldSpan,
    ) -> bool {
        if self.replies[slot].is_some() {
            self.warnings.push(format!(
                "question {question}: slot {slot} already holds an answer, dropping {}",
                describe(scene)
            ));
            return false;
        }
        self.replies[slot] = Some(span.gold_text.clone());
        self.placements.push(Placement {
            question,
            scene,
            slot,
            slot_time: self.grid.time(slot),
        });
        self.spans.push(span);
        true
    }

    /// Adds question `qa` asked at `t`, answering until `next` (exclusive).
    fn add_question(
        &mut self,
        question: usize,
        qa: &QaList,
        t: f64,
        next: Option<f64>,
        summarizer: &dyn SummaryProvider,
    ) -> Result<(), BuildError> {
        let annotation = self.annotation;
        let slot = self.grid.strictly_after(t).ok_or(BuildError::NoSlot {
            t,
            last: self.grid.last_time(),
        })?;
        match &mut self.user_text[slot] {
            Some(text) => {
                text.push(' ');
                text.push_str(&qa.question);
            }
            empty => *empty = Some(qa.question.clone()),
        }

        let mut floor = t;
        let finished: Vec<&str> = annotation
            .scenes
            .iter()
            .enumerate()
            .filter(|(_, s)| s.end <= t)
            .filter_map(|(i, _)| qa.answer(i))
            .collect();
        if !finished.is_empty() {
            let summary =
                summarizer
                    .summarize(&finished)
                    .map_err(|source| BuildError::Summary {
                        video_id: annotation.video_id.clone(),
                        source,
                    })?;
            let mut end = t + self.config.turn_span_secs();
            if let Some(next) = next {
                end = end.min(next);
            }
            let slot_time = self.grid.time(slot);
            let fits = slot_time > t && slot_time <= end && next.is_none_or(|n| slot_time < n);
            if fits && self.place(question, None, slot, GoldSpan::new(summary, t, end)) {
                floor = end;
            } else if !fits {
                self.warnings.push(format!(
                    "question {question}: immediate answer has no slot before the next question"
                ));
            }
        }

        for (i, scene) in annotation.scenes.iter().enumerate() {
            let Some(answer) = qa.answer(i) else { continue };
            if scene.end <= t || next.is_some_and(|n| scene.end > n) {
                continue;
            }
            let start = scene.start.max(floor);
            if start >= scene.end {
                self.warnings.push(format!(
                    "question {question}: scene {i} is covered by the immediate answer, dropping it"
                ));
                continue;
            }
            match self.grid.latest_within(start, scene.end, next) {
                Some(slot) => {
                    self.place(question, Some(i), slot, GoldSpan::new(answer, start, scene.end));
                }
                None => self.warnings.push(format!(
                    "question {question}: scene {i} ({start}s-{}s) contains no assistant slot, dropping its answer",
                    scene.end
                )),
            }
        }
        Ok(())
    }

    fn finish(
        self,
        kind: DialogueKind,
        question_schedule: Vec<ScheduledQuestion>,
    ) -> Result<BuiltDialogue, BuildError> {
        let mut transcript = Transcript::new(self.config.clone());
        for k in 0..self.grid.len() {
            transcript.push(TurnEvent::user(
                self.grid.frames_in_turn(k),
                self.user_text[k].clone(),
            ));
            let reply = self.replies[k]
                .clone()
                .unwrap_or_else(|| self.config.no_reply_sentinel.clone());
            transcript.push(TurnEvent::assistant(reply));
        }
        transcript
            .validate()
            .map_err(|source| BuildError::Transcript {
                video_id: self.annotation.video_id.clone(),
                source,
            })?;
        Ok(BuiltDialogue {
            video_id: self.annotation.video_id.clone(),
            kind,
            duration: self.annotation.duration,
            transcript,
            gold_spans: self.spans,
            placements: self.placements,
            question_schedule,
            warnings: self.warnings,
        })
    }
}

fn describe(scene: Option<usize>) -> String {
    match scene {
        Some(i) => format!("scene {i}"),
        None => "immediate answer".into(),
    }
}

/// One question asked at the start; answers placed at the end of their scenes.
pub fn build_1qna(
    annotation: &VideoAnnotation,
    qa_index: usize,
    config: &StreamConfig,
    placement: AnswerPlacement,
) -> Result<BuiltDialogue, BuildError> {
    let AnswerPlacement::EndOfSpan = placement;
    annotation.validate()?;
    let qa = annotation
        .qa_lists
        .get(qa_index)
        .ok_or_else(|| BuildError::QaIndex {
            video_id: annotation.video_id.clone(),
            index: qa_index,
        })?;
    let mut builder = Builder::new(annotation, config);
    // Nothing has ended at t = 0, so the summarizer is never consulted.
    builder.add_question(0, qa, 0.0, None, &crate::scoring::ConcatSummarizer)?;
    let schedule = vec![ScheduledQuestion {
        time: 0.0,
        text: qa.question.clone(),
    }];
    builder.finish(DialogueKind::OneQuestion, schedule)
}

/// Every question list, asked at `question_times`; each new question preempts
/// the answers of the previous one.
pub fn build_nqna(
    annotation: &VideoAnnotation,
    question_times: &[f64],
    summarizer: &dyn SummaryProvider,
    config: &StreamConfig,
) -> Result<BuiltDialogue, BuildError> {
    annotation.validate()?;
    if question_times.len() != annotation.qa_lists.len() {
        return Err(BuildError::QuestionCount {
            video_id: annotation.video_id.clone(),
            expected: annotation.qa_lists.len(),
            got: question_times.len(),
        });
    }
    let increasing = question_times.windows(2).all(|w| w[0] < w[1]);
    let in_range = question_times
        .iter()
        .all(|&t| t >= 0.0 && t < annotation.duration);
    if !increasing || !in_range {
        return Err(BuildError::QuestionTimes {
            video_id: annotation.video_id.clone(),
        });
    }
    let mut builder = Builder::new(annotation, config);
    for (j, (qa, &t)) in annotation.qa_lists.iter().zip(question_times).enumerate() {
        let next = question_times.get(j + 1).copied();
        builder.add_question(j, qa, t, next, summarizer)?;
    }
    let schedule = annotation
        .qa_lists
        .iter()
        .zip(question_times)
        .map(|(qa, &time)| ScheduledQuestion {
            time,
            text: qa.question.clone(),
        })
        .collect();
    builder.finish(DialogueKind::MultiQuestion, schedule)
}

/// Seeded question times: the first question at 0, each later one uniformly
/// inside a distinct randomly chosen later scene.
pub fn sample_question_times(annotation: &VideoAnnotation, rng: &mut impl Rng) -> Vec<f64> {
    let count = annotation.qa_lists.len();
    let mut times = vec![0.0];
    if count <= 1 {
        return times;
    }
    let later: Vec<usize> = (1..annotation.scenes.len()).collect();
    if later.len() >= count - 1 {
        let mut picked: Vec<usize> = later.choose_multiple(rng, count - 1).copied().collect();
        picked.sort_unstable();
        for i in picked {
            let scene = &annotation.scenes[i];
            times.push(rng.gen_range(scene.start..scene.end));
        }
    } else {
        let mut rest: Vec<f64> = (1..count)
            .map(|_| rng.gen_range(f64::EPSILON..annotation.duration))
            .collect();
        rest.sort_by(f64::total_cmp);
        rest.dedup();
        times.extend(rest);
        while times.len() < count {
            // Vanishingly unlikely collision; nudge forward deterministically.
            let last = *times.last().unwrap_or(&0.0);
            times.push((last + annotation.duration) / 2.0);
        }
    }
    times
}

fn video_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Seeded split of videos into 1QnA and nQnA: exactly
/// `round(fraction * n)` videos become 1QnA.
pub fn assign_kinds(count: usize, fraction_1qna: f64, seed: u64) -> Vec<DialogueKind> {
    let ones = (fraction_1qna.clamp(0.0, 1.0) * count as f64).round() as usize;
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut video_rng(seed, usize::MAX - 1));
    let mut kinds = vec![DialogueKind::MultiQuestion; count];
    for &i in &order[..ones] {
        kinds[i] = DialogueKind::OneQuestion;
    }
    kinds
}

#[derive(Debug, Clone)]
pub struct EmitOptions {
    pub fraction_1qna: f64,
    pub seed: u64,
    pub config: StreamConfig,
}

impl Default for EmitOptions {
    fn default() -> Self {
        EmitOptions {
            fraction_1qna: 0.5,
            seed: 0,
            config: StreamConfig::default(),
        }
    }
}

/// Builds one dialogue per annotation, in input order.
pub fn emit_dataset(
    annotations: &[VideoAnnotation],
    options: &EmitOptions,
    summarizer: &dyn SummaryProvider,
) -> Result<Vec<Result<BuiltDialogue, BuildError>>, BuildError> {
    if !(0.0..=1.0).contains(&options.fraction_1qna) {
        return Err(BuildError::Annotation {
            video_id: String::new(),
            reason: format!(
                "1QnA fraction must lie in [0, 1], got {}",
                options.fraction_1qna
            ),
        });
    }
    let kinds = assign_kinds(annotations.len(), options.fraction_1qna, options.seed);
    Ok(annotations
        .iter()
        .zip(kinds)
        .enumerate()
        .map(|(i, (annotation, kind))| build_one(annotation, kind, i, options, summarizer))
        .collect())
}

fn build_one(
    annotation: &VideoAnnotation,
    kind: DialogueKind,
    index: usize,
    options: &EmitOptions,
    summarizer: &dyn SummaryProvider,
) -> Result<BuiltDialogue, BuildError> {
    annotation.validate()?;
    let mut rng = video_rng(options.seed, index);
    match kind {
        DialogueKind::OneQuestion => {
            let qa_index = rng.gen_range(0..annotation.qa_lists.len());
            build_1qna(
                annotation,
                qa_index,
                &options.config,
                AnswerPlacement::EndOfSpan,
            )
        }
        DialogueKind::MultiQuestion => {
            let times = sample_question_times(annotation, &mut rng);
            build_nqna(annotation, &times, summarizer, &options.config)
        }
    }
}

/// Writes dialogues as JSONL, one record per line.
pub fn write_dialogues<W: Write>(
    out: &mut W,
    dialogues: &[BuiltDialogue],
) -> Result<(), BuildError> {
    for d in dialogues {
        let line = serde_json::to_string(&d.to_record()).expect("dialogue record serializes");
        writeln!(out, "{line}").map_err(|source| BuildError::Io {
            video_id: d.video_id.clone(),
            source,
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::ConcatSummarizer;

    fn cfg(interval: f64, per_turn: u32) -> StreamConfig {
        StreamConfig::new(interval, per_turn).unwrap()
    }

    fn two_scene() -> VideoAnnotation {
        VideoAnnotation {
            video_id: "v".into(),
            duration: 8.0,
            scenes: vec![
                Scene {
                    start: 0.0,
                    end: 4.0,
                    caption: String::new(),
                },
                Scene {
                    start: 4.0,
                    end: 8.0,
                    caption: String::new(),
                },
            ],
            qa_lists: vec![QaList {
                question: "What happens?".into(),
                answers: vec!["a cat jumps".into(), NO_REPLY.into()],
            }],
        }
    }

    #[test]
    fn slot_after_examples() {
        let c = cfg(1.0, 2);
        assert_eq!(assistant_slot_after(3.5, 10.0, &c).unwrap(), (1, 4.0));
        assert_eq!(assistant_slot_after(0.0, 10.0, &c).unwrap(), (0, 2.0));
        assert_eq!(assistant_slot_after(4.0, 10.0, &c).unwrap(), (1, 4.0));
        assert!(matches!(
            assistant_slot_after(11.0, 10.0, &c),
            Err(BuildError::TimeOutOfRange { .. })
        ));
    }

    #[test]
    fn final_short_turn() {
        // Frames at 0..=8 (9 frames), turns of 2: the fifth turn has one frame.
        let grid = SlotGrid::new(8.0, &cfg(1.0, 2));
        assert_eq!(grid.len(), 5);
        assert_eq!(grid.frames_in_turn(4), 1);
        assert_eq!(grid.time(4), 9.0);
        assert_eq!(grid.latest_within(4.0, 8.0, None), Some(3));
        assert_eq!(grid.latest_within(4.0, 8.0, Some(8.0)), Some(2));
        assert_eq!(grid.latest_within(4.5, 5.5, None), None);
    }

    #[test]
    fn one_qna_two_scene_example() {
        let d = build_1qna(&two_scene(), 0, &cfg(1.0, 2), AnswerPlacement::EndOfSpan).unwrap();
        assert_eq!(d.gold_spans, vec![GoldSpan::new("a cat jumps", 0.0, 4.0)]);
        assert_eq!(d.placements[0].slot, 1);
        assert_eq!(d.placements[0].slot_time, 4.0);
        let stream = d.transcript.extract_reply_stream().unwrap();
        assert_eq!(stream.len(), 1);
        assert_eq!(stream[0].tau, 4.0);
        assert_eq!(d.transcript.turns[1].text.as_deref(), Some("What happens?"));
        assert_eq!(d.transcript.total_frames(), 9);
    }

    #[test]
    fn all_silent_list_rejected() {
        let mut a = two_scene();
        a.qa_lists[0].answers = vec![NO_REPLY.into(), NO_REPLY.into()];
        assert!(matches!(
            build_1qna(&a, 0, &cfg(1.0, 2), AnswerPlacement::EndOfSpan),
            Err(BuildError::Annotation { .. })
        ));
    }

    #[test]
    fn short_scene_dropped_with_warning() {
        let mut a = two_scene();
        a.scenes[0] = Scene {
            start: 0.5,
            end: 1.5,
            caption: String::new(),
        };
        let d = build_1qna(&a, 0, &cfg(1.0, 2), AnswerPlacement::EndOfSpan).unwrap();
        assert!(d.gold_spans.is_empty());
        assert_eq!(d.warnings.len(), 1);
        assert!(d.warnings[0].contains("scene 0"));
    }

    fn three_scene() -> VideoAnnotation {
        let scene = |start, end| Scene {
            start,
            end,
            caption: String::new(),
        };
        VideoAnnotation {
            video_id: "three".into(),
            duration: 30.0,
            scenes: vec![scene(0.0, 8.0), scene(8.0, 15.0), scene(17.0, 28.0)],
            qa_lists: vec![
                QaList {
                    question: "Who enters?".into(),
                    answers: vec![
                        "a man enters".into(),
                        "a woman enters".into(),
                        "a dog enters".into(),
                    ],
                },
                QaList {
                    question: "What is cooked?".into(),
                    answers: vec![
                        "eggs are fried".into(),
                        "rice is boiled".into(),
                        "soup simmers".into(),
                    ],
                },
            ],
        }
    }

    #[test]
    fn nqna_preempts_previous_question() {
        let a = three_scene();
        let d = build_nqna(&a, &[0.0, 16.5], &ConcatSummarizer, &cfg(1.0, 2)).unwrap();
        let texts: Vec<&str> = d.gold_spans.iter().map(|s| s.gold_text.as_str()).collect();
        assert_eq!(
            texts,
            vec![
                "a man enters",
                "a woman enters",
                "eggs are fried rice is boiled",
                "soup simmers"
            ]
        );
        assert!(!texts.contains(&"a dog enters"));
        let immediate = &d.gold_spans[2];
        assert_eq!((immediate.t_start, immediate.t_end), (16.5, 18.5));
        assert_eq!(d.placements[2].slot_time, 18.0);
        // The last scene span starts where the immediate answer's window ends.
        assert_eq!(d.gold_spans[3].t_start, 18.5);
        for (p, s) in d.placements.iter().zip(&d.gold_spans) {
            assert!(s.t_start < p.slot_time && p.slot_time <= s.t_end);
            if p.question == 0 {
                assert!(p.slot_time < 16.5);
            }
        }
        crate::metrics::validate_spans(&d.gold_spans).unwrap();
    }

    #[test]
    fn single_question_nqna_matches_1qna() {
        let a = two_scene();
        let one = build_1qna(&a, 0, &cfg(1.0, 2), AnswerPlacement::EndOfSpan).unwrap();
        let n = build_nqna(&a, &[0.0], &ConcatSummarizer, &cfg(1.0, 2)).unwrap();
        assert_eq!(one.transcript, n.transcript);
        assert_eq!(one.gold_spans, n.gold_spans);
    }

    #[test]
    fn nqna_validates_times() {
        let a = three_scene();
        assert!(matches!(
            build_nqna(&a, &[0.0], &ConcatSummarizer, &cfg(1.0, 2)),
            Err(BuildError::QuestionCount {
                expected: 2,
                got: 1,
                ..
            })
        ));
        assert!(matches!(
            build_nqna(&a, &[5.0, 5.0], &ConcatSummarizer, &cfg(1.0, 2)),
            Err(BuildError::QuestionTimes { .. })
        ));
    }

    #[test]
    fn kinds_split_exactly() {
        let kinds = assign_kinds(1000, 0.5, 42);
        let ones = kinds
            .iter()
            .filter(|k| **k == DialogueKind::OneQuestion)
            .count();
        assert_eq!(ones, 500);
        assert_eq!(kinds, assign_kinds(1000, 0.5, 42));
        assert!(assign_kinds(10, 1.0, 1)
            .iter()
            .all(|k| *k == DialogueKind::OneQuestion));
    }

    #[test]
    fn record_round_trip() {
        let d = build_nqna(
            &three_scene(),
            &[0.0, 16.0],
            &ConcatSummarizer,
            &cfg(1.0, 2),
        )
        .unwrap();
        let line = serde_json::to_string(&d.to_record()).unwrap();
        let back: DialogueRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back.into_dialogue().unwrap(), d);
    }
}
