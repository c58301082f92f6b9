//! Proactive chat template: data model, canonical rendering, parsing and
//! frame-count timestamps.
//!
//! A transcript is a system turn followed by strictly alternating user and
//! assistant turns. User turns carry a few frame placeholders (and optionally
//! text); every assistant turn carries either a reply or the no-reply
//! sentinel. Wall-clock time is never stored: the timestamp of a turn is the
//! number of frame placeholders up to and including that turn, multiplied by
//! the frame interval.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::ReplyEvent;

pub const IM_START: &str = "<|im_start|>";
pub const IM_END: &str = "<|im_end|>";
pub const IMAGE: &str = "<image>";

/// Assistant text meaning "stay silent this turn".
pub const NO_REPLY: &str = "NO REPLY";

pub const DEFAULT_SYSTEM_PROMPT: &str = "You are a helpful assistant. Your task is to answer questions based on continuously incoming video frames. Your responses should include information from the video since your last reply (if any). If the information in this segment of the video cannot answer the question, output \"NO REPLY\".";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }

    fn from_name(name: &str) -> Option<Role> {
        match name {
            "system" => Some(Role::System),
            "user" => Some(Role::User),
            "assistant" => Some(Role::Assistant),
            _ => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Streaming parameters shared by every turn of a transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub frame_interval_secs: f64,
    pub frames_per_user_turn: u32,
    pub system_prompt: String,
    #[serde(default = "default_sentinel")]
    pub no_reply_sentinel: String,
}

fn default_sentinel() -> String {
    NO_REPLY.to_string()
}

impl Default for StreamConfig {
    /// Two-second frame interval, two frames per user turn.
    fn default() -> Self {
        StreamConfig {
            frame_interval_secs: 2.0,
            frames_per_user_turn: 2,
            system_prompt: DEFAULT_SYSTEM_PROMPT.to_string(),
            no_reply_sentinel: NO_REPLY.to_string(),
        }
    }
}

impl StreamConfig {
    pub fn new(frame_interval_secs: f64, frames_per_user_turn: u32) -> Result<Self, ConfigError> {
        let config = StreamConfig {
            frame_interval_secs,
            frames_per_user_turn,
            ..StreamConfig::default()
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_system_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.system_prompt = prompt.into();
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.frame_interval_secs.is_finite() && self.frame_interval_secs > 0.0) {
            return Err(ConfigError::FrameInterval(self.frame_interval_secs));
        }
        if self.frames_per_user_turn == 0 {
            return Err(ConfigError::FramesPerTurn);
        }
        if self.no_reply_sentinel.is_empty() || self.no_reply_sentinel.contains('\n') {
            return Err(ConfigError::Sentinel(self.no_reply_sentinel.clone()));
        }
        Ok(())
    }

    /// Seconds covered by one full user turn.
    pub fn turn_span_secs(&self) -> f64 {
        self.frames_per_user_turn as f64 * self.frame_interval_secs
    }

    /// Frames sampled at `0, d, 2d, ... <= duration`.
    pub fn frame_count_for(&self, duration: f64) -> u64 {
        // Tolerate representation error such as 0.3 / 0.1 = 2.9999999999999996.
        (duration / self.frame_interval_secs + 1e-9).floor() as u64 + 1
    }

    /// Number of user turns needed to deliver `frames` frames.
    pub fn user_turns_for(&self, frames: u64) -> u64 {
        frames.div_ceil(self.frames_per_user_turn as u64)
    }

    pub fn is_silence(&self, text: &str) -> bool {
        text == self.no_reply_sentinel
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("frame interval must be a positive finite number of seconds, got {0}")]
    FrameInterval(f64),
    #[error("frames per user turn must be at least 1")]
    FramesPerTurn,
    #[error("no-reply sentinel must be non-empty and single-line, got {0:?}")]
    Sentinel(String),
}

/// One turn of the proactive dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnEvent {
    pub role: Role,
    #[serde(rename = "frames")]
    pub frame_count: u32,
    pub text: Option<String>,
}

impl TurnEvent {
    pub fn system(prompt: impl Into<String>) -> Self {
        TurnEvent {
            role: Role::System,
            frame_count: 0,
            text: Some(prompt.into()),
        }
    }

    pub fn user(frame_count: u32, text: Option<String>) -> Self {
        TurnEvent {
            role: Role::User,
            frame_count,
            text,
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        TurnEvent {
            role: Role::Assistant,
            frame_count: 0,
            text: Some(text.into()),
        }
    }

    pub fn text(&self) -> Option<&str> {
        self.text.as_deref()
    }
}

/// Why a turn fails validation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TurnFault {
    #[error("first turn must be the system turn")]
    MissingSystem,
    #[error("expected a {expected} turn, found {found}")]
    Alternation { expected: Role, found: Role },
    #[error("{0} turns cannot carry frames")]
    FramesNotAllowed(Role),
    #[error("user turn has {count} frames, more than the configured {max}")]
    TooManyFrames { count: u32, max: u32 },
    #[error("user turn carries neither frames nor text")]
    EmptyUserTurn,
    #[error("{0} turn requires text")]
    MissingText(Role),
    #[error("empty text must be represented as absent")]
    EmptyText,
    #[error("text contains the reserved marker {0}")]
    ReservedMarker(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("invalid stream config: {0}")]
    Config(#[from] ConfigError),
    #[error("turn {turn_index}: {fault}")]
    Turn { turn_index: usize, fault: TurnFault },
    #[error("turn index {index} out of range for {len} turns")]
    IndexOutOfRange { index: usize, len: usize },
}

/// A stream configuration and its ordered turns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub config: StreamConfig,
    pub turns: Vec<TurnEvent>,
}

impl Transcript {
    /// Starts a transcript holding only the system turn.
    pub fn new(config: StreamConfig) -> Self {
        let system = TurnEvent::system(config.system_prompt.clone());
        Transcript {
            config,
            turns: vec![system],
        }
    }

    pub fn from_parts(
        config: StreamConfig,
        turns: Vec<TurnEvent>,
    ) -> Result<Self, ValidationError> {
        let transcript = Transcript { config, turns };
        transcript.validate()?;
        Ok(transcript)
    }

    pub fn push(&mut self, turn: TurnEvent) {
        self.turns.push(turn);
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn total_frames(&self) -> u64 {
        self.turns.iter().map(|t| t.frame_count as u64).sum()
    }

    pub fn user_turns(&self) -> usize {
        self.turns.iter().filter(|t| t.role == Role::User).count()
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        self.config.validate()?;
        let fail = |turn_index, fault| Err(ValidationError::Turn { turn_index, fault });
        if self.turns.first().map(|t| t.role) != Some(Role::System) {
            return fail(0, TurnFault::MissingSystem);
        }
        for (index, turn) in self.turns.iter().enumerate() {
            let expected = match index {
                0 => Role::System,
                i if i % 2 == 1 => Role::User,
                _ => Role::Assistant,
            };
            if turn.role != expected {
                return fail(
                    index,
                    TurnFault::Alternation {
                        expected,
                        found: turn.role,
                    },
                );
            }
            if let Err(fault) = self.check_turn(turn) {
                return fail(index, fault);
            }
        }
        Ok(())
    }

    fn check_turn(&self, turn: &TurnEvent) -> Result<(), TurnFault> {
        if let Some(text) = turn.text() {
            for marker in [IM_START, IM_END, IMAGE] {
                if text.contains(marker) {
                    return Err(TurnFault::ReservedMarker(marker));
                }
            }
        }
        match turn.role {
            Role::System | Role::Assistant => {
                if turn.frame_count != 0 {
                    return Err(TurnFault::FramesNotAllowed(turn.role));
                }
                match turn.text() {
                    None => return Err(TurnFault::MissingText(turn.role)),
                    Some("") if turn.role == Role::Assistant => {
                        return Err(TurnFault::MissingText(turn.role))
                    }
                    _ => {}
                }
            }
            Role::User => {
                let max = self.config.frames_per_user_turn;
                if turn.frame_count > max {
                    return Err(TurnFault::TooManyFrames {
                        count: turn.frame_count,
                        max,
                    });
                }
                match turn.text() {
                    Some("") => return Err(TurnFault::EmptyText),
                    None if turn.frame_count == 0 => return Err(TurnFault::EmptyUserTurn),
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Timestamp of the text in `turn_index`: frames up to and including
    /// that turn times the frame interval.
    pub fn event_timestamp(&self, turn_index: usize) -> Result<f64, ValidationError> {
        if turn_index >= self.turns.len() {
            return Err(ValidationError::IndexOutOfRange {
                index: turn_index,
                len: self.turns.len(),
            });
        }
        let frames: u64 = self.turns[..=turn_index]
            .iter()
            .map(|t| t.frame_count as u64)
            .sum();
        Ok(frames as f64 * self.config.frame_interval_secs)
    }

    /// Every non-silent assistant turn with its timestamp, in order.
    pub fn extract_reply_stream(&self) -> Result<Vec<ReplyEvent>, ValidationError> {
        self.validate()?;
        let mut frames = 0u64;
        let mut replies = Vec::new();
        for turn in &self.turns {
            frames += turn.frame_count as u64;
            if turn.role != Role::Assistant {
                continue;
            }
            let text = turn.text().unwrap_or_default();
            if !self.config.is_silence(text) {
                replies.push(ReplyEvent {
                    text: text.to_string(),
                    tau: frames as f64 * self.config.frame_interval_secs,
                });
            }
        }
        Ok(replies)
    }

    /// Canonical template text; fails on the first invalid turn.
    pub fn render(&self) -> Result<String, ValidationError> {
        self.validate()?;
        let mut out = String::new();
        for (index, turn) in self.turns.iter().enumerate() {
            if index > 0 {
                out.push('\n');
            }
            out.push_str(IM_START);
            out.push_str(turn.role.as_str());
            out.push('\n');
            for _ in 0..turn.frame_count {
                out.push_str(IMAGE);
            }
            if let Some(text) = turn.text() {
                out.push_str(text);
            }
            out.push_str(IM_END);
        }
        Ok(out)
    }
}

pub fn render(transcript: &Transcript) -> Result<String, ValidationError> {
    transcript.render()
}

pub fn event_timestamp(transcript: &Transcript, turn_index: usize) -> Result<f64, ValidationError> {
    transcript.event_timestamp(turn_index)
}

pub fn extract_reply_stream(transcript: &Transcript) -> Result<Vec<ReplyEvent>, ValidationError> {
    transcript.extract_reply_stream()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("expected {IM_START} at byte {offset}")]
    ExpectedStart { offset: usize },
    #[error("unknown role {role:?} at byte {offset}")]
    UnknownRole { role: String, offset: usize },
    #[error("role name not terminated by a newline at byte {offset}")]
    UnterminatedRole { offset: usize },
    #[error("missing {IM_END} for turn starting at byte {offset}")]
    MissingEnd { offset: usize },
    #[error("frame placeholder inside {role} turn at byte {offset}")]
    FramesNotAllowed { role: Role, offset: usize },
    #[error("frame placeholder after turn text at byte {offset}")]
    FrameAfterText { offset: usize },
    #[error("expected a newline between turns at byte {offset}")]
    MissingSeparator { offset: usize },
    #[error("parsed transcript is invalid: {0}")]
    Invalid(#[from] ValidationError),
}

/// Parses canonical template text back into a transcript.
pub fn parse(raw: &str, config: &StreamConfig) -> Result<Transcript, ParseError> {
    let mut turns = Vec::new();
    let mut pos = 0;
    // Accept a single trailing newline after the last turn.
    let raw = raw.strip_suffix('\n').unwrap_or(raw);

    while pos < raw.len() || turns.is_empty() {
        if !turns.is_empty() {
            if !raw[pos..].starts_with('\n') {
                return Err(ParseError::MissingSeparator { offset: pos });
            }
            pos += 1;
        }
        let marker_offset = pos;
        if !raw[pos..].starts_with(IM_START) {
            return Err(ParseError::ExpectedStart { offset: pos });
        }
        pos += IM_START.len();

        let role_end = match raw[pos..].find('\n') {
            Some(i) => pos + i,
            None => return Err(ParseError::UnterminatedRole { offset: pos }),
        };
        let role_name = &raw[pos..role_end];
        let role = match Role::from_name(role_name) {
            Some(role) => role,
            None if role_name.contains(IM_END) || role_name.contains(IM_START) => {
                return Err(ParseError::UnterminatedRole { offset: pos })
            }
            None => {
                return Err(ParseError::UnknownRole {
                    role: role_name.to_string(),
                    offset: marker_offset,
                })
            }
        };
        let body_start = role_end + 1;

        let body_end = match raw[body_start..].find(IM_END) {
            Some(i) => body_start + i,
            None => {
                return Err(ParseError::MissingEnd {
                    offset: marker_offset,
                })
            }
        };
        if raw[body_start..body_end].contains(IM_START) {
            return Err(ParseError::MissingEnd {
                offset: marker_offset,
            });
        }
        let turn = parse_body(role, raw, body_start, body_end)?;
        turns.push(turn);
        pos = body_end + IM_END.len();
    }

    Ok(Transcript::from_parts(config.clone(), turns)?)
}

fn parse_body(role: Role, raw: &str, start: usize, end: usize) -> Result<TurnEvent, ParseError> {
    let body = &raw[start..end];
    let mut rest = body;
    let mut frames = 0u32;
    while let Some(stripped) = rest.strip_prefix(IMAGE) {
        frames += 1;
        rest = stripped;
    }
    let text_offset = start + (body.len() - rest.len());
    if frames > 0 && role != Role::User {
        return Err(ParseError::FramesNotAllowed {
            role,
            offset: start,
        });
    }
    if let Some(i) = rest.find(IMAGE) {
        let offset = text_offset + i;
        return Err(match role {
            Role::User => ParseError::FrameAfterText { offset },
            _ => ParseError::FramesNotAllowed { role, offset },
        });
    }
    let text = match role {
        Role::User if rest.is_empty() => None,
        _ => Some(rest.to_string()),
    };
    Ok(TurnEvent {
        role,
        frame_count: frames,
        text,
    })
}

/// Header line of the transcript JSONL format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub frame_interval_secs: f64,
    pub frames_per_user_turn: u32,
    pub system_prompt: String,
    #[serde(default = "default_sentinel")]
    pub no_reply_sentinel: String,
}

impl From<&StreamConfig> for TranscriptHeader {
    fn from(config: &StreamConfig) -> Self {
        TranscriptHeader {
            frame_interval_secs: config.frame_interval_secs,
            frames_per_user_turn: config.frames_per_user_turn,
            system_prompt: config.system_prompt.clone(),
            no_reply_sentinel: config.no_reply_sentinel.clone(),
        }
    }
}

impl From<TranscriptHeader> for StreamConfig {
    fn from(header: TranscriptHeader) -> Self {
        StreamConfig {
            frame_interval_secs: header.frame_interval_secs,
            frames_per_user_turn: header.frames_per_user_turn,
            system_prompt: header.system_prompt,
            no_reply_sentinel: header.no_reply_sentinel,
        }
    }
}

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("transcript JSONL is empty")]
    MissingHeader,
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

impl Transcript {
    /// Header line followed by one line per turn.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&TranscriptHeader::from(&self.config))
            .expect("header serializes");
        out.push('\n');
        for turn in &self.turns {
            out.push_str(&serde_json::to_string(turn).expect("turn serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(input: &str) -> Result<Transcript, JsonlError> {
        let mut lines = input
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (line, header) = lines.next().ok_or(JsonlError::MissingHeader)?;
        let header: TranscriptHeader =
            serde_json::from_str(header).map_err(|source| JsonlError::Json {
                line: line + 1,
                source,
            })?;
        let turns = lines
            .map(|(line, l)| {
                serde_json::from_str::<TurnEvent>(l).map_err(|source| JsonlError::Json {
                    line: line + 1,
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Transcript::from_parts(header.into(), turns)?)
    }
}
