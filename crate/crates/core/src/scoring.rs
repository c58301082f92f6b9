//! Reply judges: correctness scoring, replication coverage and answer
//! summarization.
//!
//! The lexical defaults are deterministic stand-ins for an LLM judge. The
//! [`RemoteJudge`] forwards the same questions to an external service over a
//! single-line JSON request/response protocol.

use std::collections::{HashMap, HashSet};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable naming the remote judge endpoint.
pub const JUDGE_ENDPOINT_ENV: &str = "DUET_JUDGE_ENDPOINT";

/// Default fraction of shared tokens above which a reply counts as covered.
pub const DEFAULT_CONTAINMENT_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JudgeError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("judge request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("judge transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("judge returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed judge response: {0}")]
    Malformed(String),
    #[error("judge reported an error: {0}")]
    Remote(String),
}

impl JudgeError {
    /// Failures reaching or talking to the judge, as opposed to bad input.
    pub fn is_transport(&self) -> bool {
        !matches!(self, JudgeError::Parameter(_))
    }
}

/// Scores a reply against a gold answer on `[0, max_score]`.
pub trait CorrectnessScorer {
    fn score(&self, pred: &str, gold: &str, max_score: f64) -> Result<f64, JudgeError>;
}

/// Decides whether all information in `reply` already appeared in `previous`.
pub trait ReplicationJudge {
    fn is_covered(&self, reply: &str, previous: &[&str]) -> Result<bool, JudgeError>;
}

/// Merges several answers into one immediate answer.
pub trait SummaryProvider {
    fn summarize(&self, answers: &[&str]) -> Result<String, JudgeError>;
}

/// Case-folds, drops ASCII punctuation and splits on whitespace.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// Bag-of-tokens F1 between `pred` and `gold`, scaled to `[0, max_score]`.
pub fn lexical_score(pred: &str, gold: &str, max_score: f64) -> Result<f64, JudgeError> {
    if !(max_score.is_finite() && max_score > 0.0) {
        return Err(JudgeError::Parameter(format!(
            "max score must be positive, got {max_score}"
        )));
    }
    let pred = normalize_tokens(pred);
    let gold = normalize_tokens(gold);
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => return Ok(max_score),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for tok in &gold {
        *counts.entry(tok).or_default() += 1;
    }
    let mut common = 0usize;
    for tok in &pred {
        if let Some(n) = counts.get_mut(tok.as_str()) {
            if *n > 0 {
                *n -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return Ok(0.0);
    }
    // F1 = 2c / (|pred| + |gold|), which equals 2PR / (P + R).
    let f1 = 2.0 * common as f64 / (pred.len() + gold.len()) as f64;
    Ok(f1 * max_score)
}

/// True iff at least `threshold` of the reply's distinct tokens occur in
/// some previous reply.
pub fn containment_covered(reply: &str, previous: &[&str], threshold: f64) -> bool {
    if previous.is_empty() {
        return false;
    }
    let seen: HashSet<String> = previous.iter().flat_map(|p| normalize_tokens(p)).collect();
    let tokens: HashSet<String> = normalize_tokens(reply).into_iter().collect();
    if tokens.is_empty() {
        return true;
    }
    let shared = tokens.iter().filter(|t| seen.contains(*t)).count();
    shared as f64 / tokens.len() as f64 >= threshold
}

/// Token-F1 correctness scorer.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer;

impl CorrectnessScorer for LexicalScorer {
    fn score(&self, pred: &str, gold: &str, max_score: f64) -> Result<f64, JudgeError> {
        lexical_score(pred, gold, max_score)
    }
}

/// Full marks for a normalized exact match, zero otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatchScorer;

impl CorrectnessScorer for ExactMatchScorer {
    fn score(&self, pred: &str, gold: &str, max_score: f64) -> Result<f64, JudgeError> {
        if !(max_score.is_finite() && max_score > 0.0) {
            return Err(JudgeError::Parameter(format!(
                "max score must be positive, got {max_score}"
            )));
        }
        Ok(if normalize_tokens(pred) == normalize_tokens(gold) {
            max_score
        } else {
            0.0
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ContainmentJudge {
    pub threshold: f64,
}

impl ContainmentJudge {
    pub fn new(threshold: f64) -> Result<Self, JudgeError> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(JudgeError::Parameter(format!(
                "containment threshold must be in (0, 1], got {threshold}"
            )));
        }
        Ok(ContainmentJudge { threshold })
    }
}

impl Default for ContainmentJudge {
    fn default() -> Self {
        ContainmentJudge {
            threshold: DEFAULT_CONTAINMENT_THRESHOLD,
        }
    }
}

impl ReplicationJudge for ContainmentJudge {
    fn is_covered(&self, reply: &str, previous: &[&str]) -> Result<bool, JudgeError> {
        Ok(containment_covered(reply, previous, self.threshold))
    }
}

/// Space-joins answers in order.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConcatSummarizer;

impl SummaryProvider for ConcatSummarizer {
    fn summarize(&self, answers: &[&str]) -> Result<String, JudgeError> {
        Ok(answers.join(" "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeKind {
    Score,
    Coverage,
    Summarize,
}

/// Wire request. Every field is always present; unused ones are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub kind: JudgeKind,
    pub pred: Option<String>,
    pub gold: Option<String>,
    pub previous: Option<Vec<String>>,
    pub answers: Option<Vec<String>>,
    pub max_score: Option<f64>,
    pub id: String,
}

impl JudgeRequest {
    pub fn score(id: impl Into<String>, pred: &str, gold: &str, max_score: f64) -> Self {
        JudgeRequest {
            kind: JudgeKind::Score,
            pred: Some(pred.to_string()),
            gold: Some(gold.to_string()),
            previous: None,
            answers: None,
            max_score: Some(max_score),
            id: id.into(),
        }
    }

    pub fn coverage(id: impl Into<String>, reply: &str, previous: &[&str]) -> Self {
        JudgeRequest {
            kind: JudgeKind::Coverage,
            pred: Some(reply.to_string()),
            gold: None,
            previous: Some(previous.iter().map(|s| s.to_string()).collect()),
            answers: None,
            max_score: None,
            id: id.into(),
        }
    }

    pub fn summarize(id: impl Into<String>, answers: &[&str]) -> Self {
        JudgeRequest {
            kind: JudgeKind::Summarize,
            pred: None,
            gold: None,
            previous: None,
            answers: Some(answers.iter().map(|s| s.to_string()).collect()),
            max_score: None,
            id: id.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeResponse {
    pub id: String,
    #[serde(default)]
    pub score: Option<f64>,
    #[serde(default)]
    pub covered: Option<bool>,
    #[serde(default)]
    pub summary: Option<String>,
    #[serde(default)]
    pub error: Option<String>,
    /// Set locally when `score` had to be clamped into `[0, max_score]`.
    #[serde(skip)]
    pub clamped: bool,
}

/// Client for an external judge reachable over HTTP.
#[derive(Debug, Clone)]
pub struct RemoteJudge {
    endpoint: String,
    agent: ureq::Agent,
    pub timeout: Duration,
    pub retries: u32,
    pub backoff: Duration,
}

impl RemoteJudge {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        RemoteJudge {
            endpoint: endpoint.into(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            timeout,
            retries: 2,
            backoff: Duration::from_millis(100),
        }
    }

    pub fn with_retries(mut self, retries: u32, backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = backoff;
        self
    }

    /// Builds a client from [`JUDGE_ENDPOINT_ENV`], if set.
    pub fn from_env() -> Option<Self> {
        std::env::var(JUDGE_ENDPOINT_ENV)
            .ok()
            .filter(|s| !s.trim().is_empty())
            .map(|endpoint| RemoteJudge::new(endpoint, Duration::from_secs(30)))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Sends one request, retrying transport failures and 5xx responses with
    /// exponential backoff.
    pub fn call(&self, request: &JudgeRequest) -> Result<JudgeResponse, JudgeError> {
        let body = serde_json::to_string(request)
            .map_err(|e| JudgeError::Parameter(format!("unserializable request: {e}")))?;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.send_once(&body, attempt) {
                Ok(text) => return decode_response(request, &text),
                Err(err) if attempt <= self.retries && retriable(&err) => {
                    thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
                }
                Err(err) => return Err(err),
            }
        }
    }

    fn send_once(&self, body: &str, attempts: u32) -> Result<String, JudgeError> {
        let result = self
            .agent
            .post(&self.endpoint)
            .set("Content-Type", "application/json")
            .send_string(body);
        match result {
            Ok(resp) => resp
                .into_string()
                .map_err(|e| transport_error(&e, attempts)),
            Err(ureq::Error::Status(status, resp)) => Err(JudgeError::Status {
                status,
                body: resp.into_string().unwrap_or_default(),
            }),
            Err(ureq::Error::Transport(t)) => Err(transport_error(&t, attempts)),
        }
    }

    fn expect_ok(&self, request: JudgeRequest) -> Result<JudgeResponse, JudgeError> {
        let resp = self.call(&request)?;
        match resp.error {
            Some(message) => Err(JudgeError::Remote(message)),
            None => Ok(resp),
        }
    }
}

fn retriable(err: &JudgeError) -> bool {
    match err {
        JudgeError::Timeout { .. } | JudgeError::Transport { .. } => true,
        JudgeError::Status { status, .. } => *status >= 500,
        _ => false,
    }
}

fn transport_error(err: &(dyn std::error::Error + 'static), attempts: u32) -> JudgeError {
    let mut source: Option<&(dyn std::error::Error + 'static)> = Some(err);
    while let Some(e) = source {
        if let Some(io) = e.downcast_ref::<std::io::Error>() {
            if matches!(
                io.kind(),
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
            ) {
                return JudgeError::Timeout { attempts };
            }
        }
        source = e.source();
    }
    JudgeError::Transport {
        attempts,
        message: err.to_string(),
    }
}

fn decode_response(request: &JudgeRequest, text: &str) -> Result<JudgeResponse, JudgeError> {
    let mut resp: JudgeResponse =
        serde_json::from_str(text.trim()).map_err(|e| JudgeError::Malformed(e.to_string()))?;
    if resp.id != request.id {
        return Err(JudgeError::Malformed(format!(
            "correlation id mismatch: sent {:?}, received {:?}",
            request.id, resp.id
        )));
    }
    if resp.error.is_some() {
        return Ok(resp);
    }
    match request.kind {
        JudgeKind::Score => {
            let max = request.max_score.unwrap_or(f64::INFINITY);
            let score = resp.score.filter(|s| s.is_finite()).ok_or_else(|| {
                JudgeError::Malformed("score response without a finite score".into())
            })?;
            let clamped = score.clamp(0.0, max);
            resp.clamped = clamped != score;
            resp.score = Some(clamped);
        }
        JudgeKind::Coverage if resp.covered.is_none() => {
            return Err(JudgeError::Malformed(
                "coverage response without `covered`".into(),
            ))
        }
        JudgeKind::Summarize if resp.summary.is_none() => {
            return Err(JudgeError::Malformed(
                "summarize response without `summary`".into(),
            ))
        }
        _ => {}
    }
    Ok(resp)
}

/// One-shot call to a remote judge.
pub fn remote_judge(
    endpoint: &str,
    request: &JudgeRequest,
    timeout: Duration,
) -> Result<JudgeResponse, JudgeError> {
    RemoteJudge::new(endpoint, timeout).call(request)
}

fn next_id(kind: &str, a: &str, b: &str) -> String {
    // Content-derived id keeps requests reproducible across runs.
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    (kind, a, b).hash(&mut h);
    format!("{kind}-{:016x}", h.finish())
}

impl CorrectnessScorer for RemoteJudge {
    fn score(&self, pred: &str, gold: &str, max_score: f64) -> Result<f64, JudgeError> {
        let req = JudgeRequest::score(next_id("score", pred, gold), pred, gold, max_score);
        Ok(self.expect_ok(req)?.score.unwrap_or_default())
    }
}

impl ReplicationJudge for RemoteJudge {
    fn is_covered(&self, reply: &str, previous: &[&str]) -> Result<bool, JudgeError> {
        if previous.is_empty() {
            return Ok(false);
        }
        let req = JudgeRequest::coverage(
            next_id("coverage", reply, &previous.join("\n")),
            reply,
            previous,
        );
        Ok(self.expect_ok(req)?.covered.unwrap_or_default())
    }
}

impl SummaryProvider for RemoteJudge {
    fn summarize(&self, answers: &[&str]) -> Result<String, JudgeError> {
        if let [single] = answers {
            return Ok(single.to_string());
        }
        let req = JudgeRequest::summarize(next_id("summarize", &answers.join("\n"), ""), answers);
        Ok(self.expect_ok(req)?.summary.unwrap_or_default())
    }
}

/// The three judges used by evaluation and dataset building.
pub struct JudgeSet {
    pub scorer: Box<dyn CorrectnessScorer + Send + Sync>,
    pub judge: Box<dyn ReplicationJudge + Send + Sync>,
    pub summarizer: Box<dyn SummaryProvider + Send + Sync>,
}

impl JudgeSet {
    pub fn lexical() -> Self {
        JudgeSet {
            scorer: Box::new(LexicalScorer),
            judge: Box::new(ContainmentJudge::default()),
            summarizer: Box::new(ConcatSummarizer),
        }
    }

    /// Remote judge when [`JUDGE_ENDPOINT_ENV`] is set, lexical defaults otherwise.
    pub fn from_env() -> Self {
        match RemoteJudge::from_env() {
            Some(remote) => JudgeSet {
                scorer: Box::new(remote.clone()),
                judge: Box::new(remote.clone()),
                summarizer: Box::new(remote),
            },
            None => JudgeSet::lexical(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexical_examples() {
        assert_eq!(lexical_score("a b c", "a b c", 4.0).unwrap(), 4.0);
        assert_eq!(lexical_score("x y", "a b", 4.0).unwrap(), 0.0);
        let s = lexical_score("a b c", "a b d", 4.0).unwrap();
        assert!((s - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn lexical_empty_cases() {
        assert_eq!(lexical_score("", "", 4.0).unwrap(), 4.0);
        assert_eq!(lexical_score("...", "a", 4.0).unwrap(), 0.0);
        assert_eq!(lexical_score("a", "", 2.0).unwrap(), 0.0);
    }

    #[test]
    fn lexical_rejects_bad_scale() {
        assert!(matches!(
            lexical_score("a", "a", 0.0),
            Err(JudgeError::Parameter(_))
        ));
        assert!(lexical_score("a", "a", -1.0).is_err());
    }

    #[test]
    fn normalization_folds_case_and_punctuation() {
        assert_eq!(
            normalize_tokens("Hello, WORLD!  it's"),
            vec!["hello", "world", "its"]
        );
        assert_eq!(
            lexical_score("Hello, world.", "hello world", 4.0).unwrap(),
            4.0
        );
    }

    #[test]
    fn multiplicity_counts_for_f1() {
        // pred has "a" twice but gold only once: common = 1, F1 = 2/(2+1).
        let s = lexical_score("a a", "a", 1.0).unwrap();
        assert!((s - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn containment_examples() {
        assert!(containment_covered("a b", &["a b c"], 0.9));
        assert!(!containment_covered("a b", &[], 0.9));
        assert!(!containment_covered("a z", &["a b"], 0.9));
        assert!(containment_covered("a z", &["a b"], 0.5));
    }

    #[test]
    fn containment_ignores_multiplicity() {
        assert!(containment_covered("a a a b", &["a", "b"], 1.0));
    }

    #[test]
    fn containment_judge_threshold_bounds() {
        assert!(ContainmentJudge::new(0.0).is_err());
        assert!(ContainmentJudge::new(1.5).is_err());
        assert_eq!(ContainmentJudge::default().threshold, 0.8);
    }

    #[test]
    fn concat_summary_of_one_is_identity() {
        assert_eq!(ConcatSummarizer.summarize(&["only"]).unwrap(), "only");
        assert_eq!(ConcatSummarizer.summarize(&["a.", "b."]).unwrap(), "a. b.");
    }

    #[test]
    fn request_serializes_all_fields() {
        let req = JudgeRequest::score("7", "p", "g", 4.0);
        let line = serde_json::to_string(&req).unwrap();
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 7);
        assert!(v["previous"].is_null() && v["answers"].is_null());
        assert_eq!(v["kind"], "score");
    }

    #[test]
    fn decode_clamps_and_checks_id() {
        let req = JudgeRequest::score("abc", "p", "g", 4.0);
        let resp = decode_response(
            &req,
            r#"{"id":"abc","score":5.5,"covered":null,"summary":null,"error":null}"#,
        )
        .unwrap();
        assert_eq!(resp.score, Some(4.0));
        assert!(resp.clamped);
        let resp = decode_response(&req, r#"{"id":"abc","score":-1}"#).unwrap();
        assert_eq!(resp.score, Some(0.0));
        assert!(matches!(
            decode_response(&req, r#"{"id":"zzz","score":1}"#),
            Err(JudgeError::Malformed(_))
        ));
        assert!(matches!(
            decode_response(&req, "not json"),
            Err(JudgeError::Malformed(_))
        ));
        assert!(matches!(
            decode_response(&req, r#"{"id":"abc"}"#),
            Err(JudgeError::Malformed(_))
        ));
    }
}
