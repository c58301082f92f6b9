//! Command-line surface. Every subcommand writes JSON or template text to
//! stdout and reports problems on stderr with a stable exit code.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::dataset::{
    self, BuildError, BuiltDialogue, DialogueRecord, EmitOptions, VideoAnnotation,
};
use crate::harness::{
    self, EvalSettings, HarnessError, OracleResponder, Responder, ScriptedResponder,
    SessionOptions, SilentResponder,
};
use crate::metrics::{self, GoldSpan, MetricsError, PaucMode};
use crate::protocol::{StreamConfig, Transcript, TurnEvent};
use crate::rewards::{self, PrefixPolicy, RewardConfig, RewardError, RewardWeights};
use crate::scoring::{JudgeError, JudgeSet};

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_JUDGE: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "duet",
    version,
    about = "Streaming dialogue evaluation, rewards and dataset tools"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// PAUC, duplicate proportion and reply count for a transcript.
    Eval(EvalArgs),
    /// Reward components and weighted total for a transcript.
    Reward(RewardArgs),
    /// Build proactive dialogues from video annotations.
    Build(BuildArgs),
    /// Run built dialogues through a responder and score them.
    Simulate(SimulateArgs),
    /// Sample one RL training window per annotated video.
    Window(WindowArgs),
    /// Print a transcript in chat-template form.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    PerTurn,
    Cumulative,
}

impl From<ModeArg> for PaucMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::PerTurn => PaucMode::PerTurn,
            ModeArg::Cumulative => PaucMode::Cumulative,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub spans: PathBuf,
    #[arg(long)]
    pub transcript: PathBuf,
    #[arg(long, value_enum, default_value = "per-turn")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = rewards::REWARD_MAX_SCORE)]
    pub max_score: f64,
}

#[derive(Debug, Clone, Args)]
pub struct WeightArgs {
    #[arg(long, default_value_t = 3.0)]
    pub w_pauc: f64,
    #[arg(long, default_value_t = 2.0)]
    pub w_rep: f64,
    #[arg(long, default_value_t = 0.5)]
    pub w_in_span: f64,
    #[arg(long, default_value_t = 2.0)]
    pub w_pfx: f64,
    #[arg(long, default_value_t = rewards::DEFAULT_LCP_THRESHOLD)]
    pub lcp_threshold: usize,
    #[arg(long, default_value_t = rewards::REWARD_MAX_SCORE)]
    pub max_score: f64,
}

impl WeightArgs {
    pub fn weights(&self) -> RewardWeights {
        RewardWeights {
            w_pauc: self.w_pauc,
            w_rep: self.w_rep,
            w_in_span: self.w_in_span,
            w_pfx: self.w_pfx,
        }
    }

    pub fn reward_config(&self) -> Result<RewardConfig, CliError> {
        let weights = self.weights();
        weights.validate()?;
        Ok(RewardConfig {
            weights,
            prefix: PrefixPolicy::new(self.lcp_threshold)?,
            max_score: self.max_score,
        })
    }
}

#[derive(Debug, Args)]
pub struct RewardArgs {
    #[arg(long)]
    pub spans: PathBuf,
    #[arg(long)]
    pub transcript: PathBuf,
    #[command(flatten)]
    pub weights: WeightArgs,
}

#[derive(Debug, Clone, Args)]
pub struct StreamArgs {
    #[arg(long, default_value_t = 0.5)]
    pub fraction_1qna: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2.0)]
    pub frame_interval: f64,
    #[arg(long, default_value_t = 2)]
    pub frames_per_turn: u32,
}

impl StreamArgs {
    fn emit_options(&self) -> Result<EmitOptions, CliError> {
        let config = StreamConfig::new(self.frame_interval, self.frames_per_turn)
            .map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(EmitOptions {
            fraction_1qna: self.fraction_1qna,
            seed: self.seed,
            config,
        })
    }
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub stream: StreamArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub dialogue: PathBuf,
    /// `silent`, `oracle` or `script:FILE`.
    #[arg(long, default_value = "silent")]
    pub responder: String,
    #[arg(long)]
    pub paced: bool,
    /// Per-turn responder budget in milliseconds.
    #[arg(long)]
    pub step_budget_ms: Option<u64>,
    #[arg(long, value_enum, default_value = "per-turn")]
    pub mode: ModeArg,
    #[command(flatten)]
    pub weights: WeightArgs,
}

#[derive(Debug, Args)]
pub struct WindowArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[command(flatten)]
    pub stream: StreamArgs,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub transcript: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("judge: {0}")]
    Judge(JudgeError),
    #[error("{failed} record(s) failed")]
    Records { failed: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Records { .. } => EXIT_VALIDATION,
            CliError::Io { .. } => EXIT_IO,
            CliError::Judge(_) => EXIT_JUDGE,
        }
    }
}

fn from_judge(e: JudgeError) -> CliError {
    if e.is_transport() {
        CliError::Judge(e)
    } else {
        CliError::Validation(e.to_string())
    }
}

impl From<JudgeError> for CliError {
    fn from(e: JudgeError) -> Self {
        from_judge(e)
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Judge(j) => from_judge(j),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<RewardError> for CliError {
    fn from(e: RewardError) -> Self {
        match e {
            RewardError::Judge(j) => from_judge(j),
            RewardError::Metrics(m) => m.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        match e {
            BuildError::Summary { source, .. } if source.is_transport() => CliError::Judge(source),
            BuildError::Io { video_id, source } => CliError::Io {
                path: video_id,
                source,
            },
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Metrics(m) => m.into(),
            HarnessError::Reward(r) => r.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses one JSON value per non-blank line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Validation(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn read_transcript(path: &Path) -> Result<Transcript, CliError> {
    Transcript::from_jsonl(&read_text(path)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn to_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("report serializes")
}

fn spans_jsonl(spans: &[GoldSpan]) -> String {
    spans.iter().map(|s| to_line(s) + "\n").collect()
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let result = match cli.command {
        Command::Eval(a) => eval(a, &mut out),
        Command::Reward(a) => reward(a, &mut out),
        Command::Build(a) => build(a),
        Command::Simulate(a) => simulate(a, &mut out),
        Command::Window(a) => window(a, &mut out),
        Command::Render(a) => render(a, &mut out),
    };
    out.flush().map_err(|source| CliError::Io {
        path: "<stdout>".into(),
        source,
    })?;
    result
}

fn emit<W: Write>(out: &mut W, line: &str) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(|source| CliError::Io {
        path: "<stdout>".into(),
        source,
    })
}

fn eval<W: Write>(a: EvalArgs, out: &mut W) -> Result<(), CliError> {
    let spans: Vec<GoldSpan> = read_jsonl(&a.spans)?;
    let transcript = read_transcript(&a.transcript)?;
    let judges = JudgeSet::from_env();
    let report = metrics::metrics_report(
        &transcript,
        &spans,
        judges.scorer.as_ref(),
        judges.judge.as_ref(),
        a.max_score,
        a.mode.into(),
    )?;
    emit(out, &to_line(&report))
}

fn reward<W: Write>(a: RewardArgs, out: &mut W) -> Result<(), CliError> {
    let config = a.weights.reward_config()?;
    let spans: Vec<GoldSpan> = read_jsonl(&a.spans)?;
    let transcript = read_transcript(&a.transcript)?;
    let replies = transcript
        .extract_reply_stream()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let judges = JudgeSet::from_env();
    let breakdown = rewards::evaluate_rewards(
        &spans,
        &replies,
        judges.scorer.as_ref(),
        judges.judge.as_ref(),
        &config,
    )?;
    emit(out, &to_line(&breakdown))
}

type BuildResults = Vec<Result<BuiltDialogue, BuildError>>;

fn build_all(
    annotations: &Path,
    stream: &StreamArgs,
) -> Result<(Vec<VideoAnnotation>, BuildResults), CliError> {
    let options = stream.emit_options()?;
    let annotations: Vec<VideoAnnotation> = read_jsonl(annotations)?;
    let judges = JudgeSet::from_env();
    let built = dataset::emit_dataset(&annotations, &options, judges.summarizer.as_ref())?;
    Ok((annotations, built))
}

/// Fails with the worst error class seen, after every record was attempted.
fn report_failures(failures: Vec<CliError>) -> Result<(), CliError> {
    if failures.is_empty() {
        return Ok(());
    }
    for f in &failures {
        eprintln!("error: {f}");
    }
    let failed = failures.len();
    let worst = failures
        .iter()
        .map(CliError::exit_code)
        .max()
        .unwrap_or(EXIT_VALIDATION);
    match failures.into_iter().find(|f| f.exit_code() == worst) {
        Some(CliError::Validation(_)) | None => Err(CliError::Records { failed }),
        Some(other) => Err(other),
    }
}

fn build(a: BuildArgs) -> Result<(), CliError> {
    let (_, built) = build_all(&a.annotations, &a.stream)?;
    fs::create_dir_all(&a.out).map_err(|source| CliError::Io {
        path: a.out.display().to_string(),
        source,
    })?;
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for result in built {
        match result {
            Ok(d) => ok.push(d),
            Err(e) => failures.push(CliError::from(e)),
        }
    }
    let mut all = String::new();
    for d in &ok {
        for w in &d.warnings {
            eprintln!("warning: {}: {w}", d.video_id);
        }
        all.push_str(&to_line(&d.to_record()));
        all.push('\n');
        write_text(
            &a.out.join(format!("{}.transcript.jsonl", d.video_id)),
            &d.transcript.to_jsonl(),
        )?;
        write_text(
            &a.out.join(format!("{}.spans.jsonl", d.video_id)),
            &spans_jsonl(&d.gold_spans),
        )?;
    }
    write_text(&a.out.join("dialogues.jsonl"), &all)?;
    report_failures(failures)
}

#[derive(Debug, Serialize)]
struct SimulationRecord<'a> {
    video_id: &'a str,
    responder: &'a str,
    turns: &'a [TurnEvent],
    reply_stream: &'a [metrics::ReplyEvent],
    metrics: &'a Option<metrics::MetricsReport>,
    reward: &'a Option<rewards::RewardBreakdown>,
}

fn make_responder(choice: &str, built: &BuiltDialogue) -> Result<Box<dyn Responder>, CliError> {
    match choice {
        "silent" => Ok(Box::new(SilentResponder)),
        "oracle" => Ok(Box::new(OracleResponder::end_of_span(built))),
        _ => match choice.strip_prefix("script:") {
            Some(file) => Ok(Box::new(ScriptedResponder::from_script(&read_text(
                Path::new(file),
            )?))),
            None => Err(CliError::Validation(format!(
                "unknown responder {choice:?}; expected silent, oracle or script:FILE"
            ))),
        },
    }
}

fn simulate<W: Write>(a: SimulateArgs, out: &mut W) -> Result<(), CliError> {
    let settings = EvalSettings {
        mode: a.mode.into(),
        max_score: a.weights.max_score,
        reward: a.weights.reward_config()?,
    };
    let options = SessionOptions {
        step_budget: a.step_budget_ms.map(Duration::from_millis),
        paced: a.paced,
    };
    let records: Vec<DialogueRecord> = read_jsonl(&a.dialogue)?;
    let judges = JudgeSet::from_env();
    for record in records {
        let built = record.into_dialogue()?;
        let mut responder = make_responder(&a.responder, &built)?;
        let mut result = harness::run_dialogue(&built, responder.as_mut(), options)?;
        if !built.gold_spans.is_empty() {
            result = harness::evaluate_session(
                result,
                &built.gold_spans,
                judges.scorer.as_ref(),
                judges.judge.as_ref(),
                &settings,
            )?;
        }
        let line = to_line(&SimulationRecord {
            video_id: &built.video_id,
            responder: &a.responder,
            turns: &result.transcript.turns,
            reply_stream: &result.reply_stream,
            metrics: &result.metrics,
            reward: &result.reward,
        });
        emit(out, &line)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct WindowRecord<'a> {
    video_id: &'a str,
    #[serde(flatten)]
    window: &'a harness::RlWindow,
    spans: Vec<GoldSpan>,
}

fn window<W: Write>(a: WindowArgs, out: &mut W) -> Result<(), CliError> {
    let (annotations, built) = build_all(&a.annotations, &a.stream)?;
    let mut failures = Vec::new();
    for (i, (annotation, result)) in annotations.iter().zip(built).enumerate() {
        let built = match result {
            Ok(b) => b,
            Err(e) => {
                failures.push(CliError::from(e));
                continue;
            }
        };
        let seed = a.stream.seed.wrapping_add(i as u64);
        match harness::select_rl_window(annotation, &built, seed) {
            Ok(w) => {
                let spans = w.clip_spans(&built.gold_spans);
                let line = to_line(&WindowRecord {
                    video_id: &built.video_id,
                    window: &w,
                    spans,
                });
                emit(out, &line)?;
            }
            Err(e) => failures.push(CliError::Validation(format!("{}: {e}", built.video_id))),
        }
    }
    report_failures(failures)
}

fn render<W: Write>(a: RenderArgs, out: &mut W) -> Result<(), CliError> {
    let transcript = read_transcript(&a.transcript)?;
    let text = transcript
        .render()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    emit(out, &text)
}
