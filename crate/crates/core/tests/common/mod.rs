#![allow(dead_code)]

use std::collections::HashSet;

use duet_core::dataset::{QaList, Scene, VideoAnnotation};
use duet_core::metrics::{GoldSpan, ReplyEvent, ScoredReply};
use duet_core::protocol::{StreamConfig, NO_REPLY};
use rand::seq::SliceRandom;
use rand::Rng;

const WORDS: &[&str] = &[
    "a", "man", "woman", "dog", "runs", "sits", "kitchen", "red", "car", "opens", "door", "eggs",
    "fried", "soup", "table", "walks", "street", "phone", "the", "is", "talking", "book", "reads",
];

pub fn words(rng: &mut impl Rng, lo: usize, hi: usize) -> String {
    let n = rng.gen_range(lo..=hi);
    (0..n)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn random_config(rng: &mut impl Rng) -> StreamConfig {
    let interval = *[0.5, 1.0, 2.0].choose(rng).unwrap();
    StreamConfig::new(interval, rng.gen_range(1..=3)).unwrap()
}

/// Sorted, non-overlapping scenes with gaps, 1 to 4 QA lists.
pub fn random_annotation(rng: &mut impl Rng, id: &str) -> VideoAnnotation {
    let duration = rng.gen_range(20.0..120.0_f64).round();
    let n = rng.gen_range(1..=6);
    let mut cuts: Vec<f64> = (0..2 * n)
        .map(|_| (rng.gen_range(0.0..duration) * 4.0).round() / 4.0)
        .collect();
    cuts.sort_by(f64::total_cmp);
    let scenes: Vec<Scene> = cuts
        .chunks(2)
        .filter(|c| c[0] < c[1])
        .map(|c| Scene {
            start: c[0],
            end: c[1],
            caption: String::new(),
        })
        .collect();
    let scenes = if scenes.is_empty() {
        vec![Scene {
            start: 0.0,
            end: duration / 2.0,
            caption: String::new(),
        }]
    } else {
        scenes
    };
    let qa_lists = (0..rng.gen_range(1..=4))
        .map(|q| {
            let mut answers: Vec<String> = scenes
                .iter()
                .enumerate()
                .map(|(i, _)| {
                    if rng.gen_bool(0.3) {
                        NO_REPLY.to_string()
                    } else {
                        format!("q{q} s{i} {}", words(rng, 1, 5))
                    }
                })
                .collect();
            if answers.iter().all(|a| a == NO_REPLY) {
                let i = rng.gen_range(0..answers.len());
                answers[i] = format!("q{q} s{i} {}", words(rng, 1, 5));
            }
            QaList {
                question: format!("question {q}: {}?", words(rng, 2, 5)),
                answers,
            }
        })
        .collect();
    VideoAnnotation {
        video_id: id.to_string(),
        duration,
        scenes,
        qa_lists,
    }
}

/// Numerically integrates the score step function over the span, one
/// constant piece at a time, looking up each piece's level from scratch.
pub fn brute_pauc(span: &GoldSpan, scored: &[ScoredReply], max_score: f64) -> f64 {
    let mut cuts: Vec<f64> = vec![span.t_start, span.t_end];
    cuts.extend(scored.iter().map(|r| r.tau));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut area = 0.0;
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let level = scored
            .iter()
            .filter(|r| r.tau <= mid)
            .max_by(|a, b| a.tau.total_cmp(&b.tau))
            .map_or(0.5, |r| r.s);
        area += level * (w[1] - w[0]);
    }
    area / ((span.t_end - span.t_start) * max_score)
}

/// Score for a single perfect reply emitted at `slot_time`.
pub fn closed_form_pauc(span: &GoldSpan, slot_time: f64, max_score: f64) -> f64 {
    ((slot_time - span.t_start) * 0.5 + (span.t_end - slot_time) * max_score)
        / ((span.t_end - span.t_start) * max_score)
}

/// Random strictly-increasing reply times strictly inside the span.
pub fn random_scored(
    rng: &mut impl Rng,
    span: &GoldSpan,
    max_score: f64,
    n: usize,
) -> Vec<ScoredReply> {
    let mut taus: Vec<f64> = (0..n)
        .map(|_| rng.gen_range(span.t_start..span.t_end))
        .filter(|&t| t > span.t_start)
        .collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    taus.into_iter()
        .map(|tau| ScoredReply {
            tau,
            s: rng.gen_range(0.0..=max_score),
        })
        .collect()
}

pub fn random_span(rng: &mut impl Rng) -> GoldSpan {
    let start = rng.gen_range(0.0..100.0);
    let width = rng.gen_range(0.5..40.0);
    GoldSpan::new("gold", start, start + width)
}

fn token_set(text: &str) -> HashSet<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| !c.is_ascii_punctuation())
                .collect::<String>()
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Brute-force coverage: share of the reply's distinct tokens seen in any
/// earlier reply, against the default 0.8 threshold.
pub fn brute_covered(replies: &[ReplyEvent], p: usize) -> bool {
    if p == 0 {
        return false;
    }
    let mine = token_set(&replies[p].text);
    if mine.is_empty() {
        return true;
    }
    let mut seen = HashSet::new();
    for r in &replies[..p] {
        seen.extend(token_set(&r.text));
    }
    let hit = mine.iter().filter(|t| seen.contains(*t)).count();
    hit * 5 >= mine.len() * 4
}

pub fn brute_prefix_flag(replies: &[ReplyEvent], p: usize, threshold: usize) -> bool {
    let mine: Vec<char> = replies[p].text.chars().collect();
    replies[..p].iter().any(|r| {
        let other: Vec<char> = r.text.chars().collect();
        let mut k = 0;
        while k < mine.len() && k < other.len() && mine[k] == other[k] {
            k += 1;
        }
        k > threshold
    })
}

pub fn random_replies(rng: &mut impl Rng, n: usize) -> Vec<ReplyEvent> {
    let mut t = 0.0;
    let mut out: Vec<ReplyEvent> = Vec::new();
    for _ in 0..n {
        t += rng.gen_range(0.5..5.0);
        let text = match rng.gen_range(0..4) {
            0 if !out.is_empty() => out.choose(rng).unwrap().text.clone(),
            1 if !out.is_empty() => {
                format!("{} {}", out.choose(rng).unwrap().text, words(rng, 1, 3))
            }
            _ => words(rng, 1, 8),
        };
        out.push(ReplyEvent::new(text, t));
    }
    out
}

/// Disjoint sorted spans over roughly the same time range as the replies.
pub fn random_spans(rng: &mut impl Rng, n: usize) -> Vec<GoldSpan> {
    let mut t = 0.0;
    (0..n)
        .map(|i| {
            t += rng.gen_range(0.0..6.0);
            let start = t;
            t += rng.gen_range(0.5..10.0);
            GoldSpan::new(format!("gold {i}"), start, t)
        })
        .collect()
}
