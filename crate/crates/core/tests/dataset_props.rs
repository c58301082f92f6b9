mod common;

use duet_core::dataset::{self, AnswerPlacement, BuiltDialogue, DialogueKind, EmitOptions};
use duet_core::protocol::{self, Role, StreamConfig, NO_REPLY};
use duet_core::scoring::ConcatSummarizer;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Non-sentinel assistant turns, as (timestamp, text).
fn spoken(d: &BuiltDialogue) -> Vec<(f64, String)> {
    let t = &d.transcript;
    t.turns
        .iter()
        .enumerate()
        .filter(|(_, turn)| turn.role == Role::Assistant && turn.text.as_deref() != Some(NO_REPLY))
        .map(|(i, turn)| (t.event_timestamp(i).unwrap(), turn.text.clone().unwrap()))
        .collect()
}

fn check_common(d: &BuiltDialogue, config: &StreamConfig) -> Result<(), TestCaseError> {
    prop_assert!(d.transcript.validate().is_ok());
    let raw = d.transcript.render().unwrap();
    prop_assert_eq!(
        protocol::parse(&raw, config).unwrap().turns,
        d.transcript.turns.clone()
    );
    prop_assert_eq!(
        d.transcript.total_frames(),
        (d.duration / config.frame_interval_secs + 1e-9).floor() as u64 + 1
    );
    prop_assert!(d.gold_spans.windows(2).all(|w| w[0].t_end <= w[1].t_start));
    // Silence everywhere except the placed answers.
    let mut planned: Vec<(f64, String)> = d
        .placements
        .iter()
        .zip(&d.gold_spans)
        .map(|(p, s)| (p.slot_time, s.gold_text.clone()))
        .collect();
    planned.sort_by(|a, b| a.0.total_cmp(&b.0));
    prop_assert_eq!(spoken(d), planned);
    let record = d.to_record();
    let line = serde_json::to_string(&record).unwrap();
    let back: dataset::DialogueRecord = serde_json::from_str(&line).unwrap();
    prop_assert_eq!(&back.into_dialogue().unwrap(), d);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn one_question_dialogues(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let annotation = common::random_annotation(&mut rng, "v");
        let config = common::random_config(&mut rng);
        for qa in 0..annotation.qa_lists.len() {
            let d = dataset::build_1qna(&annotation, qa, &config, AnswerPlacement::EndOfSpan).unwrap();
            check_common(&d, &config)?;
            let answers = annotation.qa_lists[qa].answers.iter().filter(|a| *a != NO_REPLY).count();
            prop_assert_eq!(d.gold_spans.len() + d.warnings.len(), answers);
            for (span, p) in d.gold_spans.iter().zip(&d.placements) {
                let scene = &annotation.scenes[p.scene.unwrap()];
                prop_assert_eq!((span.t_start, span.t_end), (scene.start, scene.end));
                prop_assert_eq!(&span.gold_text, &annotation.qa_lists[qa].answers[p.scene.unwrap()]);
                prop_assert!(span.t_start < p.slot_time && p.slot_time <= span.t_end);
                // Latest such slot: the next one would overshoot the scene.
                prop_assert!(p.slot_time + config.turn_span_secs() > span.t_end || p.slot + 1 == d.transcript.user_turns());
            }
        }
    }

    #[test]
    fn multi_question_dialogues(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let annotation = common::random_annotation(&mut rng, "v");
        let config = common::random_config(&mut rng);
        let times = dataset::sample_question_times(&annotation, &mut rng);
        let d = dataset::build_nqna(&annotation, &times, &ConcatSummarizer, &config).unwrap();
        check_common(&d, &config)?;
        prop_assert_eq!(d.question_schedule.len(), annotation.qa_lists.len());
        for (span, p) in d.gold_spans.iter().zip(&d.placements) {
            prop_assert!(span.t_start < p.slot_time && p.slot_time <= span.t_end);
            prop_assert!(span.t_start >= d.question_schedule[p.question].time);
            if let Some(next) = d.question_schedule.get(p.question + 1) {
                prop_assert!(p.slot_time < next.time);
                prop_assert!(span.t_end <= next.time);
            }
        }
    }
}

#[test]
fn single_question_nqna_matches_1qna() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..50 {
        let mut annotation = common::random_annotation(&mut rng, &format!("v{i}"));
        annotation.qa_lists.truncate(1);
        let config = common::random_config(&mut rng);
        let one = dataset::build_1qna(&annotation, 0, &config, AnswerPlacement::EndOfSpan).unwrap();
        let many = dataset::build_nqna(&annotation, &[0.0], &ConcatSummarizer, &config).unwrap();
        assert_eq!(one.transcript, many.transcript);
        assert_eq!(one.gold_spans, many.gold_spans);
    }
}

#[test]
fn emission_is_deterministic_and_split_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let annotations: Vec<_> = (0..40)
        .map(|i| common::random_annotation(&mut rng, &format!("v{i}")))
        .collect();
    let options = EmitOptions {
        seed: 5,
        ..EmitOptions::default()
    };
    let emit = |options: &EmitOptions| {
        let built: Vec<BuiltDialogue> =
            dataset::emit_dataset(&annotations, options, &ConcatSummarizer)
                .unwrap()
                .into_iter()
                .map(Result::unwrap)
                .collect();
        let mut bytes = Vec::new();
        dataset::write_dialogues(&mut bytes, &built).unwrap();
        (built, bytes)
    };
    let (built, first) = emit(&options);
    let (_, second) = emit(&options);
    assert_eq!(first, second);
    assert_eq!(
        built
            .iter()
            .filter(|d| d.kind == DialogueKind::OneQuestion)
            .count(),
        20
    );

    let all_one = EmitOptions {
        fraction_1qna: 1.0,
        ..options.clone()
    };
    assert!(emit(&all_one)
        .0
        .iter()
        .all(|d| d.kind == DialogueKind::OneQuestion));
    let bad = EmitOptions {
        fraction_1qna: 1.5,
        ..options
    };
    assert!(dataset::emit_dataset(&annotations, &bad, &ConcatSummarizer).is_err());
}

#[test]
fn large_split_is_exact() {
    let kinds = dataset::assign_kinds(1000, 0.5, 3);
    assert_eq!(
        kinds
            .iter()
            .filter(|k| **k == DialogueKind::OneQuestion)
            .count(),
        500
    );
    assert_eq!(kinds, dataset::assign_kinds(1000, 0.5, 3));
}
