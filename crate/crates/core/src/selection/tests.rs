use std::sync::atomic::{AtomicUsize, Ordering};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dialogue::{
    generate_corpus, Role, RuleClassifier, SynthConfig, Turn, Utterance, Vocabulary,
};
use crate::policy::{train_mle, MleConfig, Policy};

const CREDIBILITY: &str =
    "save the children is an international organization that helps kids in developing countries get health care and education";

fn vocab() -> Vocabulary {
    generate_corpus(&SynthConfig::new(0, 1)).vocab
}

fn turn(role: Role, text: &str, vocab: &Vocabulary) -> Turn {
    Turn::classified(role, Utterance::encode(text, vocab).unwrap(), &RuleClassifier)
}

fn history(vocab: &Vocabulary) -> Vec<Turn> {
    vec![
        turn(Role::Sys, "hello how are you doing today", vocab),
        turn(Role::Usr, "hello i am good", vocab),
        turn(Role::Sys, CREDIBILITY, vocab),
        turn(Role::Usr, "that is really sad to hear", vocab),
    ]
}

fn candidate(text: &str, logprob: f64, vocab: &Vocabulary) -> Candidate {
    Candidate::new(Utterance::encode(text, vocab).unwrap(), logprob)
}

/// Cycles through fixed texts and counts generations.
struct Scripted {
    vocab: Vocabulary,
    texts: Vec<&'static str>,
    calls: AtomicUsize,
}

impl Scripted {
    fn new(texts: Vec<&'static str>) -> Self {
        Self {
            vocab: vocab(),
            texts,
            calls: AtomicUsize::new(0),
        }
    }
}

impl ResponseGenerator for Scripted {
    fn generate(&self, _: &Context<'_>, _: &DecodingConfig, _: u64) -> Result<Candidate> {
        let k = self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(candidate(self.texts[k % self.texts.len()], -(k as f64) - 1.0, &self.vocab))
    }

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }
}

#[test]
fn filter_keeps_passing_in_order() {
    let v = vocab();
    let c = |t| candidate(t, -1.0, &v);
    let annotated = vec![
        (c("a"), CandidateStatus::PassStrategy),
        (c("b"), CandidateStatus::Repetition),
        (c("c"), CandidateStatus::PassNonStrategy),
    ];
    let kept = filter_candidates(&annotated);
    assert_eq!(kept, vec![annotated[0].0.clone(), annotated[2].0.clone()]);

    let all_bad: Vec<_> = annotated.iter().map(|(c, _)| (c.clone(), CandidateStatus::Repetition)).collect();
    assert!(filter_candidates(&all_bad).is_empty());
    let all_pass: Vec<_> = annotated.iter().map(|(c, _)| (c.clone(), CandidateStatus::PassNonStrategy)).collect();
    assert_eq!(filter_candidates(&all_pass).len(), 3);
}

#[test]
fn features_have_fixed_length_and_named_flags() {
    let v = vocab();
    let h = history(&v);
    let ctx = Context::replay(&h);
    let strategy = candidate("many kids are suffering from hunger and disease and they really need our help right now", -4.0, &v);
    let plain = candidate("hello i am good", -2.0, &v);
    let twin = plain.clone();
    let cfg = DetectorConfig::default();

    let x = imitator_features(&ctx, &strategy, &[&plain], &cfg);
    assert_eq!(x.len(), IMITATOR_DIM);
    assert_eq!(x[2], 1.0);
    assert_eq!(x[IMITATOR_DIM - 3], 0.0);
    assert_eq!(x[IMITATOR_DIM - 1], 1.0);

    let y = imitator_features(&ctx, &plain, &[&twin, &strategy], &cfg);
    assert_eq!(y.len(), IMITATOR_DIM);
    assert_eq!(y[2], 0.0);
    assert_eq!(y[IMITATOR_DIM - 3], 1.0);
    // exactly one act coordinate is hot
    assert_eq!(y[5..5 + 18].iter().sum::<f64>(), 1.0);

    let rep = candidate(CREDIBILITY, -3.0, &v);
    assert_eq!(imitator_features(&ctx, &rep, &[], &cfg)[3], 1.0);
}

#[test]
fn contradiction_count_feature() {
    let v = vocab();
    let mut h = history(&v);
    h.push(turn(Role::Sys, "would you like to donate some of your payment to save the children", &v));
    h.push(turn(Role::Usr, "i cant donate right now sorry", &v));
    let ctx = Context::replay(&h);
    let thanks = candidate("thank you so much for your donation the kids will really appreciate it", -3.0, &v);
    let x = imitator_features(&ctx, &thanks, &[], &DetectorConfig::default());
    assert_eq!(x[4], 1.0);
}

#[test]
fn zero_imitator_scores_one_half() {
    let imitator = ImitatorParams::zeros();
    for x in [vec![0.0; IMITATOR_DIM], vec![3.5; IMITATOR_DIM]] {
        assert_eq!(imitator.score(&x), 0.5);
    }
}

#[test]
fn imitator_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xs: Vec<Vec<f64>> = (0..40)
        .map(|_| (0..IMITATOR_DIM).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let ys: Vec<f64> = (0..40).map(|_| rng.random_range(0..2) as f64).collect();
    let w: Vec<f64> = (0..IMITATOR_DIM).map(|_| rng.random_range(-0.5..0.5)).collect();
    let (_, grad) = imitator_loss(&w, &xs, &ys, 0.01);
    let h = 1e-5;
    for _ in 0..20 {
        let k = rng.random_range(0..IMITATOR_DIM);
        let (mut wp, mut wm) = (w.clone(), w.clone());
        wp[k] += h;
        wm[k] -= h;
        let fd = (imitator_loss(&wp, &xs, &ys, 0.01).0 - imitator_loss(&wm, &xs, &ys, 0.01).0) / (2.0 * h);
        let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-8);
        assert!(rel < 1e-4, "coordinate {k}: fd {fd} analytic {}", grad[k]);
    }
}

/// Records with random features labeled by `rule`, flipping with `noise`.
fn random_demos(n: usize, rule: &[f64], noise: f64, seed: u64) -> Vec<DemoRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|r| DemoRecord {
            v: 1,
            session_id: "s".into(),
            turn_index: r,
            context_digest: String::new(),
            candidates: (0..10)
                .map(|_| {
                    let mut x: Vec<f64> = (0..IMITATOR_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
                    x[IMITATOR_DIM - 1] = 1.0;
                    let z: f64 = rule.iter().zip(&x).map(|(a, b)| a * b).sum();
                    let flip = rng.random_bool(noise);
                    DemoCandidate {
                        text: String::new(),
                        tokens: vec![1],
                        selected: ((z > 0.0) != flip) as u8,
                        features: x,
                    }
                })
                .collect(),
            timestamp: 0,
        })
        .collect()
}

fn rule() -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    (0..IMITATOR_DIM).map(|_| rng.random_range(-2.0..2.0)).collect()
}

#[test]
fn imitator_recovers_a_separable_rule() {
    let demos = random_demos(100, &rule(), 0.0, 1);
    let (params, acc) = train_imitator(&demos, &ImitatorTrainConfig::default()).unwrap();
    assert!(acc >= 0.95, "{acc}");
    params.validate().unwrap();
}

#[test]
fn imitator_training_is_deterministic() {
    let demos = random_demos(30, &rule(), 0.1, 2);
    let cfg = ImitatorTrainConfig { epochs: 50, ..Default::default() };
    assert_eq!(train_imitator(&demos, &cfg).unwrap(), train_imitator(&demos, &cfg).unwrap());
}

#[test]
fn imitator_rejects_single_class_and_tiny_input() {
    let mut demos = random_demos(10, &rule(), 0.0, 3);
    for d in &mut demos {
        for c in &mut d.candidates {
            c.selected = 1;
        }
    }
    let err = train_imitator(&demos, &ImitatorTrainConfig::default()).unwrap_err();
    assert!(err.to_string().contains("single class"), "{err}");
    assert!(train_imitator(&demos[..1], &ImitatorTrainConfig::default()).is_err());
}

#[test]
fn imitator_save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("imitator.json");
    let mut p = ImitatorParams::zeros();
    p.weights[3] = -1.25;
    p.save(&path).unwrap();
    assert_eq!(ImitatorParams::load(&path).unwrap(), p);
    std::fs::write(&path, r#"{"weights":[1.0],"threshold":0.5}"#).unwrap();
    assert!(ImitatorParams::load(&path).is_err());
}

#[test]
fn all_repetitions_trigger_exactly_one_fallback() {
    let generator = Scripted::new(vec![CREDIBILITY]);
    let h = history(&generator.vocab);
    let ctx = Context::replay(&h);
    let decoding = DecodingConfig::default();
    let (response, trace) = select_response(
        &generator,
        &ImitatorParams::zeros(),
        &ctx,
        &decoding,
        &DetectorConfig::default(),
        7,
    )
    .unwrap();
    assert!(trace.ooc);
    assert_eq!(trace.chosen, None);
    assert_eq!(generator.calls.load(Ordering::SeqCst), decoding.n_candidates + 1);
    assert!(trace
        .candidates
        .iter()
        .all(|c| c.status == Some(CandidateStatus::Repetition)));
    assert_eq!(Some(&response), trace.fallback.as_ref());
}

#[test]
fn selection_returns_a_survivor_and_flags_low_scores() {
    let generator = Scripted::new(vec![
        CREDIBILITY,
        "would you like to donate some of your payment to save the children",
        "many kids are suffering from hunger and disease and they really need our help right now",
    ]);
    let h = history(&generator.vocab);
    let ctx = Context::replay(&h);
    let decoding = DecodingConfig { n_candidates: 3, ..Default::default() };
    let mut low = ImitatorParams::zeros();
    low.weights[IMITATOR_DIM - 1] = -5.0;
    let (response, trace) =
        select_response(&generator, &low, &ctx, &decoding, &DetectorConfig::default(), 0).unwrap();
    assert!(!trace.ooc);
    assert!(trace.below_threshold);
    assert!(response.status.unwrap().is_pass());
    // equal scores: the higher logprob (earlier scripted call) wins
    assert_eq!(trace.chosen, Some(1));
    assert!(trace.candidates[0].imitator_score.is_none());
}

#[test]
fn best_survivor_argmax_and_tie_breaks() {
    let v = vocab();
    let mut cs = vec![candidate("a", -7.0, &v), candidate("b", -5.0, &v), candidate("c", -5.0, &v)];
    cs[0].imitator_score = Some(0.9);
    cs[1].imitator_score = Some(0.6);
    cs[2].imitator_score = Some(0.6);
    assert_eq!(best_survivor(&cs, &[0, 1, 2]), Some(0));
    assert_eq!(best_survivor(&cs, &[1, 2]), Some(1));
    cs[2].logprob = -4.0;
    assert_eq!(best_survivor(&cs, &[1, 2]), Some(2));
    cs[0].imitator_score = Some(0.6);
    cs[0].logprob = -5.0;
    cs[2].logprob = -7.0;
    assert_eq!(best_survivor(&cs, &[0, 1, 2]), Some(0));
    assert_eq!(best_survivor(&cs, &[]), None);
}

fn small_record() -> DemoRecord {
    DemoRecord {
        v: 1,
        session_id: "abc".into(),
        turn_index: 2,
        context_digest: "00".into(),
        candidates: vec![DemoCandidate {
            text: "hi".into(),
            tokens: vec![0, 1],
            selected: 1,
            features: vec![0.0; IMITATOR_DIM],
        }],
        timestamp: 1,
    }
}

#[test]
fn demo_log_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("demos.jsonl");
    assert!(load_demos(&path).unwrap().is_empty());
    let rec = small_record();
    append_demo(&path, &rec).unwrap();
    append_demo(&path, &rec).unwrap();
    assert_eq!(load_demos(&path).unwrap(), vec![rec.clone(), rec.clone()]);

    let mut bad = rec.clone();
    bad.candidates[0].selected = 2;
    assert!(append_demo(&path, &bad).is_err());
    bad.candidates.clear();
    assert!(bad.validate().is_err());
    let mut old = rec;
    old.v = 0;
    assert!(old.validate().is_err());
}

#[test]
fn context_digest_depends_on_text_and_role() {
    let v = vocab();
    let h = history(&v);
    assert_eq!(context_digest(&h), context_digest(&h.clone()));
    assert_ne!(context_digest(&h), context_digest(&h[..3]));
    let mut swapped = h.clone();
    swapped[1].role = Role::Sys;
    assert_ne!(context_digest(&h), context_digest(&swapped));
}

fn small_policy() -> (Policy, crate::dialogue::Corpus) {
    let corpus = generate_corpus(&SynthConfig::new(4, 12));
    let (params, _) = train_mle(&corpus, None, &MleConfig { epochs: 30, ..Default::default() }).unwrap();
    (Policy::new(params, corpus.vocab.clone()).unwrap(), corpus)
}

#[test]
fn metrics_partition_and_determinism() {
    let (policy, corpus) = small_policy();
    let decoding = DecodingConfig { n_candidates: 4, ..Default::default() };
    let run = || {
        eval_metrics(&policy, &ImitatorParams::zeros(), &corpus, &decoding, &DetectorConfig::default(), 3).unwrap()
    };
    let m = run();
    assert_eq!(m, run());
    assert!((m.pass_rate + m.repetition_rate + m.inconsistency_rate - 1.0).abs() < 1e-12);
    for f in [m.ooc_rate, m.pass_rate, m.select_rate, m.strategy_rate, m.repetition_rate, m.inconsistency_rate] {
        assert!((0.0..=1.0).contains(&f));
    }
    assert_eq!(m.turns, corpus.sys_turn_count());
    assert_eq!(m.candidates, 4 * m.turns);
    // a zero imitator accepts every passing candidate
    if m.pass_rate > 0.0 {
        assert_eq!(m.select_rate, 1.0);
    }
}

#[test]
fn metrics_reject_empty_corpus() {
    let (policy, corpus) = small_policy();
    let empty = corpus.with_dialogues(Vec::new());
    let r = eval_metrics(
        &policy,
        &ImitatorParams::zeros(),
        &empty,
        &DecodingConfig::default(),
        &DetectorConfig::default(),
        0,
    );
    assert!(r.is_err());
}

#[test]
fn simulated_demos_follow_the_preference() {
    let (policy, corpus) = small_policy();
    let decoding = DecodingConfig { n_candidates: 5, ..Default::default() };
    let mut pref = ImitatorParams::zeros();
    pref.weights[2] = 1.0;
    pref.weights[IMITATOR_DIM - 1] = -0.5;
    let demos =
        simulate_demonstrations(&policy, &corpus, &pref, 0.0, 8, &decoding, &DetectorConfig::default(), 1).unwrap();
    assert_eq!(demos.len(), 8);
    for d in &demos {
        d.validate().unwrap();
        assert_eq!(d.candidates.len(), 5);
        for c in &d.candidates {
            assert_eq!(c.selected == 1, c.features[2] == 1.0);
        }
    }
    let again =
        simulate_demonstrations(&policy, &corpus, &pref, 0.0, 8, &decoding, &DetectorConfig::default(), 1).unwrap();
    assert_eq!(demos, again);
}

proptest! {
    #[test]
    fn filter_is_a_subset_and_idempotent(statuses in prop::collection::vec(0usize..5, 0..12)) {
        let v = vocab();
        let annotated: Vec<_> = statuses
            .iter()
            .enumerate()
            .map(|(i, &s)| (candidate(&format!("w{i}"), -(i as f64), &v), CandidateStatus::ALL[s]))
            .collect();
        let kept = filter_candidates(&annotated);
        prop_assert!(kept.iter().all(|c| annotated.iter().any(|(a, _)| a == c)));
        let again: Vec<_> = kept
            .iter()
            .map(|c| {
                let s = annotated.iter().find(|(a, _)| a == c).unwrap().1;
                (c.clone(), s)
            })
            .collect();
        prop_assert_eq!(filter_candidates(&again), kept);
    }

    #[test]
    fn scores_are_in_open_unit_interval_and_monotone(a in -30.0f64..30.0, b in -30.0f64..30.0) {
        let (sa, sb) = (sigmoid(a), sigmoid(b));
        prop_assert!(sa > 0.0 && sa < 1.0);
        if a < b {
            prop_assert!(sa <= sb);
        }
    }
}
