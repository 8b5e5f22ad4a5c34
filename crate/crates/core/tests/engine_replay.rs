//! The engine end to end: file-backed logging, replay, restart and tamper
//! detection.

mod common;

use common::*;
use cytotune_core::event_log::{read_log, EventBody};
use cytotune_core::{
    engine, CellClass, Clock, Engine, EngineError, EngineSetup, InterventionAction, InterventionLog,
    ReplayError, StepEdit, NUM_CLASSES,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(seed: u64) -> EngineSetup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dataset = random_dataset(&mut rng, 150, 3, 5, 50);
    let mut s = EngineSetup::new(unit_schema(3), dataset);
    s.review = (0..40).map(|k| random_sample(&mut rng, &format!("rv{k:02}"), 3)).collect();
    s
}

/// Drives `n` random valid interventions of every kind through `engine`.
fn drive(engine: &mut Engine, rng: &mut ChaCha8Rng, n: usize) {
    let ids: Vec<String> = engine.samples().map(|s| s.id.clone()).collect();
    let mut done = 0;
    while done < n {
        let sid = &ids[rng.random_range(0..ids.len())];
        let a = engine.assess(sid).unwrap();
        let other = CellClass::ALL[(a.prediction.predicted.index() + rng.random_range(1..NUM_CLASSES)) % NUM_CLASSES];
        let step = (!a.explanation.steps.is_empty())
            .then(|| a.explanation.steps[rng.random_range(0..a.explanation.steps.len())].node_id);
        let action = match (rng.random_range(0..4), step) {
            (0, _) => InterventionAction::Accept,
            (2, Some(node)) => InterventionAction::ExplanationEdit {
                edits: vec![StepEdit::threshold(node, rng.random())],
            },
            (3, Some(node)) => InterventionAction::Combined {
                new_label: other,
                edits: vec![StepEdit::sample_value(node, rng.random())],
            },
            _ => InterventionAction::LabelOverride { new_label: other },
        };
        let iv = intervention(&format!("iv{}", engine.interventions_total()), sid, a.model_version, action);
        engine.commit(iv).unwrap();
        done += 1;
    }
}

#[test]
fn replay_reproduces_the_live_hash() {
    for seed in 0..3 {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut live = Engine::start(setup(seed), InterventionLog::open(&path).unwrap(), Clock::stepped_from_epoch()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        drive(&mut live, &mut rng, 60);
        let events = read_log(&path).unwrap().into_result().unwrap();
        assert_eq!(events.len(), live.log().len());
        // one event per intervention, cadence retrains ride along
        assert_eq!(events.len(), 61);
        assert_eq!(events.iter().filter(|e| e.retrain.is_some()).count(), 6);
        assert_eq!(live.versions().len(), 1 + 60 + 6);
        let s = setup(seed);
        let base = s.train_base().unwrap();
        let replayed = engine::replay(s, base, &events).unwrap();
        assert_eq!(replayed.content_hash, live.current().content_hash);
        assert_eq!(replayed.version, live.current().version);
    }
}

#[test]
fn forced_retrains_replay_too() {
    let mut live = Engine::start(setup(9), InterventionLog::in_memory(), Clock::stepped_from_epoch()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    drive(&mut live, &mut rng, 4);
    let forced = live.retrain_now().unwrap();
    assert_eq!(forced.seq, 5);
    assert_eq!(forced.version.model.total_pseudo_mass(), 0.0);
    drive(&mut live, &mut rng, 12);
    assert_eq!(live.interventions_since_retrain(), 2);
    let events = live.log().events().to_vec();
    assert!(matches!(events[5].body, EventBody::Retrain(_)));
    assert!(events[15].retrain.is_some());
    let s = setup(9);
    let base = s.train_base().unwrap();
    assert_eq!(engine::replay(s, base, &events).unwrap().content_hash, live.current().content_hash);

    let mut dropped = events.clone();
    dropped[15].retrain = None;
    let s = setup(9);
    let base = s.train_base().unwrap();
    assert!(matches!(engine::replay(s, base, &dropped), Err(ReplayError::CorruptEvent { seq: 15, .. })));
}

#[test]
fn restart_resumes_from_the_log_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (hash, len) = {
        let mut e = Engine::start(setup(7), InterventionLog::open(&path).unwrap(), Clock::stepped_from_epoch()).unwrap();
        drive(&mut e, &mut rng, 15);
        (e.current().content_hash.clone(), e.log().len())
    };
    let mut again = Engine::start(setup(7), InterventionLog::open(&path).unwrap(), Clock::System).unwrap();
    assert_eq!(again.current().content_hash, hash);
    assert_eq!(again.interventions_total(), 15);
    assert_eq!(again.interventions_since_retrain(), 5);
    drive(&mut again, &mut rng, 5);
    let lines = std::fs::read_to_string(&path).unwrap().lines().count();
    assert_eq!(lines, len + 5);
}

#[test]
fn tampered_or_mismatched_logs_are_rejected() {
    let mut live = Engine::start(setup(1), InterventionLog::in_memory(), Clock::stepped_from_epoch()).unwrap();
    drive(&mut live, &mut ChaCha8Rng::seed_from_u64(1), 12);
    let events = live.log().events().to_vec();

    let mut tampered = events.clone();
    tampered[3].outcome.as_mut().unwrap().content_hash = "00".repeat(32);
    let s = setup(1);
    let base = s.train_base().unwrap();
    assert!(matches!(
        engine::replay(s, base, &tampered),
        Err(ReplayError::HashMismatch { seq: 3, .. })
    ));

    let other = setup(2);
    let base = other.train_base().unwrap();
    assert!(matches!(
        engine::replay(other, base, &events),
        Err(ReplayError::DatasetMismatch { .. }) | Err(ReplayError::HashMismatch { seq: 0, .. })
    ));

    let s = setup(1);
    let base = s.train_base().unwrap();
    assert!(matches!(engine::replay(s, base, &events[1..]), Err(ReplayError::MissingBootstrap)));
}

#[test]
fn rejected_interventions_leave_no_trace() {
    let mut e = Engine::start(setup(3), InterventionLog::in_memory(), Clock::stepped_from_epoch()).unwrap();
    let sid = e.samples().next().unwrap().id.clone();
    let before = e.log().len();
    let stale = intervention("x", &sid, 5, InterventionAction::Accept);
    assert!(e.commit(stale).is_err());
    let bad = intervention("y", &sid, 0, InterventionAction::ExplanationEdit { edits: vec![StepEdit::threshold(10_000, 0.5)] });
    let err = e.commit(bad).unwrap_err();
    assert!(err.violations().is_some());
    let unknown = intervention("z", "nope", 0, InterventionAction::Accept);
    assert!(matches!(e.commit(unknown), Err(EngineError::UnknownSample(_))));
    assert_eq!(e.log().len(), before);
    assert_eq!(e.current().version, 0);

    e.commit(intervention("ok", &sid, 0, InterventionAction::Accept)).unwrap();
    let dup = intervention("ok", &sid, 1, InterventionAction::Accept);
    assert!(matches!(e.commit(dup), Err(EngineError::DuplicateIntervention(_))));
    assert_eq!(e.log().len(), before + 1);
}

#[test]
fn a_thousand_appends_stay_gapless_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    let mut s = setup(4);
    s.policy.retrain_every_n = 2000;
    let mut e = Engine::start(s, InterventionLog::open(&path).unwrap(), Clock::stepped_from_epoch()).unwrap();
    let ids: Vec<String> = e.samples().map(|s| s.id.clone()).collect();
    for k in 0..1000 {
        let v = e.current().version;
        e.commit(intervention(&format!("a{k}"), &ids[k % ids.len()], v, InterventionAction::Accept)).unwrap();
    }
    let events = read_log(&path).unwrap().into_result().unwrap();
    assert_eq!(events.len(), 1001);
    assert!(events.iter().enumerate().all(|(i, ev)| ev.seq == i as u64));
    // accepts change nothing on the direct path
    assert_eq!(e.current().content_hash, e.versions()[0].content_hash);
}
