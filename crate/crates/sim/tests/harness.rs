use std::path::Path;
use std::process::Command;

use cytotune_core::{CellClass, FeatureSchema, InterventionLog};
use cytotune_sim::backend::{Backend, Http};
use cytotune_sim::experiment::{ExperimentOutcome, SeedOutcome};
use cytotune_sim::expert::{ExpertKind, ExpertPolicy};
use cytotune_sim::generator::{gen_dataset, write_dataset, GeneratorSpec};
use cytotune_sim::session::{run_session, SessionSpec};
use cytotune_sim::{in_process, review_pool, ReviewPool};

fn schema() -> FeatureSchema {
    FeatureSchema::morphological()
}

fn small(seed: u64, noise: f64) -> GeneratorSpec {
    GeneratorSpec {
        seed,
        n_train: 300,
        n_holdout: 100,
        n_review: 50,
        label_noise_rate: noise,
        ..GeneratorSpec::default()
    }
}

#[test]
fn noiseless_generation_keeps_true_labels() {
    let data = gen_dataset(&small(1, 0.0), &schema()).unwrap();
    assert_eq!(data.flipped, 0);
    for s in &data.train {
        assert_eq!(s.true_label, data.oracle_label(&s.id));
    }
    assert!(data.review.iter().all(|s| s.true_label.is_none()));
    assert_eq!(data.oracle.len(), 350);
}

#[test]
fn noise_rate_matches_binomial_count() {
    for seed in 0..5 {
        let spec = GeneratorSpec {
            seed,
            ..GeneratorSpec::default()
        };
        let data = gen_dataset(&spec, &schema()).unwrap();
        let mismatched = data
            .train
            .iter()
            .filter(|s| s.true_label != data.oracle_label(&s.id))
            .count();
        assert_eq!(mismatched, data.flipped);
        // 1000 draws at p = 0.3: sd is about 14.5, so 40 is beyond 2.7 sd
        assert!((260..=340).contains(&mismatched), "seed {seed}: {mismatched}");
    }
}

#[test]
fn generation_is_deterministic_and_in_range() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let data = gen_dataset(&small(7, 0.3), &schema()).unwrap();
    write_dataset(a.path(), &schema(), &data).unwrap();
    write_dataset(b.path(), &schema(), &gen_dataset(&small(7, 0.3), &schema()).unwrap()).unwrap();
    for f in ["train.csv", "holdout.csv", "review.csv", "oracle.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let other = gen_dataset(&small(8, 0.3), &schema()).unwrap();
    assert_ne!(other.train, data.train);
    for s in data.train.iter().chain(&data.holdout) {
        assert!(cytotune_core::validate_sample(s, &schema()).is_empty());
    }
}

#[test]
fn generator_spec_is_validated() {
    let mut spec = small(0, 0.5);
    assert!(gen_dataset(&spec, &schema()).is_err());
    spec.label_noise_rate = 0.1;
    spec.profiles[1].mean = spec.profiles[0].mean.clone();
    assert!(gen_dataset(&spec, &schema()).is_err());
    let mut spec = small(0, 0.1);
    spec.profiles[2].sd.pop();
    assert!(gen_dataset(&spec, &schema()).is_err());
}

fn session(kind: ExpertKind, k: usize, seed: u64) -> SessionSpec {
    SessionSpec {
        expert: ExpertPolicy { kind, error_rate: 0.0 },
        k_interventions: k,
        seed,
        pool: ReviewPool::All,
        ..SessionSpec::default()
    }
}

#[test]
fn empty_session_has_one_version_and_one_row() {
    let data = gen_dataset(&small(2, 0.3), &schema()).unwrap();
    let mut b = in_process(&data, &schema(), &Default::default(), &Default::default(), InterventionLog::in_memory()).unwrap();
    let r = run_session(&mut b, &review_pool(&data, ReviewPool::All), &session(ExpertKind::Mixed, 0, 0)).unwrap();
    assert!(r.accuracy_curve.is_empty());
    assert_eq!(r.versions, 1);
    let mut csv = Vec::new();
    r.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 2);
}

#[test]
fn accept_all_below_the_cadence_keeps_the_tree() {
    let data = gen_dataset(&small(3, 0.3), &schema()).unwrap();
    let mut b = in_process(&data, &schema(), &Default::default(), &Default::default(), InterventionLog::in_memory()).unwrap();
    let start = b.current_hash().unwrap();
    let r = run_session(&mut b, &review_pool(&data, ReviewPool::All), &session(ExpertKind::AcceptAll, 9, 0)).unwrap();
    assert_eq!(r.final_hash, start);
    assert_eq!(r.versions, 10);
    assert_eq!(r.actions.accept, 9);
}

#[test]
fn report_rows_and_determinism() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let data = gen_dataset(&small(4, 0.3), &schema()).unwrap();
        let log = InterventionLog::open(dir.path().join("log.jsonl")).unwrap();
        let mut b = in_process(&data, &schema(), &Default::default(), &Default::default(), log).unwrap();
        let spec = SessionSpec {
            pool: ReviewPool::Training,
            ..session(ExpertKind::Mixed, 60, 4)
        };
        let r = run_session(&mut b, &review_pool(&data, ReviewPool::Training), &spec).unwrap();
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        (csv, std::fs::read(dir.path().join("log.jsonl")).unwrap(), r)
    };
    let (csv_a, log_a, r) = run();
    let (csv_b, log_b, _) = run();
    assert_eq!(csv_a, csv_b);
    assert_eq!(log_a, log_b);
    let text = String::from_utf8(csv_a).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 61);
    for (i, row) in rows.iter().enumerate() {
        assert!(row.starts_with(&format!("{i},")));
    }
    assert_eq!(r.actions.accept + r.actions.label_override + r.actions.explanation_edit + r.actions.combined, 60);
    assert!(r.actions.explanation_edit + r.actions.combined > 0);
    assert_eq!(r.retrains, 6);
}

#[test]
fn expert_errors_are_injected_at_the_given_rate() {
    use rand::SeedableRng;
    let p = ExpertPolicy {
        kind: ExpertKind::AlwaysOverrideWhenWrong,
        error_rate: 0.25,
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let wrong = (0..4000)
        .filter(|_| p.belief(CellClass::Basal, &mut rng) != CellClass::Basal)
        .count();
    assert!((900..=1100).contains(&wrong), "{wrong}");
}

#[test]
fn experiment_summary_rows() {
    let o = ExperimentOutcome {
        rows: vec![
            SeedOutcome { seed: 0, before: 0.5, after: 0.6 },
            SeedOutcome { seed: 1, before: 0.5, after: 0.5 },
            SeedOutcome { seed: 2, before: 0.7, after: 0.75 },
        ],
    };
    assert_eq!(o.strictly_better(), 2);
    assert_eq!(o.not_worse(), 3);
    assert!((o.median_improvement() - 0.05).abs() < 1e-12);
    assert!(!o.passes());
    let mut out = Vec::new();
    o.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().last().unwrap(), "median,,,0.050000");
}

fn cytotune(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cytotune")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn cli_simulate_replay_verify_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = dir.path().join("sim.toml");
    std::fs::write(&cfg, "[generator]\nn_train = 200\nn_holdout = 60\n[session]\nk_interventions = 30\n").unwrap();
    let o = cytotune(&["simulate", "--seed", "5", "--config", p(&cfg), "--policy", "mixed", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 32);
    assert!(std::fs::read_to_string(out.join("summary.txt")).unwrap().contains("interventions: 30"));

    let svc = out.join("service.toml");
    let o = cytotune(&["replay-verify", "--config", p(&svc)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let rebuilt = dir.path().join("rebuilt.csv");
    let o = cytotune(&["report", "--config", p(&svc), "--out", p(&rebuilt)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&rebuilt).unwrap(), report);

    // a second run into the same directory refuses to reuse the log
    let o = cytotune(&["simulate", "--seed", "5", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));

    let log = out.join("interventions.jsonl");
    let text = std::fs::read_to_string(&log).unwrap();
    let tampered: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 7 {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v["outcome"]["content_hash"] = "ff".repeat(32).into();
                v.to_string()
            } else {
                l.to_string()
            }
        })
        .collect();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, tampered.join("\n") + "\n").unwrap();
    let o = cytotune(&["replay-verify", "--config", p(&svc), "--log", p(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seq 7"));

    std::fs::write(&bad, &text[..text.len() - 20]).unwrap();
    let o = cytotune(&["replay-verify", "--config", p(&svc), "--log", p(&bad)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn cli_gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let o = cytotune(&["gen", "--seed", "3", "--n-train", "120", "--n-holdout", "30", "--out", p(d)]);
        assert!(o.status.success());
    }
    for f in ["train.csv", "holdout.csv", "oracle.csv", "service.toml"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    assert_eq!(cytotune(&["gen", "--seed", "3", "--noise", "0.7", "--out", p(&a)]).status.code(), Some(1));
}

/// Same session against the HTTP service and in-process gives the same curve,
/// and the curve matches what `report` rebuilds from the service's log.
#[test]
fn service_mode_matches_in_process() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let o = cytotune(&["gen", "--seed", "6", "--n-train", "200", "--n-holdout", "60", "--n-review", "20", "--out", p(&data_dir)]);
    assert!(o.status.success());
    let config = cytotune_server::ServiceConfig::load(data_dir.join("service.toml")).unwrap();
    let state = cytotune_server::build_state(&config).unwrap();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let (tx, rx) = std::sync::mpsc::channel();
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let mut cfg = config.clone();
    cfg.server.port = 0;
    let server = rt.spawn(async move {
        cytotune_server::serve(&cfg, state, move |addr| tx.send(addr).unwrap(), async {
            let _ = stop_rx.await;
        })
        .await
        .unwrap();
    });
    let addr = rx.recv().unwrap();

    let spec = session(ExpertKind::Mixed, 24, 6);
    let oracle = cytotune_sim::generator::read_oracle(&data_dir.join("oracle.csv")).unwrap();
    let mut http = Http::new(&format!("http://{addr}"));
    let remote = run_session(&mut http, &oracle, &spec).unwrap();

    let gen = GeneratorSpec {
        seed: 6,
        n_train: 200,
        n_holdout: 60,
        n_review: 20,
        ..GeneratorSpec::default()
    };
    let data = gen_dataset(&gen, &schema()).unwrap();
    let mut local = in_process(&data, &schema(), &Default::default(), &Default::default(), InterventionLog::in_memory()).unwrap();
    let here = run_session(&mut local, &review_pool(&data, ReviewPool::All), &spec).unwrap();
    assert_eq!(remote.accuracy_curve, here.accuracy_curve);
    assert_eq!(remote.final_hash, here.final_hash);
    assert_eq!(remote.actions, here.actions);

    stop_tx.send(()).unwrap();
    rt.block_on(server).unwrap();
    let rebuilt = dir.path().join("rebuilt.csv");
    let o = cytotune(&["report", "--config", p(&data_dir.join("service.toml")), "--out", p(&rebuilt)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut expected = Vec::new();
    remote.write_csv(&mut expected).unwrap();
    assert_eq!(std::fs::read(&rebuilt).unwrap(), expected);
}
