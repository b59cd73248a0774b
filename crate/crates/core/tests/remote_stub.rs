mod common;

use common::{canned, completion, small_world, Stub};
use llmhd::denoise::ScheduleConfig;
use llmhd::scorer::{remote_call, CachedBackend, RemoteBackend, ScoreCache, ScorerError};
use llmhd::trainer::{train, Ablation, RunConfig, RunReport};

fn cfg(ablation: &str) -> RunConfig {
    RunConfig {
        dim: 8,
        batch_size: 128,
        max_epochs: 2,
        learning_rate: 0.01,
        seed: 5,
        scorer_parallelism: 4,
        schedule: ScheduleConfig {
            alpha: 2,
            eps_l_max: 0.2,
            ..ScheduleConfig::default()
        },
        ablation: Ablation::parse(ablation).unwrap(),
        ..RunConfig::default()
    }
}

fn run(ablation: &str, backend: Option<&dyn llmhd::scorer::PreferenceBackend>) -> RunReport {
    let world = small_world(1);
    let split = world.split([0.8, 0.1, 0.1], 1).unwrap();
    train(&cfg(ablation), &split, &world.profiles, backend).unwrap().report
}

#[test]
fn canned_xml_replies_train_end_to_end() {
    let stub = Stub::spawn(|_, body| canned(body));
    let backend = RemoteBackend::new(stub.endpoint()).unwrap();
    let report = run("LD,LMS", Some(&backend));
    assert_eq!(report.epochs.len(), 2);
    assert_eq!(report.summaries, 100);
    assert_eq!(report.summary_failures, 0);
    let scored: usize = report.epochs.iter().map(|e| e.hard_candidates).sum();
    assert!(scored > 0);
    assert!(report.epochs.iter().all(|e| e.scoring_failures == 0));
    assert!(report.loss_trajectory().iter().all(|l| l.is_finite()));
    assert!(stub.hits() >= 100 + scored);
}

#[test]
fn server_error_then_success_is_retried() {
    let stub = Stub::spawn(|n, _| {
        if n == 0 {
            (500, "overloaded".into())
        } else {
            (200, completion("<score>9</score>"))
        }
    });
    let reply = remote_call(&stub.endpoint(), "rate this").unwrap();
    assert_eq!(reply, "<score>9</score>");
    assert_eq!(stub.hits(), 2);
}

#[test]
fn client_error_is_not_retried() {
    let stub = Stub::spawn(|_, _| (400, "bad request".into()));
    match remote_call(&stub.endpoint(), "x") {
        Err(ScorerError::Rejected { status: 400, .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(stub.hits(), 1);
}

#[test]
fn permanent_failure_exhausts_retries() {
    let stub = Stub::spawn(|_, _| (503, String::new()));
    match remote_call(&stub.endpoint(), "x") {
        Err(e @ ScorerError::Unavailable { attempts: 3, .. }) => assert!(e.is_remote()),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(stub.hits(), 3);
}

#[test]
fn failing_endpoint_degrades_to_loss_dropping() {
    let stub = Stub::spawn(|_, _| (500, String::new()));
    let mut endpoint = stub.endpoint();
    endpoint.max_retries = 0;
    let backend = RemoteBackend::new(endpoint).unwrap();
    let degraded = run("LD,VS,LMS,PU", Some(&backend));
    assert_eq!(degraded.summaries, 0);
    assert_eq!(degraded.summary_failures, 100);
    assert_eq!(degraded.noise.rescued, 0);
    let baseline = run("LD", None);
    assert_eq!(degraded.loss_trajectory(), baseline.loss_trajectory());
}

#[test]
fn malformed_scores_count_as_failures() {
    let stub = Stub::spawn(|_, body| {
        if body.contains("summarized preference") {
            canned(body)
        } else {
            (200, completion("I would rather not say."))
        }
    });
    let backend = RemoteBackend::new(stub.endpoint()).unwrap();
    let report = run("LD,LMS", Some(&backend));
    let failures: usize = report.epochs.iter().map(|e| e.scoring_failures).sum();
    let candidates: usize = report.epochs.iter().map(|e| e.hard_candidates).sum();
    assert!(candidates > 0);
    assert!(failures > 0);
    assert_eq!(report.noise.rescued, 0);
}

#[test]
fn cache_serves_a_repeated_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scores.jsonl");
    let stub = Stub::spawn(|_, body| canned(body));

    let first = {
        let backend = CachedBackend::new(RemoteBackend::new(stub.endpoint()).unwrap(), ScoreCache::open(&path).unwrap());
        run("LD,LMS", Some(&backend))
    };
    let after_first = stub.hits();
    let second = {
        let backend = CachedBackend::new(RemoteBackend::new(stub.endpoint()).unwrap(), ScoreCache::open(&path).unwrap());
        run("LD,LMS", Some(&backend))
    };
    assert_eq!(first.loss_trajectory(), second.loss_trajectory());
    // only the summaries go out again
    assert_eq!(stub.hits() - after_first, 100);
}
