mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::Stub;

fn llmhd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_llmhd"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn world_and_config(dir: &Path, extra: &str) {
    let o = llmhd(dir, &["synth", "--users", "40", "--items", "60", "--noise", "0.1", "--seed", "2", "--positives", "8", "--out", "world"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let config = format!(
        "[data]\nworld = \"world\"\n\n[train]\ndim = 8\nbatch_size = 64\nmax_epochs = 2\nlearning_rate = 0.01\n\n\
         [schedule]\nalpha = 5\neps_l_max = 0.2\n\n[scorer]\nlisted_weight = 0.3\n{extra}"
    );
    std::fs::write(dir.join("run.toml"), config).unwrap();
}

#[test]
fn train_twice_gives_identical_reports_and_evaluate_replays() {
    let dir = tempfile::tempdir().unwrap();
    world_and_config(dir.path(), "");
    for out in ["a", "b"] {
        let o = llmhd(dir.path(), &["train", "--config", "run.toml", "--seed", "3", "--out", out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let a = std::fs::read(dir.path().join("a/report.json")).unwrap();
    let b = std::fs::read(dir.path().join("b/report.json")).unwrap();
    assert_eq!(a, b);
    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["seed"], 3);
    assert_eq!(report["config"]["seed"], 3);

    let o = llmhd(dir.path(), &["evaluate", "--checkpoint", "a/best.json", "--split", "test", "--k", "5,10"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let printed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let stored: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("a/test_metrics.json")).unwrap()).unwrap();
    assert_eq!(printed["ndcg"], stored["ndcg"]);
}

#[test]
fn default_run_directory_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    world_and_config(dir.path(), "");
    let o = llmhd(dir.path(), &["train", "--config", "run.toml", "--ablation", "LD", "--seed", "9"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = dir.path().join("runs/LD-seed9");
    for f in ["config.toml", "report.json", "best.json", "best.bin", "epochs.csv", "test_metrics.json"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let snapshot = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(snapshot.contains("seed = 9"));
    assert!(snapshot.contains("preference_updates = false"));
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[schedule]\nalpha = 10\nbeta = 3\n").unwrap();
    let o = llmhd(dir.path(), &["train", "--config", "bad.toml"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("beta"), "{}", stderr(&o));
}

#[test]
fn invalid_values_and_arguments_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    world_and_config(dir.path(), "");
    let o = llmhd(dir.path(), &["train", "--config", "run.toml", "--ablation", "VS"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let o = llmhd(dir.path(), &["train", "--config", "run.toml", "--scorer", "psychic"]);
    assert_eq!(code(&o), 1);
    let o = llmhd(dir.path(), &["synth", "--users", "5", "--items", "4", "--positives", "10", "--out", "w"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let o = llmhd(dir.path(), &["--help"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn noise_sweep_writes_one_report_per_ratio_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    world_and_config(dir.path(), "");
    let cfg = std::fs::read_to_string(dir.path().join("run.toml")).unwrap().replace("max_epochs = 2", "max_epochs = 1");
    std::fs::write(dir.path().join("run.toml"), cfg).unwrap();
    let o = llmhd(
        dir.path(),
        &["noise-sweep", "--config", "run.toml", "--ratios", "0.05,0.10,0.15,0.20", "--seeds", "5", "--workers", "2", "--out", "sweep"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut reports = 0;
    for ratio in ["0.05", "0.10", "0.15", "0.20"] {
        for seed in 0..5 {
            let run = dir.path().join(format!("sweep/ratio-{ratio}/seed-{seed}/LD+VS+LMS+PU/report.json"));
            assert!(run.exists(), "{}", run.display());
            reports += 1;
        }
    }
    assert_eq!(reports, 20);
    let csv = std::fs::read_to_string(dir.path().join("sweep/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
}

#[test]
fn trace_and_ingest_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    world_and_config(dir.path(), "");
    let o = llmhd(dir.path(), &["trace", "--config", "run.toml", "--d", "1,3", "--out", "trace"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("trace/trace.csv")).unwrap();
    assert!(csv.starts_with("epoch,class,mean_loss,mean_score"));
    assert!(csv.contains(",easy,") && csv.contains(",hard_d3,") && csv.contains(",noisy,"));

    let o = llmhd(
        dir.path(),
        &["ingest", "--interactions", "world/interactions.tsv", "--profiles", "world/profiles.jsonl", "--min-rating", "3", "--kcore", "2", "--out", "clean"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["users"], 40);
    assert_eq!(summary["missing_profiles"], 0);
    assert!(dir.path().join("clean/interactions.tsv").exists());
}

#[test]
fn unreachable_endpoint_exits_with_three() {
    let stub = Stub::spawn(|_, _| (500, String::new()));
    let dir = tempfile::tempdir().unwrap();
    let extra = format!("kind = \"remote\"\n\n[scorer.endpoint]\nbase_url = \"{}\"\nmax_retries = 0\nbackoff_ms = 1\n", stub.base_url);
    world_and_config(dir.path(), &extra);
    let o = llmhd(dir.path(), &["train", "--config", "run.toml", "--out", "r"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(dir.path().join("r/report.json").exists());
}

#[test]
fn missing_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = llmhd(dir.path(), &["train", "--config", "nope.toml"]);
    assert_ne!(code(&o), 0);
    assert!(stderr(&o).contains("nope.toml"));
}
