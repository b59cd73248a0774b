//! Reproducible runs on disk: every command behind the `llmhd` binary.
//!
//! A run directory holds `config.toml` (the exact configuration, seed
//! included), `report.json`, the best checkpoint (`best.json` + `best.bin`),
//! `epochs.csv`, `test_metrics.json` and `preferences.jsonl`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::load_checkpoint;
use crate::config::{build_backend, prepare_data, ExperimentConfig};
use crate::data::{dataset_from_records, kcore_filter, load_item_profiles, read_records, write_id_map, write_interactions, write_item_profiles};
use crate::error::{Error, Result};
use crate::eval::{evaluate, pattern_trace, write_trace_csv, EvalSplit, MetricsResult, TraceConfig};
use crate::synth::{SyntheticWorld, WorldParams};
use crate::trainer::{train_in, Ablation, RunReport};

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub profiled_items: usize,
    pub missing_profiles: usize,
    pub unknown_profiles: usize,
}

/// Loads raw interactions and profiles, filters them and writes the cleaned
/// files (`interactions.tsv`, `profiles.jsonl`, `users.tsv`, `items.tsv`,
/// `ingest.json`) to `out`.
pub fn ingest(
    interactions: &Path,
    profiles: Option<&Path>,
    min_rating: Option<u8>,
    kcore: Option<usize>,
    delimiter: char,
    out: &Path,
) -> Result<IngestSummary> {
    let records = read_records(interactions, delimiter)?;
    let mut dataset = dataset_from_records(&records, min_rating)?;
    if let Some(k) = kcore {
        dataset = kcore_filter(&dataset, k)?;
    }
    create_dir(out)?;
    write_interactions(&out.join("interactions.tsv"), &dataset)?;
    write_id_map(&out.join("users.tsv"), &dataset.user_ids)?;
    write_id_map(&out.join("items.tsv"), &dataset.item_ids)?;
    let mut summary = IngestSummary {
        users: dataset.user_count,
        items: dataset.item_count,
        interactions: dataset.len(),
        profiled_items: 0,
        missing_profiles: dataset.item_count,
        unknown_profiles: 0,
    };
    if let Some(p) = profiles {
        let set = load_item_profiles(p, &dataset)?;
        write_item_profiles(&out.join("profiles.jsonl"), &dataset, &set)?;
        summary.profiled_items = set.profiles.len();
        summary.missing_profiles = set.missing.len();
        summary.unknown_profiles = set.unknown;
    }
    write_text(&out.join("ingest.json"), &serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Generates a synthetic world and writes it to `out`.
pub fn synth(params: &WorldParams, out: &Path) -> Result<SyntheticWorld> {
    let world = SyntheticWorld::generate(params)?;
    world.save(out)?;
    Ok(world)
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub report: RunReport,
}

impl RunOutcome {
    /// True when a remote scorer was configured and never produced a usable
    /// preference, i.e. the run silently degraded to plain loss dropping.
    pub fn remote_degraded(&self) -> bool {
        self.report.config.ablation.llm_scoring
            && self.report.config.scorer != crate::trainer::ScorerKind::Oracle
            && self.report.summaries == 0
            && self.report.summary_failures > 0
    }
}

fn epochs_csv(report: &RunReport) -> String {
    let ks: Vec<usize> = report.config.eval_ks.clone();
    let mut out = String::from("epoch,iteration,mean_loss,trained,noisy,hard_candidates,rescued,scoring_failures,preference_updates");
    for k in &ks {
        let _ = write!(out, ",valid_ndcg@{k},valid_recall@{k}");
    }
    out.push('\n');
    for e in &report.epochs {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            e.epoch, e.iteration, e.mean_loss, e.trained_samples, e.noisy, e.hard_candidates, e.rescued, e.scoring_failures, e.preference_updates
        );
        for k in &ks {
            let _ = write!(
                out,
                ",{},{}",
                e.valid_ndcg.get(k).copied().unwrap_or(0.0),
                e.valid_recall.get(k).copied().unwrap_or(0.0)
            );
        }
        out.push('\n');
    }
    out
}

/// Trains according to `cfg` inside `dir`.
pub fn run_training(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    create_dir(dir)?;
    write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    let prepared = prepare_data(&cfg.data)?;
    let run = cfg.run_config();
    let backend = if run.ablation.llm_scoring {
        Some(build_backend(&cfg.scorer, prepared.affinity.clone(), dir)?)
    } else {
        None
    };
    let outcome = train_in(&run, &prepared.split, &prepared.profiles, backend.as_deref(), Some(dir))?;
    write_text(&dir.join("epochs.csv"), &epochs_csv(&outcome.report))?;
    if let Some(test) = &outcome.report.test {
        write_text(&dir.join("test_metrics.json"), &serde_json::to_string_pretty(&metric_means(test))?)?;
    }
    write_text(
        &dir.join("timing.json"),
        &serde_json::json!({ "wall_clock_secs": outcome.report.wall_clock_secs }).to_string(),
    )?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        report: outcome.report,
    })
}

/// The mean metrics of a result, without per-user rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub recall: std::collections::BTreeMap<usize, f64>,
    pub ndcg: std::collections::BTreeMap<usize, f64>,
    pub users: usize,
    pub skipped_users: usize,
}

pub fn metric_means(m: &MetricsResult) -> MetricMeans {
    MetricMeans {
        recall: m.recall.clone(),
        ndcg: m.ndcg.clone(),
        users: m.per_user.len(),
        skipped_users: m.skipped_users,
    }
}

/// Evaluates a checkpoint on the data described by `config` (defaults to the
/// `config.toml` next to the checkpoint).
pub fn evaluate_checkpoint(checkpoint: &Path, config: Option<&Path>, split: EvalSplit, ks: &[usize]) -> Result<MetricsResult> {
    let config_path = match config {
        Some(p) => p.to_path_buf(),
        None => checkpoint
            .parent()
            .map(|d| d.join("config.toml"))
            .ok_or_else(|| Error::Config("cannot locate config.toml next to the checkpoint".into()))?,
    };
    let cfg = ExperimentConfig::load(&config_path)?;
    let prepared = prepare_data(&cfg.data)?;
    let mut model = load_checkpoint(checkpoint)?;
    if model.user_count() != prepared.split.train.user_count || model.item_count() != prepared.split.train.item_count {
        return Err(Error::Config(format!(
            "checkpoint is {}x{} but the data has {} users and {} items",
            model.user_count(),
            model.item_count(),
            prepared.split.train.user_count,
            prepared.split.train.item_count
        )));
    }
    let graph = crate::backbone::InteractionGraph::from_dataset(&prepared.split.train);
    model.refresh(&graph)?;
    Ok(evaluate(&model, &prepared.split, split, ks)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub seed: u64,
    pub method: String,
    pub test_ndcg: std::collections::BTreeMap<usize, f64>,
    pub test_recall: std::collections::BTreeMap<usize, f64>,
    pub best_epoch: u64,
    pub dropped_precision: Option<f64>,
    pub rescue_contamination: Option<f64>,
    pub report: PathBuf,
}

/// One sweep job: ratio, seed offset, method, its config and run directory.
pub type SweepJob = (f64, u64, Ablation, ExperimentConfig, PathBuf);

/// Every job of a sweep.
pub fn sweep_configs(
    base: &ExperimentConfig,
    ratios: &[f64],
    seeds: u64,
    methods: &[Ablation],
    out: &Path,
) -> Result<Vec<SweepJob>> {
    let mut jobs = Vec::new();
    let world = match &base.data.world {
        Some(p) => Some(SyntheticWorld::load(p)?.params),
        None => None,
    };
    for &ratio in ratios {
        if !(0.0..=0.5).contains(&ratio) {
            return Err(Error::Config(format!("noise ratio {ratio} outside [0, 0.5]")));
        }
        for seed in 0..seeds {
            let mut cfg = base.clone();
            cfg.train.seed = base.train.seed.wrapping_add(seed);
            cfg.data.split_seed = base.data.split_seed.wrapping_add(seed);
            let dir = out.join(format!("ratio-{ratio:.2}")).join(format!("seed-{seed}"));
            if let Some(params) = &world {
                // one world per (ratio, seed), written next to its runs
                let params = WorldParams {
                    noise_ratio: ratio,
                    seed: params.seed.wrapping_add(seed),
                    ..params.clone()
                };
                let wdir = dir.join("world");
                create_dir(&wdir)?;
                write_text(&wdir.join("world.json"), &serde_json::to_string_pretty(&params)?)?;
                cfg.data.world = Some(wdir);
            } else {
                cfg.data.inject_noise = ratio;
                cfg.data.noise_seed = base.data.noise_seed.wrapping_add(seed);
            }
            for m in methods {
                let mut c = cfg.clone();
                c.ablation = *m;
                jobs.push((ratio, seed, *m, c, dir.join(m.label())));
            }
        }
    }
    Ok(jobs)
}

/// Runs every (ratio, seed, method) combination with up to `workers` runs at
/// once and writes `sweep.csv` / `sweep.json` to `out`.
pub fn noise_sweep(
    base: &ExperimentConfig,
    ratios: &[f64],
    seeds: u64,
    methods: &[Ablation],
    workers: usize,
    out: &Path,
) -> Result<Vec<SweepRow>> {
    base.validate()?;
    create_dir(out)?;
    let jobs = sweep_configs(base, ratios, seeds, methods, out)?;
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<(usize, Result<RunOutcome>)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers.max(1).min(jobs.len().max(1)))
            .map(|_| {
                s.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let k = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        if k >= jobs.len() {
                            break;
                        }
                        let (_, _, _, cfg, dir) = &jobs[k];
                        done.push((k, run_training(cfg, dir)));
                    }
                    done
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let mut ordered: Vec<Option<Result<RunOutcome>>> = (0..jobs.len()).map(|_| None).collect();
    for (k, r) in results {
        ordered[k] = Some(r);
    }
    let mut rows = Vec::new();
    for ((ratio, seed, method, _, dir), r) in jobs.iter().zip(ordered) {
        let outcome = r.expect("every job ran")?;
        let test = outcome.report.test.clone().unwrap_or_default();
        rows.push(SweepRow {
            ratio: *ratio,
            seed: *seed,
            method: method.label(),
            test_ndcg: test.ndcg,
            test_recall: test.recall,
            best_epoch: outcome.report.best_epoch,
            dropped_precision: outcome.report.quality.and_then(|q| q.precision),
            rescue_contamination: outcome.report.quality.and_then(|q| q.contamination),
            report: dir.join("report.json"),
        });
    }
    let mut csv = String::from("ratio,seed,method,ndcg@10,recall@10,best_epoch,dropped_precision,rescue_contamination\n");
    for r in &rows {
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.ratio,
            r.seed,
            r.method,
            r.test_ndcg.get(&10).copied().unwrap_or(0.0),
            r.test_recall.get(&10).copied().unwrap_or(0.0),
            r.best_epoch,
            opt(r.dropped_precision),
            opt(r.rescue_contamination)
        );
    }
    write_text(&out.join("sweep.csv"), &csv)?;
    write_text(&out.join("sweep.json"), &serde_json::to_string_pretty(&rows)?)?;
    Ok(rows)
}

/// Emits the per-epoch loss/score curves of easy, hard and noisy samples to
/// `out/trace.csv`.
pub fn trace(cfg: &ExperimentConfig, ds: &[usize], out: &Path) -> Result<Vec<crate::eval::TraceRow>> {
    cfg.validate()?;
    let prepared = prepare_data(&cfg.data)?;
    let t = &cfg.train;
    let tc = TraceConfig {
        backbone: t.backbone,
        dim: t.dim,
        layers: t.layers,
        learning_rate: t.learning_rate,
        l2: t.l2,
        batch_size: t.batch_size,
        epochs: t.max_epochs,
        seed: t.seed,
    };
    let rows = pattern_trace(&tc, &prepared.split.train, &prepared.split.test, ds)?;
    create_dir(out)?;
    write_trace_csv(&out.join("trace.csv"), &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world_config(dir: &Path) -> ExperimentConfig {
        let params = WorldParams {
            users: 40,
            items: 60,
            dim: 4,
            positives_per_user: 8,
            noise_ratio: 0.1,
            seed: 3,
            ..WorldParams::default()
        };
        synth(&params, &dir.join("world")).unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.data.world = Some(dir.join("world"));
        cfg.train.dim = 8;
        cfg.train.batch_size = 64;
        cfg.train.max_epochs = 3;
        cfg.train.learning_rate = 0.01;
        cfg.schedule.alpha = 5;
        cfg.schedule.eps_l_max = 0.2;
        cfg
    }

    #[test]
    fn run_directory_contents_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = world_config(dir.path());
        let a = run_training(&cfg, &dir.path().join("a")).unwrap();
        let b = run_training(&cfg, &dir.path().join("b")).unwrap();
        for f in ["config.toml", "report.json", "best.json", "best.bin", "epochs.csv", "test_metrics.json"] {
            assert!(a.dir.join(f).exists(), "{f}");
        }
        let read = |d: &Path| fs::read_to_string(d.join("report.json")).unwrap();
        assert_eq!(read(&a.dir), read(&b.dir));

        let snapshot = ExperimentConfig::load(&a.dir.join("config.toml")).unwrap();
        assert_eq!(snapshot.train, cfg.train);
        let m = evaluate_checkpoint(&a.dir.join("best.json"), None, EvalSplit::Test, &[5, 10]).unwrap();
        let reported = a.report.test.unwrap();
        assert_eq!(m.ndcg, reported.ndcg);
    }

    #[test]
    fn sweep_produces_one_report_per_combination() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = world_config(dir.path());
        cfg.train.max_epochs = 1;
        let rows = noise_sweep(&cfg, &[0.05, 0.1], 2, &[Ablation::loss_drop_only()], 2, &dir.path().join("sweep")).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.report.exists()));
        assert!(dir.path().join("sweep/sweep.csv").exists());
    }

    #[test]
    fn ingest_filters_and_writes() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw.tsv");
        let mut text = String::new();
        for u in 0..6 {
            for i in 0..5 {
                let rating = if (u + i) % 4 == 0 { 2 } else { 5 };
                text.push_str(&format!("user{u}\titem{i}\t{rating}\n"));
            }
        }
        text.push_str("loner\titem9\t5\n");
        fs::write(&raw, text).unwrap();
        let profiles = dir.path().join("p.jsonl");
        let mut p = String::new();
        for i in 0..5 {
            p.push_str(&format!("{{\"item_id\":\"item{i}\",\"title\":\"T{i}\",\"description\":\"d\"}}\n"));
        }
        fs::write(&profiles, p).unwrap();
        let out = dir.path().join("out");
        let s = ingest(&raw, Some(&profiles), Some(3), Some(2), '\t', &out).unwrap();
        assert_eq!(s.users, 6);
        assert_eq!(s.items, 5);
        assert_eq!(s.missing_profiles, 0);
        assert!(out.join("interactions.tsv").exists() && out.join("items.tsv").exists());
    }

    #[test]
    fn trace_writes_csv() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = world_config(dir.path());
        let rows = trace(&cfg, &[1, 3], &dir.path().join("trace")).unwrap();
        assert_eq!(rows.len(), 3 * 3);
        assert!(dir.path().join("trace/trace.csv").exists());
    }
}
