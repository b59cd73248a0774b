//! The denoising training loop.
//!
//! Per mini-batch: forward pass and per-sample losses, loss-based partition
//! into clean and suspected-noisy samples, variance pruning of the suspects
//! into hard candidates, preference scoring of the candidates, and an
//! optimizer step on the clean samples plus the rescued ones. Per epoch:
//! prediction history, preference refinement, validation and early stopping.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{save_checkpoint, BackboneKind, InteractionGraph, Model, Optimizer};
use crate::data::{ItemProfile, ProfileSet, SplitDataset};
use crate::denoise::{
    assemble_training_set, epsilon_l, epsilon_neg, epsilon_pair, epsilon_pos, identify_hard_pairwise,
    identify_hard_pointwise, partition_by_loss, prune_candidates, random_prune_baseline, NoisyMember,
    PredictionHistory, ScheduleConfig,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, quality_from_tally, DenoiseQuality, EvalSplit, MetricsResult, NoiseTally};
use crate::loss::{batch_gradients, batch_losses, Target, TrainMode, TrainSample};
use crate::preference::{
    detect_fp_fn, summarize_preference, ConfidenceCounters, PreferenceStore, UpdateLogEntry,
};
use crate::scorer::{score_many, PreferenceBackend, Score, ScoreRequest, ScorerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pruning {
    /// Every suspected-noisy sample is a hard candidate.
    #[default]
    None,
    /// Highest prediction-variance suspects (VS).
    Variance,
    /// Uniform sample of the same size as VS would pick (RS).
    Random,
}

/// Which components of the method are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Loss-based dropping (LD).
    pub loss_drop: bool,
    pub pruning: Pruning,
    /// Preference scoring of hard candidates (LMS).
    pub llm_scoring: bool,
    /// Iterative preference updating (PU).
    pub preference_updates: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self::full()
    }
}

impl Ablation {
    pub fn vanilla() -> Self {
        Self {
            loss_drop: false,
            pruning: Pruning::None,
            llm_scoring: false,
            preference_updates: false,
        }
    }

    pub fn loss_drop_only() -> Self {
        Self {
            loss_drop: true,
            ..Self::vanilla()
        }
    }

    pub fn full() -> Self {
        Self {
            loss_drop: true,
            pruning: Pruning::Variance,
            llm_scoring: true,
            preference_updates: true,
        }
    }

    /// Parses a comma-separated component list such as `LD,VS,LMS,PU`.
    /// An empty list or `none` means vanilla training.
    pub fn parse(spec: &str) -> std::result::Result<Self, String> {
        let mut out = Self::vanilla();
        for token in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match token.to_ascii_uppercase().as_str() {
                "NONE" | "VANILLA" => {}
                "LD" => out.loss_drop = true,
                "VS" => out.pruning = Pruning::Variance,
                "RS" => out.pruning = Pruning::Random,
                "LMS" => out.llm_scoring = true,
                "PU" => out.preference_updates = true,
                other => return Err(format!("unknown ablation component {other:?} (expected LD, VS, RS, LMS, PU)")),
            }
        }
        Ok(out)
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.loss_drop {
            parts.push("LD");
        }
        match self.pruning {
            Pruning::Variance => parts.push("VS"),
            Pruning::Random => parts.push("RS"),
            Pruning::None => {}
        }
        if self.llm_scoring {
            parts.push("LMS");
        }
        if self.preference_updates {
            parts.push("PU");
        }
        if parts.is_empty() {
            "vanilla".into()
        } else {
            parts.join("+")
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if (self.llm_scoring || self.pruning != Pruning::None) && !self.loss_drop {
            return Err("pruning and scoring act on the dropped set and need LD".into());
        }
        if self.preference_updates && !self.llm_scoring {
            return Err("preference updates (PU) need LMS".into());
        }
        Ok(())
    }

    fn needs_history(&self) -> bool {
        self.pruning != Pruning::None || self.preference_updates
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    #[default]
    Oracle,
    Remote,
    CachedRemote,
}

impl std::str::FromStr for ScorerKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "remote" => Ok(Self::Remote),
            "cached-remote" => Ok(Self::CachedRemote),
            other => Err(format!("unknown scorer {other:?} (expected oracle, remote or cached-remote)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: TrainMode,
    pub backbone: BackboneKind,
    pub dim: usize,
    pub layers: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub max_epochs: u64,
    pub early_stop_patience: u64,
    pub seed: u64,
    pub eval_ks: Vec<usize>,
    pub schedule: ScheduleConfig,
    pub scorer: ScorerKind,
    /// Scoring calls in flight per batch.
    pub scorer_parallelism: usize,
    pub ablation: Ablation,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Pairwise,
            backbone: BackboneKind::Mf,
            dim: 64,
            layers: 2,
            learning_rate: 1e-3,
            l2: 1e-4,
            optimizer: Optimizer::Adam,
            batch_size: 1024,
            max_epochs: 200,
            early_stop_patience: 10,
            seed: 2024,
            eval_ks: vec![5, 10],
            schedule: ScheduleConfig::default(),
            scorer: ScorerKind::Oracle,
            scorer_parallelism: 4,
            ablation: Ablation::full(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.batch_size == 0 {
            return Err("train.batch_size must be at least 1".into());
        }
        if self.early_stop_patience == 0 {
            return Err("train.early_stop_patience must be at least 1".into());
        }
        if self.dim == 0 {
            return Err("train.dim must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("train.learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.l2.is_nan() || self.l2 < 0.0 {
            return Err(format!("train.l2 must be nonnegative, got {}", self.l2));
        }
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return Err("train.eval_ks must list positive cutoffs".into());
        }
        self.schedule.validate()?;
        self.ablation.validate()
    }

    fn monitor_k(&self) -> usize {
        if self.eval_ks.contains(&10) {
            10
        } else {
            *self.eval_ks.iter().max().expect("validated")
        }
    }
}

/// Shuffled mini-batches for one epoch. Pairwise: one sample per training
/// positive against its fixed negative. Pointwise: the positive and its
/// fixed negative as separate labelled samples.
pub fn build_batches(data: &SplitDataset, mode: TrainMode, batch_size: usize, epoch: u64, seed: u64) -> Vec<Vec<TrainSample>> {
    let mut samples = Vec::with_capacity(data.train.len() * 2);
    for (k, x) in data.train.interactions.iter().enumerate() {
        if x.label != 1 {
            continue;
        }
        let neg = data.negatives[k];
        match mode {
            TrainMode::Pairwise => {
                let mut s = TrainSample::pairwise(x.user, x.item, neg, k);
                s.planted = x.is_planted();
                samples.push(s);
            }
            TrainMode::Pointwise => {
                let mut s = TrainSample::pointwise(x.user, x.item, 1, k);
                s.planted = x.is_planted();
                samples.push(s);
                samples.push(TrainSample::pointwise(x.user, neg, 0, k));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(seed, epoch));
    samples.shuffle(&mut rng);
    samples.chunks(batch_size.max(1)).map(<[TrainSample]>::to_vec).collect()
}

fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    seed ^ epoch.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: u64,
    /// Global iteration counter at the end of the epoch.
    pub iteration: u64,
    /// Mean over batches of the loss on the samples trained on.
    pub mean_loss: f64,
    pub batch_samples: usize,
    pub trained_samples: usize,
    /// `ε_l` at the last iteration of the epoch.
    pub drop_count: usize,
    pub noisy: usize,
    pub hard_candidates: usize,
    pub rescued: usize,
    pub not_ready: usize,
    pub scoring_failures: usize,
    pub unsummarized_skips: usize,
    pub noise: NoiseTally,
    pub quality: Option<DenoiseQuality>,
    pub fp_flags: usize,
    pub fn_flags: usize,
    pub preference_updates: usize,
    pub valid_ndcg: BTreeMap<usize, f64>,
    pub valid_recall: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub seed: u64,
    pub epochs: Vec<EpochReport>,
    pub best_epoch: u64,
    pub best_valid_ndcg: f64,
    pub stopped_early: bool,
    pub summaries: usize,
    pub summary_failures: usize,
    pub preference_log: Vec<UpdateLogEntry>,
    pub noise: NoiseTally,
    pub quality: Option<DenoiseQuality>,
    pub test: Option<MetricsResult>,
    /// Seconds spent; excluded from the serialized report so that reruns
    /// produce identical files.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn loss_trajectory(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }

    pub fn test_ndcg(&self, k: usize) -> f64 {
        self.test.as_ref().map_or(0.0, |m| m.ndcg_at(k))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation NDCG.
    pub model: Model,
    pub report: RunReport,
    pub preferences: PreferenceStore,
}

fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut parts: Vec<(usize, R)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let k = next.fetch_add(1, Ordering::Relaxed);
                        if k >= items.len() {
                            break;
                        }
                        done.push((k, f(&items[k])));
                    }
                    done
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    });
    parts.sort_by_key(|p| p.0);
    parts.into_iter().map(|p| p.1).collect()
}

/// Summarizes every user with training positives. Failed users get no
/// preference and are never rescued.
fn summarize_all(
    backend: &dyn PreferenceBackend,
    data: &SplitDataset,
    profiles: &ProfileSet,
    workers: usize,
) -> (PreferenceStore, usize) {
    let users = data.train.user_items();
    let jobs: Vec<(usize, Vec<&ItemProfile>)> = users
        .iter()
        .enumerate()
        .map(|(u, items)| (u, items.iter().filter_map(|&i| profiles.get(i)).collect()))
        .filter(|(_, p): &(usize, Vec<&ItemProfile>)| !p.is_empty())
        .collect();
    let results = parallel_map(&jobs, workers, |(u, p)| summarize_preference(backend, *u, p));
    let mut store = PreferenceStore::new();
    let mut failures = 0;
    for ((u, _), r) in jobs.iter().zip(results) {
        match r {
            Ok(pref) => store.insert(pref),
            Err(e) => {
                failures += 1;
                log::warn!("preference summary for user {u} failed: {e}");
            }
        }
    }
    (store, failures)
}

struct BatchStats {
    loss: f64,
    trained: usize,
    noisy: usize,
    candidates: usize,
    rescued: usize,
    not_ready: usize,
    scoring_failures: usize,
    unsummarized: usize,
    noise: NoiseTally,
}

struct Context<'a> {
    cfg: &'a RunConfig,
    profiles: &'a ProfileSet,
    scorer: Option<&'a dyn PreferenceBackend>,
    graph: Option<&'a InteractionGraph>,
    flags_present: bool,
}

impl Context<'_> {
    fn request(&self, prefs: &PreferenceStore, user: usize, item: usize) -> Option<ScoreRequest> {
        let pref = prefs.get(user)?;
        let profile = self.profiles.get(item)?;
        Some(ScoreRequest {
            user,
            item,
            preference_text: pref.text.clone(),
            item_profile: profile.clone(),
            preference_version: pref.version,
        })
    }

    /// Scores the hard candidates and returns those the scorer vouches for.
    fn rescue(
        &self,
        batch: &[TrainSample],
        candidates: &[usize],
        prefs: &PreferenceStore,
        iteration: u64,
        stats: &mut BatchStats,
    ) -> Vec<usize> {
        let Some(scorer) = self.scorer else {
            return Vec::new();
        };
        // one or two requests per candidate, flattened for parallel scoring
        let mut requests = Vec::new();
        let mut slots: Vec<(usize, usize, usize)> = Vec::new();
        for &k in candidates {
            let s = &batch[k];
            let items: Vec<usize> = match s.target {
                Target::Pair { neg_item } => vec![s.item, neg_item],
                Target::Label(_) => vec![s.item],
            };
            let reqs: Option<Vec<ScoreRequest>> = items.iter().map(|&i| self.request(prefs, s.user, i)).collect();
            match reqs {
                Some(reqs) => {
                    slots.push((k, requests.len(), reqs.len()));
                    requests.extend(reqs);
                }
                None => stats.unsummarized += 1,
            }
        }
        let scores: Vec<std::result::Result<Score, ScorerError>> =
            score_many(scorer, &requests, self.cfg.scorer_parallelism);
        let sched = &self.cfg.schedule;
        let mut hard = Vec::new();
        for (k, start, len) in slots {
            let got: std::result::Result<Vec<Score>, &ScorerError> =
                scores[start..start + len].iter().map(|r| r.as_ref().copied()).collect();
            let got = match got {
                Ok(g) => g,
                Err(e) => {
                    stats.scoring_failures += 1;
                    log::debug!("scoring failed, sample not rescued: {e}");
                    continue;
                }
            };
            let is_hard = match batch[k].target {
                Target::Pair { .. } => identify_hard_pairwise(got[0].value(), got[1].value(), epsilon_pair(iteration, sched)),
                Target::Label(label) => identify_hard_pointwise(
                    got[0].value(),
                    label,
                    epsilon_pos(iteration, sched),
                    epsilon_neg(iteration, sched),
                    sched.pointwise_direction,
                ),
            };
            if is_hard {
                hard.push(k);
            }
        }
        hard
    }

    fn noisy_members(&self, batch: &[TrainSample], noisy: &[usize], history: &PredictionHistory) -> Vec<NoisyMember> {
        noisy
            .iter()
            .map(|&k| {
                let s = &batch[k];
                match s.target {
                    Target::Pair { neg_item } => NoisyMember {
                        index: k,
                        v_pos: history.latest_variance((s.user, s.item)),
                        v_neg: history.latest_variance((s.user, neg_item)),
                        has_pos: true,
                        has_neg: true,
                    },
                    Target::Label(label) => {
                        let v = history.latest_variance((s.user, s.item));
                        NoisyMember {
                            index: k,
                            v_pos: if label == 1 { v } else { None },
                            v_neg: if label == 1 { None } else { v },
                            has_pos: label == 1,
                            has_neg: label != 1,
                        }
                    }
                }
            })
            .collect()
    }

    fn step(
        &self,
        model: &mut Model,
        batch: &mut [TrainSample],
        iteration: u64,
        history: &PredictionHistory,
        prefs: &PreferenceStore,
    ) -> Result<BatchStats> {
        let ab = &self.cfg.ablation;
        let losses = batch_losses(model, batch)?;
        let drop = if ab.loss_drop {
            epsilon_l(iteration, &self.cfg.schedule, self.cfg.batch_size).min(batch.len())
        } else {
            0
        };
        let mut partition = partition_by_loss(&losses, drop);
        let mut stats = BatchStats {
            loss: 0.0,
            trained: 0,
            noisy: partition.noisy.len(),
            candidates: 0,
            rescued: 0,
            not_ready: 0,
            scoring_failures: 0,
            unsummarized: 0,
            noise: NoiseTally::default(),
        };

        if !partition.noisy.is_empty() && (ab.pruning != Pruning::None || ab.llm_scoring) {
            partition.hard_candidates = match ab.pruning {
                Pruning::None => partition.noisy.clone(),
                Pruning::Variance | Pruning::Random => {
                    let members = self.noisy_members(batch, &partition.noisy, history);
                    let outcome = prune_candidates(&members, self.cfg.schedule.eps_v);
                    stats.not_ready = outcome.not_ready;
                    if ab.pruning == Pruning::Variance {
                        outcome.candidates
                    } else {
                        let ready: Vec<usize> = members
                            .iter()
                            .filter(|m| {
                                (!m.has_pos || m.v_pos.is_some()) && (!m.has_neg || m.v_neg.is_some())
                            })
                            .map(|m| m.index)
                            .collect();
                        random_prune_baseline(&ready, outcome.candidates.len(), epoch_seed(self.cfg.seed ^ 0x5EED, iteration))
                    }
                }
            };
            if ab.llm_scoring {
                partition.hard = self.rescue(batch, &partition.hard_candidates, prefs, iteration, &mut stats);
            }
        }
        stats.candidates = partition.hard_candidates.len();
        stats.rescued = partition.hard.len();

        let training = assemble_training_set(batch.len(), &partition).map_err(Error::Invariant)?;
        stats.trained = training.len();
        if self.flags_present {
            let rescued: std::collections::BTreeSet<usize> = partition.hard.iter().copied().collect();
            let t = &mut stats.noise;
            t.flags_present = true;
            t.seen = batch.len();
            t.planted_seen = batch.iter().filter(|s| s.planted).count();
            for &k in &partition.noisy {
                if rescued.contains(&k) {
                    t.rescued += 1;
                    t.rescued_planted += usize::from(batch[k].planted);
                } else {
                    t.dropped += 1;
                    t.dropped_planted += usize::from(batch[k].planted);
                }
            }
        }
        if !training.is_empty() {
            let (loss, grads) = batch_gradients(model, self.graph, batch, &training, self.cfg.l2)?;
            model.apply_gradients(&grads, self.cfg.learning_rate, self.cfg.optimizer)?;
            stats.loss = loss;
        }
        Ok(stats)
    }
}

/// Every training positive and its fixed negative.
fn tracked_pairs(data: &SplitDataset) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = data
        .train
        .interactions
        .iter()
        .enumerate()
        .flat_map(|(k, x)| [(x.user, x.item), (x.user, data.negatives[k])])
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

pub fn train(
    cfg: &RunConfig,
    data: &SplitDataset,
    profiles: &ProfileSet,
    scorer: Option<&dyn PreferenceBackend>,
) -> Result<TrainOutcome> {
    train_in(cfg, data, profiles, scorer, None)
}

/// Like [`train`], additionally writing `report.json` after every epoch and
/// `best.json`/`best.bin` whenever validation NDCG improves.
pub fn train_in(
    cfg: &RunConfig,
    data: &SplitDataset,
    profiles: &ProfileSet,
    scorer: Option<&dyn PreferenceBackend>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate().map_err(Error::Config)?;
    if data.negatives.len() != data.train.len() {
        return Err(Error::Invariant(format!(
            "{} fixed negatives for {} training interactions",
            data.negatives.len(),
            data.train.len()
        )));
    }
    if cfg.ablation.llm_scoring {
        if scorer.is_none() {
            return Err(Error::Config("LMS is enabled but no scorer was provided".into()));
        }
        if profiles.profiles.is_empty() {
            return Err(Error::Config("LMS is enabled but no item profiles are loaded".into()));
        }
    }
    let started = Instant::now();

    let mut model = Model::init(cfg.backbone, data.train.user_count, data.train.item_count, cfg.dim, cfg.layers, cfg.seed)?;
    let graph = InteractionGraph::from_dataset(&data.train);
    model.refresh(&graph)?;
    let ctx = Context {
        cfg,
        profiles,
        scorer: if cfg.ablation.llm_scoring { scorer } else { None },
        graph: (cfg.backbone == BackboneKind::LightGcnLite).then_some(&graph),
        flags_present: data.train.interactions.iter().any(|x| x.planted_noise.is_some()),
    };

    let (mut prefs, summary_failures) = match ctx.scorer {
        Some(s) => summarize_all(s, data, profiles, cfg.scorer_parallelism),
        None => (PreferenceStore::new(), 0),
    };
    let mut report = RunReport {
        config: cfg.clone(),
        seed: cfg.seed,
        epochs: Vec::new(),
        best_epoch: 0,
        best_valid_ndcg: f64::NEG_INFINITY,
        stopped_early: false,
        summaries: prefs.len(),
        summary_failures,
        preference_log: Vec::new(),
        noise: NoiseTally::default(),
        quality: None,
        test: None,
        wall_clock_secs: 0.0,
    };

    let tracked = if cfg.ablation.needs_history() { tracked_pairs(data) } else { Vec::new() };
    let mut history = PredictionHistory::new(cfg.schedule.m);
    let mut counters = ConfidenceCounters::new();
    let mut best = model.clone();
    let mut stale = 0u64;
    let mut iteration = 0u64;
    let k_monitor = cfg.monitor_k();

    for epoch in 1..=cfg.max_epochs {
        let mut er = EpochReport {
            epoch,
            ..Default::default()
        };
        let batches = build_batches(data, cfg.mode, cfg.batch_size, epoch, cfg.seed);
        let n_batches = batches.len().max(1) as f64;
        let mut loss_sum = 0.0;
        for mut batch in batches {
            let stats = ctx.step(&mut model, &mut batch, iteration, &history, &prefs)?;
            er.drop_count = if cfg.ablation.loss_drop {
                epsilon_l(iteration, &cfg.schedule, cfg.batch_size)
            } else {
                0
            };
            iteration += 1;
            loss_sum += stats.loss;
            er.batch_samples += batch.len();
            er.trained_samples += stats.trained;
            er.noisy += stats.noisy;
            er.hard_candidates += stats.candidates;
            er.rescued += stats.rescued;
            er.not_ready += stats.not_ready;
            er.scoring_failures += stats.scoring_failures;
            er.unsummarized_skips += stats.unsummarized;
            er.noise.merge(&stats.noise);
        }
        er.mean_loss = loss_sum / n_batches;
        er.iteration = iteration;
        model.refresh(&graph)?;
        if er.trained_samples != er.batch_samples - er.noisy + er.rescued {
            return Err(Error::Invariant("trained-sample accounting does not add up".into()));
        }

        if !tracked.is_empty() {
            history
                .record_epoch_scores(epoch, &model, tracked.iter().copied())
                .map_err(|e| Error::Invariant(e.to_string()))?;
        }
        if cfg.ablation.preference_updates {
            let ready = |pairs: &mut dyn Iterator<Item = (usize, usize)>| -> Vec<((usize, usize), f64)> {
                pairs.filter_map(|p| history.latest_variance(p).map(|v| (p, v))).collect()
            };
            let positives = ready(&mut data.train.interactions.iter().map(|x| (x.user, x.item)));
            let mut negs: Vec<(usize, usize)> = data
                .train
                .interactions
                .iter()
                .zip(&data.negatives)
                .map(|(x, &j)| (x.user, j))
                .collect();
            negs.sort_unstable();
            negs.dedup();
            let negatives = ready(&mut negs.into_iter());
            let count = epsilon_l(iteration, &cfg.schedule, cfg.batch_size);
            let flags = detect_fp_fn(&positives, &negatives, count);
            er.fp_flags = flags.fp.len();
            er.fn_flags = flags.fn_.len();
            counters.update(&flags);
            let scorer = ctx.scorer.expect("PU implies LMS");
            let log = prefs.apply_confident(
                scorer,
                &mut counters,
                cfg.schedule.eps_gamma,
                |i| profiles.get(i).cloned(),
                epoch,
            );
            er.preference_updates = log.iter().filter(|e| e.version.is_some()).count();
            report.preference_log.extend(log);
        }

        let valid = evaluate(&model, data, EvalSplit::Valid, &cfg.eval_ks)?;
        er.valid_ndcg = valid.ndcg.clone();
        er.valid_recall = valid.recall.clone();
        er.quality = quality_from_tally(&er.noise).ok();
        report.noise.merge(&er.noise);
        let score = valid.ndcg_at(k_monitor);
        log::info!(
            "epoch {epoch}: loss {:.5} valid ndcg@{k_monitor} {score:.5} dropped {} rescued {}",
            er.mean_loss,
            er.noisy - er.rescued,
            er.rescued
        );
        report.epochs.push(er);

        if score > report.best_valid_ndcg {
            report.best_valid_ndcg = score;
            report.best_epoch = epoch;
            best = model.clone();
            stale = 0;
            if let Some(dir) = out_dir {
                save_checkpoint(&best, &dir.join("best.json"))?;
            }
        } else {
            stale += 1;
        }
        if let Some(dir) = out_dir {
            report.write_json(&dir.join("report.json"))?;
        }
        if stale >= cfg.early_stop_patience {
            report.stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }

    report.quality = quality_from_tally(&report.noise).ok();
    report.test = Some(evaluate(&best, data, EvalSplit::Test, &cfg.eval_ks)?);
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    if let Some(dir) = out_dir {
        report.write_json(&dir.join("report.json"))?;
        prefs.write_jsonl(&dir.join("preferences.jsonl"))?;
    }
    Ok(TrainOutcome {
        model: best,
        report,
        preferences: prefs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_world;

    fn world_split(seed: u64) -> (crate::synth::SyntheticWorld, SplitDataset) {
        let w = generate_world(60, 80, 6, 10, 0.1, seed).unwrap();
        let s = w.split([0.8, 0.1, 0.1], seed).unwrap();
        (w, s)
    }

    fn small_cfg() -> RunConfig {
        RunConfig {
            dim: 8,
            batch_size: 64,
            max_epochs: 6,
            early_stop_patience: 50,
            learning_rate: 0.01,
            schedule: ScheduleConfig {
                alpha: 5,
                eps_l_max: 0.2,
                m: 2,
                eps_gamma: 2,
                ..ScheduleConfig::default()
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn batch_shapes_and_order() {
        let (_, s) = world_split(1);
        let n = s.train.len();
        let pair = build_batches(&s, TrainMode::Pairwise, 32, 1, 7);
        assert_eq!(pair.len(), n.div_ceil(32));
        assert_eq!(pair.iter().map(Vec::len).sum::<usize>(), n);
        assert_eq!(pair.last().unwrap().len(), n - 32 * (n / 32));
        let point = build_batches(&s, TrainMode::Pointwise, 32, 1, 7);
        assert_eq!(point.iter().map(Vec::len).sum::<usize>(), 2 * n);
        assert_eq!(pair, build_batches(&s, TrainMode::Pairwise, 32, 1, 7));
        assert_ne!(pair, build_batches(&s, TrainMode::Pairwise, 32, 2, 7));
    }

    #[test]
    fn hundred_positives_make_four_batches() {
        let xs: Vec<_> = (0..100).map(|k| crate::data::Interaction::positive(k % 10, k / 10)).collect();
        let mut train = crate::data::Dataset::from_dense(xs, 10, 40);
        train.interactions.sort_by_key(|x| (x.user, x.item));
        let data = SplitDataset {
            valid: train.empty_like(),
            test: train.empty_like(),
            negatives: vec![39; 100],
            train,
        };
        let sizes: Vec<usize> = build_batches(&data, TrainMode::Pairwise, 32, 0, 0).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![32, 32, 32, 4]);
    }

    #[test]
    fn ablation_parsing() {
        assert_eq!(Ablation::parse("LD,VS,LMS,PU").unwrap(), Ablation::full());
        assert_eq!(Ablation::parse("").unwrap(), Ablation::vanilla());
        assert_eq!(Ablation::parse("ld").unwrap(), Ablation::loss_drop_only());
        assert_eq!(Ablation::parse("LD,RS,LMS").unwrap().pruning, Pruning::Random);
        assert!(Ablation::parse("LD,XX").is_err());
        assert_eq!(Ablation::full().label(), "LD+VS+LMS+PU");
    }

    #[test]
    fn config_validation() {
        let mut c = RunConfig::default();
        assert!(c.validate().is_ok());
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let c = RunConfig {
            early_stop_patience: 0,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            ablation: Ablation::parse("LMS").unwrap(),
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn deterministic_reports() {
        let (w, s) = world_split(2);
        let oracle = w.oracle();
        let cfg = small_cfg();
        let a = train(&cfg, &s, &w.profiles, Some(&oracle)).unwrap();
        let b = train(&cfg, &s, &w.profiles, Some(&oracle)).unwrap();
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
        assert!(a.report.epochs.iter().any(|e| e.noisy > 0));
    }

    #[test]
    fn drop_count_is_monotone_and_accounting_holds() {
        let (w, s) = world_split(3);
        let oracle = w.oracle();
        let out = train(&small_cfg(), &s, &w.profiles, Some(&oracle)).unwrap();
        let drops: Vec<usize> = out.report.epochs.iter().map(|e| e.drop_count).collect();
        assert!(drops.windows(2).all(|w| w[0] <= w[1]));
        for e in &out.report.epochs {
            assert_eq!(e.trained_samples, e.batch_samples - e.noisy + e.rescued);
        }
    }

    #[test]
    fn early_stop_after_patience() {
        let (w, s) = world_split(4);
        let mut cfg = small_cfg();
        cfg.ablation = Ablation::vanilla();
        cfg.early_stop_patience = 1;
        // a learning rate this large makes validation worse after epoch 1
        cfg.learning_rate = 5.0;
        cfg.optimizer = Optimizer::Sgd;
        cfg.max_epochs = 20;
        let out = train(&cfg, &s, &w.profiles, None).unwrap();
        let e = &out.report.epochs;
        if e.len() >= 2 && e[1].valid_ndcg[&10] < e[0].valid_ndcg[&10] {
            assert_eq!(e.len(), 2);
            assert!(out.report.stopped_early);
        }
        let stale_run = out.report.epochs.len() as u64 - out.report.best_epoch;
        assert!(stale_run <= 1);
    }

    #[test]
    fn lms_requires_scorer() {
        let (w, s) = world_split(5);
        assert!(matches!(train(&small_cfg(), &s, &w.profiles, None), Err(Error::Config(_))));
    }

    #[test]
    fn writes_run_files() {
        let (w, s) = world_split(6);
        let dir = tempfile::tempdir().unwrap();
        let oracle = w.oracle();
        let out = train_in(&small_cfg(), &s, &w.profiles, Some(&oracle), Some(dir.path())).unwrap();
        let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
        let back: RunReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.epochs.len(), out.report.epochs.len());
        assert!(dir.path().join("best.json").exists());
        assert!(dir.path().join("preferences.jsonl").exists());
    }
}
