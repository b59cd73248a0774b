//! Full-ranking top-K metrics, noise-identification quality and loss/score
//! pattern tracing.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{BackboneKind, InteractionGraph, Model, ModelError, Optimizer};
use crate::data::{Dataset, SplitDataset};
use crate::loss::{batch_gradients, batch_losses, bpr_loss, TrainSample};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no planted-noise flags available")]
    NoPlantedFlags,
    #[error("pattern trace needs rating data; no interaction carries a rating")]
    MissingRatings,
    #[error("pattern trace: {0}")]
    Trace(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub const DEFAULT_KS: [usize; 2] = [5, 10];

/// Every item outside `exclusions`, by descending score with ties going to
/// the lower item index.
pub fn rank_items(model: &Model, user: usize, exclusions: &BTreeSet<usize>) -> Result<Vec<usize>, ModelError> {
    let scores = model.score_all(user)?;
    Ok(rank_scores(&scores, exclusions))
}

pub fn rank_scores(scores: &[f64], exclusions: &BTreeSet<usize>) -> Vec<usize> {
    let mut items: Vec<usize> = (0..scores.len()).filter(|i| !exclusions.contains(i)).collect();
    items.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    items
}

/// `None` when there is nothing relevant.
pub fn recall_at_k(ranking: &[usize], relevant: &BTreeSet<usize>, k: usize) -> Option<f64> {
    if relevant.is_empty() || k == 0 {
        return None;
    }
    let hits = ranking.iter().take(k).filter(|i| relevant.contains(i)).count();
    Some(hits as f64 / relevant.len() as f64)
}

pub fn ndcg_at_k(ranking: &[usize], relevant: &BTreeSet<usize>, k: usize) -> Option<f64> {
    if relevant.is_empty() || k == 0 {
        return None;
    }
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..relevant.len().min(k)).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    Some(dcg / idcg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: usize,
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsResult {
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub per_user: Vec<UserMetrics>,
    /// Users with no held-out positives, left out of the means.
    pub skipped_users: usize,
}

impl MetricsResult {
    pub fn ndcg_at(&self, k: usize) -> f64 {
        self.ndcg.get(&k).copied().unwrap_or(0.0)
    }

    pub fn recall_at(&self, k: usize) -> f64 {
        self.recall.get(&k).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Valid,
    Test,
}

impl std::str::FromStr for EvalSplit {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "valid" | "validation" => Ok(Self::Valid),
            "test" => Ok(Self::Test),
            other => Err(format!("unknown split {other:?} (expected valid or test)")),
        }
    }
}

/// Full-ranking evaluation on the valid or test split. Training positives
/// (and, for test, validation positives) are excluded from every ranking.
pub fn evaluate(model: &Model, data: &SplitDataset, which: EvalSplit, ks: &[usize]) -> Result<MetricsResult, ModelError> {
    let mut exclusions = data.train.user_items();
    let target = match which {
        EvalSplit::Valid => &data.valid,
        EvalSplit::Test => {
            for x in &data.valid.interactions {
                exclusions[x.user].insert(x.item);
            }
            &data.test
        }
    };
    let relevant = target.user_items();
    let users: Vec<usize> = (0..target.user_count).collect();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(8);
    let chunk = users.len().div_ceil(threads).max(1);
    let results: Vec<Result<Vec<Option<UserMetrics>>, ModelError>> = std::thread::scope(|s| {
        let handles: Vec<_> = users
            .chunks(chunk)
            .map(|part| {
                let exclusions = &exclusions;
                let relevant = &relevant;
                s.spawn(move || {
                    part.iter()
                        .map(|&u| {
                            if relevant[u].is_empty() {
                                return Ok(None);
                            }
                            let ranking = rank_items(model, u, &exclusions[u])?;
                            let mut m = UserMetrics {
                                user: u,
                                recall: BTreeMap::new(),
                                ndcg: BTreeMap::new(),
                            };
                            for &k in ks {
                                m.recall.insert(k, recall_at_k(&ranking, &relevant[u], k).unwrap_or(0.0));
                                m.ndcg.insert(k, ndcg_at_k(&ranking, &relevant[u], k).unwrap_or(0.0));
                            }
                            Ok(Some(m))
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });

    let mut out = MetricsResult::default();
    for part in results {
        for m in part? {
            match m {
                Some(m) => out.per_user.push(m),
                None => out.skipped_users += 1,
            }
        }
    }
    let n = out.per_user.len();
    for &k in ks {
        let mean = |f: &dyn Fn(&UserMetrics) -> f64| {
            if n == 0 {
                0.0
            } else {
                out.per_user.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let r = mean(&|m| m.recall[&k]);
        let g = mean(&|m| m.ndcg[&k]);
        out.recall.insert(k, r);
        out.ndcg.insert(k, g);
    }
    Ok(out)
}

/// Running counts of how planted noise was handled by the partition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseTally {
    pub seen: usize,
    pub planted_seen: usize,
    pub dropped: usize,
    pub dropped_planted: usize,
    pub rescued: usize,
    pub rescued_planted: usize,
    pub flags_present: bool,
}

impl NoiseTally {
    pub fn merge(&mut self, other: &NoiseTally) {
        self.seen += other.seen;
        self.planted_seen += other.planted_seen;
        self.dropped += other.dropped;
        self.dropped_planted += other.dropped_planted;
        self.rescued += other.rescued;
        self.rescued_planted += other.rescued_planted;
        self.flags_present |= other.flags_present;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiseQuality {
    /// Planted share of the dropped set; `None` when nothing was dropped.
    pub precision: Option<f64>,
    /// Share of seen planted samples that were dropped.
    pub recall: Option<f64>,
    /// Planted share of the rescued set.
    pub contamination: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn quality_from_tally(t: &NoiseTally) -> Result<DenoiseQuality, EvalError> {
    if !t.flags_present {
        return Err(EvalError::NoPlantedFlags);
    }
    Ok(DenoiseQuality {
        precision: ratio(t.dropped_planted, t.dropped),
        recall: ratio(t.dropped_planted, t.planted_seen),
        contamination: ratio(t.rescued_planted, t.rescued),
    })
}

/// Noise-identification quality of a dropped and a rescued set, given the
/// planted flag of every sample seen (`None` when unknown).
pub fn denoise_quality(
    dropped: &BTreeSet<usize>,
    rescued: &BTreeSet<usize>,
    planted: &[Option<bool>],
) -> Result<DenoiseQuality, EvalError> {
    if planted.is_empty() || planted.iter().any(Option::is_none) {
        return Err(EvalError::NoPlantedFlags);
    }
    let is_planted = |k: &usize| planted.get(*k).copied().flatten() == Some(true);
    let tally = NoiseTally {
        seen: planted.len(),
        planted_seen: planted.iter().filter(|p| **p == Some(true)).count(),
        dropped: dropped.len(),
        dropped_planted: dropped.iter().filter(|k| is_planted(k)).count(),
        rescued: rescued.len(),
        rescued_planted: rescued.iter().filter(|k| is_planted(k)).count(),
        flags_present: true,
    };
    quality_from_tally(&tally)
}

/// Settings of the model trained while tracing loss/score patterns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceConfig {
    pub backbone: BackboneKind,
    pub dim: usize,
    pub layers: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub epochs: u64,
    pub seed: u64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneKind::Mf,
            dim: 32,
            layers: 2,
            learning_rate: 0.01,
            l2: 1e-4,
            batch_size: 256,
            epochs: 30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: u64,
    pub class: String,
    pub mean_loss: f64,
    pub mean_score: f64,
}

pub fn trace_class_name(d: usize) -> String {
    if d == 1 {
        "easy".to_string()
    } else {
        format!("hard_d{d}")
    }
}

/// The candidate with the highest predicted score; the first on ties.
pub fn hardest_negative(model: &Model, user: usize, candidates: &[usize]) -> Result<usize, ModelError> {
    let mut best = candidates[0];
    let mut best_score = model.predict(user, best)?;
    for &j in &candidates[1..] {
        let s = model.predict(user, j)?;
        if s > best_score {
            best = j;
            best_score = s;
        }
    }
    Ok(best)
}

/// Trains a BPR model on `train` (clean positives plus low-rated ones) and
/// records, per epoch, the mean BPR loss and mean positive score of three
/// kinds of sample:
///
/// * clean positives against the hardest of `D` sampled negatives, one class
///   per value in `ds` (`D = 1` is the easy class);
/// * noisy samples: a positive rated below 3 paired with one of the user's
///   test positives as the negative.
///
/// Training itself samples one negative per positive.
pub fn pattern_trace(cfg: &TraceConfig, train: &Dataset, test: &Dataset, ds: &[usize]) -> Result<Vec<TraceRow>, EvalError> {
    if !train.interactions.iter().any(|x| x.rating.is_some()) {
        return Err(EvalError::MissingRatings);
    }
    if ds.is_empty() || ds.contains(&0) {
        return Err(EvalError::Trace("candidate counts must be at least 1".into()));
    }
    let mut seen = train.user_items();
    for x in &test.interactions {
        seen[x.user].insert(x.item);
    }
    let test_items = test.user_items();
    let positives: Vec<(usize, usize, bool)> = train
        .interactions
        .iter()
        .filter(|x| x.label == 1)
        .map(|x| (x.user, x.item, x.rating.is_some_and(|r| r < 3) || x.is_planted()))
        .collect();
    let noisy: Vec<(usize, usize, usize)> = positives
        .iter()
        .filter(|p| p.2)
        .filter_map(|&(u, i, _)| test_items[u].first().map(|&j| (u, i, j)))
        .collect();
    if noisy.is_empty() {
        return Err(EvalError::Trace("no low-rated training positive has a test positive to pair with".into()));
    }
    let free = |u: usize| train.item_count - seen[u].len();
    if positives.iter().any(|&(u, _, _)| free(u) == 0) {
        return Err(EvalError::Trace("a user has interacted with every item".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::init(cfg.backbone, train.user_count, train.item_count, cfg.dim, cfg.layers, cfg.seed)?;
    let graph = InteractionGraph::from_dataset(train);
    let uses_graph = cfg.backbone == BackboneKind::LightGcnLite;
    let draw = |u: usize, rng: &mut ChaCha8Rng| loop {
        let j = rng.random_range(0..train.item_count);
        if !seen[u].contains(&j) {
            break j;
        }
    };

    let mut rows = Vec::new();
    for epoch in 1..=cfg.epochs {
        model.refresh(&graph)?;
        let mut order: Vec<usize> = (0..positives.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let samples: Vec<TrainSample> = order
            .iter()
            .map(|&k| {
                let (u, i, _) = positives[k];
                TrainSample::pairwise(u, i, draw(u, &mut rng), k)
            })
            .collect();
        for chunk in samples.chunks(cfg.batch_size.max(1)) {
            let mut batch = chunk.to_vec();
            batch_losses(&model, &mut batch)?;
            let all: Vec<usize> = (0..batch.len()).collect();
            let (_, grads) = batch_gradients(&model, uses_graph.then_some(&graph), &batch, &all, cfg.l2)?;
            model.apply_gradients(&grads, cfg.learning_rate, Optimizer::Adam)?;
        }
        model.refresh(&graph)?;

        for &d in ds {
            let (mut loss, mut score, mut n) = (0.0, 0.0, 0usize);
            for &(u, i, is_noise) in &positives {
                if is_noise {
                    continue;
                }
                let candidates: Vec<usize> = (0..d).map(|_| draw(u, &mut rng)).collect();
                let j = hardest_negative(&model, u, &candidates)?;
                let (yp, yn) = (model.predict(u, i)?, model.predict(u, j)?);
                loss += bpr_loss(yp, yn);
                score += yp;
                n += 1;
            }
            rows.push(TraceRow {
                epoch,
                class: trace_class_name(d),
                mean_loss: loss / n.max(1) as f64,
                mean_score: score / n.max(1) as f64,
            });
        }
        let (mut loss, mut score) = (0.0, 0.0);
        for &(u, i, j) in &noisy {
            let (yp, yn) = (model.predict(u, i)?, model.predict(u, j)?);
            loss += bpr_loss(yp, yn);
            score += yp;
        }
        rows.push(TraceRow {
            epoch,
            class: "noisy".into(),
            mean_loss: loss / noisy.len() as f64,
            mean_score: score / noisy.len() as f64,
        });
    }
    Ok(rows)
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<(), EvalError> {
    let io = |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    writeln!(f, "epoch,class,mean_loss,mean_score").map_err(io)?;
    for r in rows {
        writeln!(f, "{},{},{},{}", r.epoch, r.class, r.mean_loss, r.mean_score).map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn set(xs: &[usize]) -> BTreeSet<usize> {
        xs.iter().copied().collect()
    }

    fn brute_ndcg(ranking: &[usize], rel: &BTreeSet<usize>, k: usize) -> f64 {
        let mut dcg = 0.0;
        for (pos, item) in ranking.iter().enumerate() {
            if pos < k && rel.contains(item) {
                dcg += std::f64::consts::LN_2 / ((pos + 2) as f64).ln();
            }
        }
        let mut idcg = 0.0;
        for pos in 0..k {
            if pos < rel.len() {
                idcg += std::f64::consts::LN_2 / ((pos + 2) as f64).ln();
            }
        }
        dcg / idcg
    }

    #[test]
    fn ranking_order_ties_and_exclusions() {
        assert_eq!(rank_scores(&[0.1, 0.9, 0.5], &set(&[])), vec![1, 2, 0]);
        assert_eq!(rank_scores(&[0.5, 0.9, 0.5], &set(&[])), vec![1, 0, 2]);
        assert_eq!(rank_scores(&[0.5, 0.9, 0.5], &set(&[1])), vec![0, 2]);
    }

    #[test]
    fn rank_items_through_model() {
        let users = Array2::from_shape_vec((1, 1), vec![1.0]).unwrap();
        let items = Array2::from_shape_vec((3, 1), vec![0.2, 0.7, 0.4]).unwrap();
        let m = Model::from_tables(BackboneKind::Mf, users, items, 0);
        assert_eq!(rank_items(&m, 0, &set(&[])).unwrap(), vec![1, 2, 0]);
        assert_eq!(rank_items(&m, 0, &set(&[2])).unwrap(), vec![1, 0]);
    }

    #[test]
    fn metric_examples() {
        assert_eq!(recall_at_k(&[4, 1, 2], &set(&[4]), 5), Some(1.0));
        assert_eq!(ndcg_at_k(&[4, 1, 2], &set(&[4]), 5), Some(1.0));
        assert_abs_diff_eq!(ndcg_at_k(&[0, 1, 7, 3], &set(&[7]), 5).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(recall_at_k(&[0, 1, 2, 3, 4, 5], &set(&[2, 9]), 5), Some(0.5));
        assert_eq!(recall_at_k(&[0, 1], &set(&[]), 5), None);
    }

    #[test]
    fn quality_examples() {
        let flags: Vec<Option<bool>> = (0..20).map(|k| Some(k < 5)).collect();
        let q = denoise_quality(&set(&[0, 1, 2, 3, 4]), &set(&[]), &flags).unwrap();
        assert_eq!((q.precision, q.recall), (Some(1.0), Some(1.0)));
        let q = denoise_quality(&set(&[10, 11]), &set(&[]), &flags).unwrap();
        assert_eq!(q.precision, Some(0.0));
        let q = denoise_quality(&set(&[0, 1, 2, 3, 10, 11, 12, 13, 14, 15]), &set(&[1, 12]), &flags).unwrap();
        assert_eq!(q.precision, Some(0.4));
        assert_eq!(q.contamination, Some(0.5));
        assert!(matches!(denoise_quality(&set(&[0]), &set(&[]), &[None]), Err(EvalError::NoPlantedFlags)));
    }

    #[test]
    fn hardest_negative_picks_argmax() {
        let users = Array2::from_shape_vec((1, 1), vec![1.0]).unwrap();
        let items = Array2::from_shape_vec((4, 1), vec![0.3, 0.8, 0.1, 0.8]).unwrap();
        let m = Model::from_tables(BackboneKind::Mf, users, items, 0);
        assert_eq!(hardest_negative(&m, 0, &[2]).unwrap(), 2);
        assert_eq!(hardest_negative(&m, 0, &[0, 2, 1]).unwrap(), 1);
        assert_eq!(hardest_negative(&m, 0, &[3, 1]).unwrap(), 3);
    }

    fn trace_data() -> (Dataset, Dataset) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for u in 0..12 {
            for k in 0..5 {
                let mut x = crate::data::Interaction::positive(u, (u + k) % 30);
                x.rating = Some(if k == 4 { 1 } else { 5 });
                train.push(x);
            }
            test.push(crate::data::Interaction::positive(u, (u + 10) % 30));
        }
        (Dataset::from_dense(train, 12, 30), Dataset::from_dense(test, 12, 30))
    }

    #[test]
    fn trace_shape_and_errors() {
        let (train, test) = trace_data();
        let cfg = TraceConfig {
            dim: 8,
            epochs: 4,
            batch_size: 16,
            ..TraceConfig::default()
        };
        let rows = pattern_trace(&cfg, &train, &test, &[1, 3]).unwrap();
        assert_eq!(rows.len(), 4 * 3);
        assert_eq!(rows[0].class, "easy");
        assert_eq!(rows[1].class, "hard_d3");
        assert_eq!(rows[2].class, "noisy");
        assert_eq!(rows, pattern_trace(&cfg, &train, &test, &[1, 3]).unwrap());

        let mut unrated = train.clone();
        for x in &mut unrated.interactions {
            x.rating = None;
        }
        assert!(matches!(pattern_trace(&cfg, &unrated, &test, &[1]), Err(EvalError::MissingRatings)));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_trace_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 13);
        assert!(text.starts_with("epoch,class,mean_loss,mean_score"));
    }

    proptest! {
        #[test]
        fn metrics_match_brute_force(
            scores in proptest::collection::vec(-5.0f64..5.0, 1..20),
            rel_mask in proptest::collection::vec(any::<bool>(), 20),
            k in 1usize..25,
        ) {
            let n = scores.len();
            let rel: BTreeSet<usize> = (0..n).filter(|&i| rel_mask[i]).collect();
            prop_assume!(!rel.is_empty());
            let ranking = rank_scores(&scores, &BTreeSet::new());
            let hits = ranking.iter().take(k).filter(|i| rel.contains(i)).count();
            prop_assert_eq!(recall_at_k(&ranking, &rel, k).unwrap(), hits as f64 / rel.len() as f64);
            prop_assert!((ndcg_at_k(&ranking, &rel, k).unwrap() - brute_ndcg(&ranking, &rel, k)).abs() < 1e-12);
            let r1 = recall_at_k(&ranking, &rel, k).unwrap();
            let r2 = recall_at_k(&ranking, &rel, k + 1).unwrap();
            prop_assert!(r1 <= r2 && r2 <= 1.0);
        }

        #[test]
        fn ndcg_invariant_under_monotone_maps(
            scores in proptest::collection::vec(-3.0f64..3.0, 2..20),
            rel_mask in proptest::collection::vec(any::<bool>(), 20),
            a in 0.1f64..4.0,
            b in -2.0f64..2.0,
        ) {
            let n = scores.len();
            let rel: BTreeSet<usize> = (0..n).filter(|&i| rel_mask[i]).collect();
            prop_assume!(!rel.is_empty());
            let mapped: Vec<f64> = scores.iter().map(|s| (a * s + b).exp()).collect();
            let r1 = rank_scores(&scores, &BTreeSet::new());
            let r2 = rank_scores(&mapped, &BTreeSet::new());
            for k in [5, 10] {
                prop_assert_eq!(ndcg_at_k(&r1, &rel, k), ndcg_at_k(&r2, &rel, k));
            }
        }
    }
}
