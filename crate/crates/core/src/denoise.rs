//! Batch partitioning for hard-sample-aware denoising.
//!
//! Each mini-batch `B` is split into a clean part and a noisy-flagged part
//! `B_N` (the highest-loss samples, count growing with the iteration
//! counter). A variance-ranked subset of `B_N` forms the hard candidates
//! `B_HC`, and the candidates confirmed by the preference scorer form the
//! rescued set `B_H`. Training then uses `(B \ B_N) ∪ B_H`.
//!
//! All rankings break ties by the lower batch index.

use std::collections::{HashMap, VecDeque};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Model, ModelError};

/// Slack for floor/ceil of products like `0.3 · 10` that land a hair away
/// from an integer in binary floating point.
const ROUNDING_SLACK: f64 = 1e-9;

/// Direction of the pointwise hardness indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PointwiseDirection {
    /// Rescue positives rated at least `ε_pos` and negatives rated at most
    /// `ε_neg`.
    #[default]
    Consistency,
    /// Rescue positives rated below `ε_pos` and negatives rated above `ε_neg`.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Growth divisor shared by all schedules.
    pub alpha: u64,
    /// Cap on the dropped fraction of a batch.
    pub eps_l_max: f64,
    /// Fraction of the noisy set kept as hard candidates.
    pub eps_v: f64,
    pub eps_pos_max: u8,
    pub eps_pos_min: u8,
    pub eps_neg_max: u8,
    pub eps_neg_min: u8,
    pub eps_pair_max: u8,
    pub eps_pair_min: u8,
    /// Variance window in epochs.
    pub m: usize,
    /// Epoch-flag count needed before a preference update fires.
    pub eps_gamma: u32,
    pub pointwise_direction: PointwiseDirection,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            alpha: 3000,
            eps_l_max: 0.05,
            eps_v: 0.5,
            eps_pos_max: 8,
            eps_pos_min: 6,
            eps_neg_max: 4,
            eps_neg_min: 2,
            eps_pair_max: 7,
            eps_pair_min: 3,
            m: 3,
            eps_gamma: 3,
            pointwise_direction: PointwiseDirection::Consistency,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.alpha == 0 {
            return Err("schedule.alpha must be a positive integer".into());
        }
        if !(0.0..=1.0).contains(&self.eps_l_max) {
            return Err(format!("schedule.eps_l_max must lie in [0, 1], got {}", self.eps_l_max));
        }
        if !(0.0..=1.0).contains(&self.eps_v) {
            return Err(format!("schedule.eps_v must lie in [0, 1], got {}", self.eps_v));
        }
        for (name, lo, hi) in [
            ("eps_pos", self.eps_pos_min, self.eps_pos_max),
            ("eps_neg", self.eps_neg_min, self.eps_neg_max),
            ("eps_pair", self.eps_pair_min, self.eps_pair_max),
        ] {
            if lo > hi {
                return Err(format!("schedule.{name}_min ({lo}) exceeds {name}_max ({hi})"));
            }
        }
        if self.m == 0 {
            return Err("schedule.m must be at least 1".into());
        }
        if self.eps_gamma == 0 {
            return Err("schedule.eps_gamma must be at least 1".into());
        }
        Ok(())
    }

    fn ramp(&self, iteration: u64) -> f64 {
        iteration as f64 / self.alpha as f64
    }
}

/// Number of highest-loss samples flagged as noisy at iteration `T`:
/// `⌊min(T/α, ε_l^max · |B|)⌋`.
pub fn epsilon_l(iteration: u64, cfg: &ScheduleConfig, batch_size: usize) -> usize {
    let raw = cfg.ramp(iteration).min(cfg.eps_l_max * batch_size as f64);
    (raw + ROUNDING_SLACK).floor() as usize
}

/// `max(ε_pos^max − T/α, ε_pos^min)`
pub fn epsilon_pos(iteration: u64, cfg: &ScheduleConfig) -> f64 {
    (f64::from(cfg.eps_pos_max) - cfg.ramp(iteration)).max(f64::from(cfg.eps_pos_min))
}

/// `min(ε_neg^min + T/α, ε_neg^max)`
pub fn epsilon_neg(iteration: u64, cfg: &ScheduleConfig) -> f64 {
    (f64::from(cfg.eps_neg_min) + cfg.ramp(iteration)).min(f64::from(cfg.eps_neg_max))
}

/// `max(ε_pair^max − T/α, ε_pair^min)`
pub fn epsilon_pair(iteration: u64, cfg: &ScheduleConfig) -> f64 {
    (f64::from(cfg.eps_pair_max) - cfg.ramp(iteration)).max(f64::from(cfg.eps_pair_min))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPartition {
    pub clean: Vec<usize>,
    pub noisy: Vec<usize>,
    pub hard_candidates: Vec<usize>,
    pub hard: Vec<usize>,
}

impl BatchPartition {
    /// Checks `clean ⊎ noisy = 0..batch_len` and `hard ⊆ hard_candidates ⊆ noisy`.
    pub fn check(&self, batch_len: usize) -> Result<(), String> {
        let mut seen = vec![0u8; batch_len];
        for &k in self.clean.iter().chain(&self.noisy) {
            if k >= batch_len {
                return Err(format!("index {k} outside batch of {batch_len}"));
            }
            seen[k] += 1;
        }
        if let Some(k) = seen.iter().position(|&c| c != 1) {
            return Err(format!("batch index {k} is not in exactly one of clean/noisy"));
        }
        let subset = |a: &[usize], b: &[usize]| a.iter().all(|x| b.binary_search(x).is_ok());
        if !subset(&self.hard_candidates, &self.noisy) {
            return Err("hard candidates escape the noisy set".into());
        }
        if !subset(&self.hard, &self.hard_candidates) {
            return Err("rescued samples escape the hard candidates".into());
        }
        Ok(())
    }
}

/// Positions sorted by descending key, lower position first on ties.
fn rank_descending(keys: &[(usize, f64)]) -> Vec<usize> {
    let mut order: Vec<(usize, f64)> = keys.to_vec();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order.into_iter().map(|(k, _)| k).collect()
}

/// Flags the `drop_count` largest losses as noisy.
pub fn partition_by_loss(losses: &[f64], drop_count: usize) -> BatchPartition {
    let keyed: Vec<(usize, f64)> = losses.iter().copied().enumerate().collect();
    let mut noisy: Vec<usize> = rank_descending(&keyed)
        .into_iter()
        .take(drop_count.min(losses.len()))
        .collect();
    noisy.sort_unstable();
    let clean = (0..losses.len())
        .filter(|k| noisy.binary_search(k).is_err())
        .collect();
    BatchPartition {
        clean,
        noisy,
        ..Default::default()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HistoryError {
    #[error("epoch {epoch} is not after the last recorded epoch {last}")]
    NonIncreasingEpoch { epoch: u64, last: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Ring buffers of the last `m` epoch-end prediction scores per tracked
/// (user, item) pair.
#[derive(Debug, Clone, Default)]
pub struct PredictionHistory {
    window: usize,
    last_epoch: Option<u64>,
    buffers: HashMap<(usize, usize), VecDeque<(u64, f64)>>,
}

impl PredictionHistory {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(1),
            last_epoch: None,
            buffers: HashMap::new(),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn last_epoch(&self) -> Option<u64> {
        self.last_epoch
    }

    /// Appends `predict(u, i)` for every tracked pair at `epoch` and evicts
    /// entries older than the window.
    pub fn record_epoch_scores(
        &mut self,
        epoch: u64,
        model: &Model,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<(), HistoryError> {
        if let Some(last) = self.last_epoch {
            if epoch <= last {
                return Err(HistoryError::NonIncreasingEpoch { epoch, last });
            }
        }
        for pair in pairs {
            let score = model.predict(pair.0, pair.1)?;
            self.push(pair, epoch, score);
        }
        self.last_epoch = Some(epoch);
        Ok(())
    }

    /// Appends one score. Pairs recorded twice in the same epoch keep the
    /// first value.
    pub fn push(&mut self, pair: (usize, usize), epoch: u64, score: f64) {
        let window = self.window as u64;
        let buf = self.buffers.entry(pair).or_default();
        if buf.back().is_some_and(|&(e, _)| e >= epoch) {
            return;
        }
        buf.push_back((epoch, score));
        while buf
            .front()
            .is_some_and(|&(e, _)| e + window <= epoch)
            || buf.len() > self.window
        {
            buf.pop_front();
        }
    }

    pub fn scores(&self, pair: (usize, usize)) -> Option<&VecDeque<(u64, f64)>> {
        self.buffers.get(&pair)
    }

    /// Population variance of the last `m` scores ending at epoch `t`, or
    /// `None` when the pair does not yet have `m` scores ending there.
    pub fn variance(&self, pair: (usize, usize), t: u64, m: usize) -> Option<f64> {
        let buf = self.buffers.get(&pair)?;
        if m == 0 || buf.len() < m || buf.back()?.0 != t {
            return None;
        }
        let tail: Vec<f64> = buf.iter().skip(buf.len() - m).map(|&(_, s)| s).collect();
        Some(population_variance(&tail))
    }

    /// Variance over the full window ending at the last recorded epoch.
    pub fn latest_variance(&self, pair: (usize, usize)) -> Option<f64> {
        self.variance(pair, self.last_epoch?, self.window)
    }
}

pub fn population_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// A member of the noisy set with its prediction-score variances. Pairwise
/// samples carry both; pointwise positives carry `v_pos` only and pointwise
/// negatives `v_neg` only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisyMember {
    pub index: usize,
    pub v_pos: Option<f64>,
    pub v_neg: Option<f64>,
    /// Whether the sample carries a positive side and a negative side.
    pub has_pos: bool,
    pub has_neg: bool,
}

impl NoisyMember {
    fn ready(&self) -> bool {
        (!self.has_pos || self.v_pos.is_some()) && (!self.has_neg || self.v_neg.is_some())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PruneOutcome {
    pub candidates: Vec<usize>,
    /// Members excluded because their variance window is not yet full.
    pub not_ready: usize,
}

fn ceil_fraction(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 - ROUNDING_SLACK).ceil().max(0.0) as usize).min(n)
}

/// Hard candidates: the top `⌈ε_v·|B_N^p|⌉` members by positive-side variance
/// united with the top `⌈ε_v·|B_N^n|⌉` by negative-side variance.
pub fn prune_candidates(noisy: &[NoisyMember], eps_v: f64) -> PruneOutcome {
    let ready: Vec<&NoisyMember> = noisy.iter().filter(|m| m.ready()).collect();
    let not_ready = noisy.len() - ready.len();
    let pos: Vec<(usize, f64)> = ready
        .iter()
        .filter_map(|m| m.v_pos.filter(|_| m.has_pos).map(|v| (m.index, v)))
        .collect();
    let neg: Vec<(usize, f64)> = ready
        .iter()
        .filter_map(|m| m.v_neg.filter(|_| m.has_neg).map(|v| (m.index, v)))
        .collect();
    let mut candidates: Vec<usize> = rank_descending(&pos)
        .into_iter()
        .take(ceil_fraction(eps_v, pos.len()))
        .chain(rank_descending(&neg).into_iter().take(ceil_fraction(eps_v, neg.len())))
        .collect();
    candidates.sort_unstable();
    candidates.dedup();
    PruneOutcome {
        candidates,
        not_ready,
    }
}

/// Seeded uniform subset of `noisy` of size `count` (clamped), sorted.
pub fn random_prune_baseline(noisy: &[usize], count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = count.min(noisy.len());
    let mut out: Vec<usize> = index::sample(&mut rng, noisy.len(), count)
        .into_iter()
        .map(|k| noisy[k])
        .collect();
    out.sort_unstable();
    out
}

pub fn identify_hard_pointwise(
    score: u8,
    label: u8,
    eps_pos: f64,
    eps_neg: f64,
    direction: PointwiseDirection,
) -> bool {
    let s = f64::from(score);
    match (direction, label) {
        (PointwiseDirection::Consistency, 1) => s >= eps_pos,
        (PointwiseDirection::Consistency, _) => s <= eps_neg,
        (PointwiseDirection::Literal, 1) => s < eps_pos,
        (PointwiseDirection::Literal, _) => s > eps_neg,
    }
}

pub fn identify_hard_pairwise(s_pos: u8, s_neg: u8, eps_pair: f64) -> bool {
    (f64::from(s_pos) - f64::from(s_neg)) > eps_pair
}

/// `(B \ B_N) ∪ B_H`, ascending.
pub fn assemble_training_set(batch_len: usize, partition: &BatchPartition) -> Result<Vec<usize>, String> {
    partition.check(batch_len)?;
    let mut out: Vec<usize> = partition
        .clean
        .iter()
        .chain(&partition.hard)
        .copied()
        .collect();
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneKind;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cfg(alpha: u64, eps_l_max: f64) -> ScheduleConfig {
        ScheduleConfig {
            alpha,
            eps_l_max,
            ..Default::default()
        }
    }

    #[test]
    fn drop_count_schedule() {
        let c = cfg(3000, 0.05);
        assert_eq!(epsilon_l(0, &c, 1024), 0);
        assert_eq!(epsilon_l(30_000, &c, 1024), 10);
        assert_eq!(epsilon_l(1_000_000_000, &c, 1024), 51);
        assert_eq!(epsilon_l(1_000_000_000, &cfg(10, 0.29), 100), 29);
    }

    #[test]
    fn threshold_schedules() {
        let c = cfg(3000, 0.05);
        assert_eq!((epsilon_pos(0, &c), epsilon_neg(0, &c), epsilon_pair(0, &c)), (8.0, 2.0, 7.0));
        assert_eq!((epsilon_pos(3000, &c), epsilon_neg(3000, &c), epsilon_pair(3000, &c)), (7.0, 3.0, 6.0));
        let t = u64::MAX / 2;
        assert_eq!((epsilon_pos(t, &c), epsilon_neg(t, &c), epsilon_pair(t, &c)), (6.0, 4.0, 3.0));
    }

    #[test]
    fn loss_partition_and_ties() {
        assert!(partition_by_loss(&[0.3, 0.1], 0).noisy.is_empty());
        assert_eq!(partition_by_loss(&[0.1, 5.0, 0.2], 1).noisy, vec![1]);
        let p = partition_by_loss(&[1.0, 1.0, 1.0], 2);
        assert_eq!(p.noisy, vec![0, 1]);
        assert_eq!(p.clean, vec![2]);
        p.check(3).unwrap();
    }

    #[test]
    fn history_ring_buffer() {
        let m = Model::from_tables(BackboneKind::Mf, ndarray::array![[1.0]], ndarray::array![[2.0]], 0);
        let mut h = PredictionHistory::new(3);
        for e in 1..=5 {
            h.record_epoch_scores(e, &m, [(0, 0)]).unwrap();
        }
        let buf = h.scores((0, 0)).unwrap();
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.iter().map(|x| x.0).collect::<Vec<_>>(), vec![3, 4, 5]);
        assert!(buf.iter().all(|x| x.1 == 2.0));
        assert_eq!(h.latest_variance((0, 0)), Some(0.0));
        assert!(matches!(
            h.record_epoch_scores(5, &m, [(0, 0)]),
            Err(HistoryError::NonIncreasingEpoch { .. })
        ));
    }

    #[test]
    fn variance_reference_values() {
        let mut h = PredictionHistory::new(3);
        for (e, s) in [(1, 0.2), (2, 0.4), (3, 0.6)] {
            h.push((0, 1), e, s);
        }
        assert_abs_diff_eq!(h.variance((0, 1), 3, 3).unwrap(), 0.02 / 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(h.variance((0, 1), 3, 3).unwrap(), 0.026_666_666_666_666_7, epsilon = 1e-12);
        assert_eq!(h.variance((0, 1), 2, 3), None);
        let mut h = PredictionHistory::new(2);
        h.push((1, 1), 1, 0.0);
        assert_eq!(h.latest_variance((1, 1)), None);
        h.push((1, 1), 2, 1.0);
        h.last_epoch = Some(2);
        assert_eq!(h.latest_variance((1, 1)), Some(0.25));
    }

    fn pair_member(index: usize, vp: f64, vn: f64) -> NoisyMember {
        NoisyMember {
            index,
            v_pos: Some(vp),
            v_neg: Some(vn),
            has_pos: true,
            has_neg: true,
        }
    }

    #[test]
    fn prune_extremes() {
        let members: Vec<NoisyMember> = (0..5).map(|k| pair_member(k, k as f64, 5.0 - k as f64)).collect();
        assert!(prune_candidates(&members, 0.0).candidates.is_empty());
        assert_eq!(prune_candidates(&members, 1.0).candidates, vec![0, 1, 2, 3, 4]);
        let mut with_unready = members.clone();
        with_unready.push(NoisyMember {
            index: 9,
            v_pos: None,
            v_neg: Some(1.0),
            has_pos: true,
            has_neg: true,
        });
        let out = prune_candidates(&with_unready, 1.0);
        assert_eq!(out.not_ready, 1);
        assert!(!out.candidates.contains(&9));
    }

    #[test]
    fn prune_top_three_of_ten() {
        // v_pos ranks 9,8,7 highest; v_neg ranks 0,1,2 highest
        let members: Vec<NoisyMember> = (0..10).map(|k| pair_member(k, k as f64, -(k as f64))).collect();
        assert_eq!(prune_candidates(&members, 0.3).candidates, vec![0, 1, 2, 7, 8, 9]);
    }

    #[test]
    fn indicators() {
        let d = PointwiseDirection::Consistency;
        assert!(identify_hard_pointwise(9, 1, 7.0, 3.0, d));
        assert!(!identify_hard_pointwise(5, 1, 7.0, 3.0, d));
        assert!(identify_hard_pointwise(2, 0, 7.0, 3.0, d));
        assert!(!identify_hard_pointwise(9, 1, 7.0, 3.0, PointwiseDirection::Literal));
        assert!(identify_hard_pointwise(5, 1, 7.0, 3.0, PointwiseDirection::Literal));
        assert!(identify_hard_pointwise(4, 0, 7.0, 3.0, PointwiseDirection::Literal));
        assert!(identify_hard_pairwise(9, 2, 5.0));
        assert!(!identify_hard_pairwise(6, 5, 5.0));
        for s in 1..=10 {
            assert!(!identify_hard_pairwise(s, s, 0.0));
        }
    }

    #[test]
    fn training_set_assembly() {
        let mut p = partition_by_loss(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0], 0);
        assert_eq!(assemble_training_set(8, &p).unwrap().len(), 8);
        p = partition_by_loss(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0], 3);
        p.hard_candidates = p.noisy.clone();
        p.hard = p.noisy.clone();
        assert_eq!(assemble_training_set(8, &p).unwrap().len(), 8);
        p.hard = vec![6];
        assert_eq!(assemble_training_set(8, &p).unwrap(), vec![0, 1, 2, 3, 4, 6]);
        p.hard = vec![1];
        assert!(assemble_training_set(8, &p).is_err());
    }

    #[test]
    fn random_baseline() {
        let noisy = vec![3, 5, 8, 13, 21];
        assert!(random_prune_baseline(&noisy, 0, 1).is_empty());
        assert_eq!(random_prune_baseline(&noisy, 5, 1), noisy);
        assert_eq!(random_prune_baseline(&noisy, 2, 9), random_prune_baseline(&noisy, 2, 9));
    }

    proptest! {
        #[test]
        fn schedules_monotone_and_bounded(t in 0u64..10_000_000, dt in 0u64..1_000_000, alpha in 1u64..100_000) {
            let c = cfg(alpha, 0.1);
            let (a, b) = (t, t + dt);
            prop_assert!(epsilon_pos(b, &c) <= epsilon_pos(a, &c));
            prop_assert!(epsilon_neg(b, &c) >= epsilon_neg(a, &c));
            prop_assert!(epsilon_pair(b, &c) <= epsilon_pair(a, &c));
            prop_assert!(epsilon_l(b, &c, 1024) >= epsilon_l(a, &c, 1024));
            prop_assert!((6.0..=8.0).contains(&epsilon_pos(a, &c)));
            prop_assert!((2.0..=4.0).contains(&epsilon_neg(a, &c)));
            prop_assert!((3.0..=7.0).contains(&epsilon_pair(a, &c)));
            prop_assert!(epsilon_l(a, &c, 1024) <= 102);
        }

        #[test]
        fn prune_matches_full_sort(vs in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 0..64), eps_v in 0.0f64..=1.0) {
            let members: Vec<NoisyMember> = vs.iter().enumerate().map(|(k, &(a, b))| pair_member(k * 2, a, b)).collect();
            let got = prune_candidates(&members, eps_v).candidates;
            let n = members.len();
            let take = ((eps_v * n as f64) - 1e-9).ceil().max(0.0) as usize;
            let mut by_pos = members.clone();
            by_pos.sort_by(|a, b| b.v_pos.partial_cmp(&a.v_pos).unwrap().then(a.index.cmp(&b.index)));
            let mut by_neg = members.clone();
            by_neg.sort_by(|a, b| b.v_neg.partial_cmp(&a.v_neg).unwrap().then(a.index.cmp(&b.index)));
            let mut expect: Vec<usize> = by_pos.iter().take(take).chain(by_neg.iter().take(take)).map(|m| m.index).collect();
            expect.sort_unstable();
            expect.dedup();
            prop_assert_eq!(got, expect);
        }

        #[test]
        fn loss_partition_is_a_partition(losses in proptest::collection::vec(0.0f64..10.0, 0..50), drop in 0usize..60) {
            let p = partition_by_loss(&losses, drop);
            prop_assert!(p.check(losses.len()).is_ok());
            prop_assert_eq!(p.noisy.len(), drop.min(losses.len()));
            if let (Some(&min_noisy), Some(max_clean)) = (
                p.noisy.iter().map(|&k| losses[k]).collect::<Vec<_>>().iter().min_by(|a, b| a.total_cmp(b)),
                p.clean.iter().map(|&k| losses[k]).max_by(|a, b| a.total_cmp(b)),
            ) {
                prop_assert!(min_noisy >= max_clean);
            }
        }
    }
}
