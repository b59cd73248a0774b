//! Interaction ingestion, filtering, splitting and controlled noise injection.
//!
//! Identifiers are re-indexed densely from 0 in order of first appearance so
//! that they can address embedding rows directly. The original identifiers are
//! kept on the [`Dataset`] and can be written out as a two-column map.
//!
//! Splitting is per user: each user's clean positives are shuffled and cut at
//! the requested ratios. Interactions flagged as planted noise never leave the
//! training split.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("dataset is empty after {stage}")]
    Empty { stage: &'static str },
    #[error("profile record {index} rejected: {reason}")]
    InvalidProfile { index: usize, reason: String },
    #[error("user {user} has {count} positives, at least {required} needed to split")]
    TooFewPositives {
        user: usize,
        count: usize,
        required: usize,
    },
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("user {user} has interacted with every item, no negative can be assigned")]
    NoNegativeAvailable { user: usize },
    #[error("noise ratio {0} outside [0, 0.5]")]
    BadNoiseRatio(f64),
    #[error("noise pool holds {available} eligible interactions but {requested} were requested (short by {})", requested - available)]
    NoisePoolShortfall { requested: usize, available: usize },
    #[error("noise source requires rating data but interaction ({user}, {item}) has none")]
    MissingRating { user: usize, item: usize },
    #[error("k must be at least 1")]
    BadCore,
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub label: u8,
    pub rating: Option<u8>,
    pub planted_noise: Option<bool>,
}

impl Interaction {
    pub fn positive(user: usize, item: usize) -> Self {
        Self {
            user,
            item,
            label: 1,
            rating: None,
            planted_noise: None,
        }
    }

    pub fn is_planted(&self) -> bool {
        self.planted_noise == Some(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub interactions: Vec<Interaction>,
    pub user_count: usize,
    pub item_count: usize,
    /// Original identifier of each dense user index.
    pub user_ids: Vec<String>,
    /// Original identifier of each dense item index.
    pub item_ids: Vec<String>,
}

impl Dataset {
    /// Builds a dataset whose original identifiers are the dense indices.
    pub fn from_dense(interactions: Vec<Interaction>, user_count: usize, item_count: usize) -> Self {
        Self {
            interactions,
            user_count,
            item_count,
            user_ids: (0..user_count).map(|u| u.to_string()).collect(),
            item_ids: (0..item_count).map(|i| i.to_string()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.interactions.iter().filter(|x| x.label == 1).count()
    }

    /// Positive item sets per user.
    pub fn user_items(&self) -> Vec<BTreeSet<usize>> {
        let mut sets = vec![BTreeSet::new(); self.user_count];
        for x in self.interactions.iter().filter(|x| x.label == 1) {
            sets[x.user].insert(x.item);
        }
        sets
    }

    pub fn empty_like(&self) -> Self {
        Self {
            interactions: Vec::new(),
            user_count: self.user_count,
            item_count: self.item_count,
            user_ids: self.user_ids.clone(),
            item_ids: self.item_ids.clone(),
        }
    }

    pub fn user_index(&self) -> HashMap<&str, usize> {
        self.user_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect()
    }

    pub fn item_index(&self) -> HashMap<&str, usize> {
        self.item_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect()
    }

    /// Resolves records carrying original identifiers into this dataset's
    /// dense index space. Records naming unknown users or items are dropped.
    pub fn resolve(&self, records: &[RawRecord]) -> Vec<Interaction> {
        let users = self.user_index();
        let items = self.item_index();
        records
            .iter()
            .filter_map(|r| {
                let user = *users.get(r.user.as_str())?;
                let item = *items.get(r.item.as_str())?;
                Some(Interaction {
                    user,
                    item,
                    label: 1,
                    rating: Some(r.rating),
                    planted_noise: None,
                })
            })
            .collect()
    }
}

/// One line of an interactions file, before re-indexing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub user: String,
    pub item: String,
    pub rating: u8,
    pub timestamp: Option<i64>,
}

/// Reads `user, item, rating[, timestamp]` records.
pub fn read_records(path: &Path, delimiter: char) -> Result<Vec<RawRecord>, DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let lineno = n + 1;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            continue;
        }
        let parse = |message: String| DataError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let fields: Vec<&str> = trimmed.split(delimiter).map(str::trim).collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(parse(format!(
                "expected 3 or 4 fields, found {}",
                fields.len()
            )));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(parse("empty user or item identifier".into()));
        }
        let rating: f64 = fields[2]
            .parse()
            .map_err(|_| parse(format!("rating `{}` is not a number", fields[2])))?;
        if !rating.is_finite() || rating.fract() != 0.0 || !(0.0..=255.0).contains(&rating) {
            return Err(parse(format!("rating `{}` is not a small integer", fields[2])));
        }
        let timestamp = match fields.get(3) {
            Some(t) => Some(
                t.parse::<i64>()
                    .map_err(|_| parse(format!("timestamp `{t}` is not an integer")))?,
            ),
            None => None,
        };
        records.push(RawRecord {
            user: fields[0].to_string(),
            item: fields[1].to_string(),
            rating: rating as u8,
            timestamp,
        });
    }
    Ok(records)
}

/// Collapses duplicate (user, item) records keeping the highest rating, then
/// drops records rated below `min_rating` and re-indexes densely.
pub fn dataset_from_records(
    records: &[RawRecord],
    min_rating: Option<u8>,
) -> Result<Dataset, DataError> {
    let mut best: HashMap<(&str, &str), u8> = HashMap::new();
    let mut order: Vec<(&str, &str)> = Vec::new();
    for r in records {
        let key = (r.user.as_str(), r.item.as_str());
        match best.get_mut(&key) {
            Some(rating) => *rating = (*rating).max(r.rating),
            None => {
                best.insert(key, r.rating);
                order.push(key);
            }
        }
    }

    let mut user_ids: Vec<String> = Vec::new();
    let mut item_ids: Vec<String> = Vec::new();
    let mut users: HashMap<&str, usize> = HashMap::new();
    let mut items: HashMap<&str, usize> = HashMap::new();
    let mut interactions = Vec::new();
    for key in order {
        let rating = best[&key];
        if min_rating.is_some_and(|m| rating < m) {
            continue;
        }
        let user = *users.entry(key.0).or_insert_with(|| {
            user_ids.push(key.0.to_string());
            user_ids.len() - 1
        });
        let item = *items.entry(key.1).or_insert_with(|| {
            item_ids.push(key.1.to_string());
            item_ids.len() - 1
        });
        interactions.push(Interaction {
            user,
            item,
            label: 1,
            rating: Some(rating),
            planted_noise: None,
        });
    }
    if interactions.is_empty() {
        return Err(DataError::Empty { stage: "loading" });
    }
    interactions.sort_by_key(|x| (x.user, x.item));
    Ok(Dataset {
        interactions,
        user_count: user_ids.len(),
        item_count: item_ids.len(),
        user_ids,
        item_ids,
    })
}

pub fn load_interactions(
    path: &Path,
    min_rating: Option<u8>,
    delimiter: char,
) -> Result<Dataset, DataError> {
    let records = read_records(path, delimiter)?;
    dataset_from_records(&records, min_rating)
}

/// Writes dense `user<TAB>item<TAB>rating` lines. Interactions without a
/// rating are written with rating 5.
pub fn write_interactions(path: &Path, dataset: &Dataset) -> Result<(), DataError> {
    let mut out = String::new();
    for x in &dataset.interactions {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            dataset.user_ids[x.user],
            dataset.item_ids[x.item],
            x.rating.unwrap_or(5)
        ));
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Writes a two-column `original<TAB>dense` identifier map.
pub fn write_id_map(path: &Path, ids: &[String]) -> Result<(), DataError> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    for (dense, original) in ids.iter().enumerate() {
        writeln!(file, "{original}\t{dense}").map_err(io_err(path))?;
    }
    Ok(())
}

pub fn read_id_map(path: &Path) -> Result<Vec<String>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut ids: Vec<Option<String>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| DataError::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let (original, dense) = line
            .split_once('\t')
            .ok_or_else(|| parse("expected two tab-separated columns".into()))?;
        let dense: usize = dense
            .trim()
            .parse()
            .map_err(|_| parse(format!("dense index `{dense}` is not an integer")))?;
        if ids.len() <= dense {
            ids.resize(dense + 1, None);
        }
        ids[dense] = Some(original.to_string());
    }
    ids.into_iter()
        .enumerate()
        .map(|(i, id)| {
            id.ok_or_else(|| DataError::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("dense index {i} missing from map"),
            })
        })
        .collect()
}

/// Iteratively removes users and items with fewer than `k` interactions and
/// compacts the remaining indices.
pub fn kcore_filter(dataset: &Dataset, k: usize) -> Result<Dataset, DataError> {
    if k == 0 {
        return Err(DataError::BadCore);
    }
    let mut alive: Vec<bool> = vec![true; dataset.interactions.len()];
    loop {
        let mut user_deg = vec![0usize; dataset.user_count];
        let mut item_deg = vec![0usize; dataset.item_count];
        for (x, _) in dataset.interactions.iter().zip(&alive).filter(|(_, a)| **a) {
            user_deg[x.user] += 1;
            item_deg[x.item] += 1;
        }
        let mut changed = false;
        for (x, a) in dataset.interactions.iter().zip(alive.iter_mut()) {
            if *a && (user_deg[x.user] < k || item_deg[x.item] < k) {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let kept: Vec<Interaction> = dataset
        .interactions
        .iter()
        .zip(&alive)
        .filter(|(_, a)| **a)
        .map(|(x, _)| *x)
        .collect();
    if kept.is_empty() {
        return Err(DataError::Empty {
            stage: "k-core filtering",
        });
    }
    let mut user_map = vec![usize::MAX; dataset.user_count];
    let mut item_map = vec![usize::MAX; dataset.item_count];
    for x in &kept {
        user_map[x.user] = 0;
        item_map[x.item] = 0;
    }
    let compact = |map: &mut Vec<usize>, ids: &[String]| -> Vec<String> {
        let mut out = Vec::new();
        for (old, slot) in map.iter_mut().enumerate() {
            if *slot != usize::MAX {
                *slot = out.len();
                out.push(ids[old].clone());
            }
        }
        out
    };
    let user_ids = compact(&mut user_map, &dataset.user_ids);
    let item_ids = compact(&mut item_map, &dataset.item_ids);
    let interactions = kept
        .into_iter()
        .map(|x| Interaction {
            user: user_map[x.user],
            item: item_map[x.item],
            ..x
        })
        .collect();
    Ok(Dataset {
        interactions,
        user_count: user_ids.len(),
        item_count: item_ids.len(),
        user_ids,
        item_ids,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TooFewPolicy {
    /// Abort the split.
    #[default]
    Fail,
    /// Keep all of the user's positives in the training split.
    TrainOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    /// Fixed negative item for each training interaction, aligned by index.
    pub negatives: Vec<usize>,
}

impl SplitDataset {
    pub fn negative_for(&self, user: usize, item: usize) -> Option<usize> {
        self.train
            .interactions
            .iter()
            .position(|x| x.user == user && x.item == item)
            .map(|k| self.negatives[k])
    }

    /// Every positive item of each user across all three splits.
    pub fn all_user_items(&self) -> Vec<BTreeSet<usize>> {
        let mut sets = self.train.user_items();
        for d in [&self.valid, &self.test] {
            for x in &d.interactions {
                sets[x.user].insert(x.item);
            }
        }
        sets
    }
}

pub const MIN_SPLIT_POSITIVES: usize = 3;

/// Per-user random split at `ratios` (train, valid, test) with one fixed
/// negative per training positive.
pub fn split(
    dataset: &Dataset,
    ratios: [f64; 3],
    seed: u64,
    too_few: TooFewPolicy,
) -> Result<SplitDataset, DataError> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(DataError::BadRatios(ratios));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_user: Vec<Vec<Interaction>> = vec![Vec::new(); dataset.user_count];
    let mut planted: Vec<Interaction> = Vec::new();
    for x in dataset.interactions.iter().filter(|x| x.label == 1) {
        if x.is_planted() {
            planted.push(*x);
        } else {
            per_user[x.user].push(*x);
        }
    }

    let mut train = dataset.empty_like();
    let mut valid = dataset.empty_like();
    let mut test = dataset.empty_like();
    let needs_holdout = ratios[1] > 0.0 || ratios[2] > 0.0;
    for (user, mut items) in per_user.into_iter().enumerate() {
        if items.is_empty() {
            continue;
        }
        let n = items.len();
        if needs_holdout && n < MIN_SPLIT_POSITIVES {
            match too_few {
                TooFewPolicy::Fail => {
                    return Err(DataError::TooFewPositives {
                        user,
                        count: n,
                        required: MIN_SPLIT_POSITIVES,
                    })
                }
                TooFewPolicy::TrainOnly => {
                    train.interactions.extend(items);
                    continue;
                }
            }
        }
        items.shuffle(&mut rng);
        let n_valid = (n as f64 * ratios[1]).round() as usize;
        let n_test = ((n as f64 * ratios[2]).round() as usize).min(n - n_valid);
        let n_train = n - n_valid - n_test;
        let mut it = items.into_iter();
        train.interactions.extend(it.by_ref().take(n_train));
        valid.interactions.extend(it.by_ref().take(n_valid));
        test.interactions.extend(it);
    }
    train.interactions.extend(planted);
    for d in [&mut train, &mut valid, &mut test] {
        d.interactions.sort_by_key(|x| (x.user, x.item));
    }

    let mut out = SplitDataset {
        train,
        valid,
        test,
        negatives: Vec::new(),
    };
    out.negatives = assign_negatives(&out, &mut rng)?;
    Ok(out)
}

fn assign_negatives(split: &SplitDataset, rng: &mut impl Rng) -> Result<Vec<usize>, DataError> {
    let seen = split.all_user_items();
    let item_count = split.train.item_count;
    split
        .train
        .interactions
        .iter()
        .map(|x| sample_unseen(&seen[x.user], item_count, rng).ok_or(DataError::NoNegativeAvailable { user: x.user }))
        .collect()
}

/// Uniform draw from items outside `seen`.
pub(crate) fn sample_unseen(seen: &BTreeSet<usize>, item_count: usize, rng: &mut impl Rng) -> Option<usize> {
    let free = item_count.checked_sub(seen.len())?;
    if free == 0 {
        return None;
    }
    // rejection sampling is fast when the user has seen few items
    if seen.len() * 2 < item_count {
        loop {
            let j = rng.random_range(0..item_count);
            if !seen.contains(&j) {
                return Some(j);
            }
        }
    }
    let mut target = rng.random_range(0..free);
    for j in 0..item_count {
        if !seen.contains(&j) {
            if target == 0 {
                return Some(j);
            }
            target -= 1;
        }
    }
    None
}

/// Ground-truth affinity of a user for an item, in `[0, 1]`.
pub trait Affinity: Send + Sync {
    fn affinity(&self, user: usize, item: usize) -> f64;
}

pub enum NoiseSource<'a> {
    /// Draw from interactions rated below 3 (typically those removed by the
    /// rating filter at load time).
    RatedBelow3(&'a [Interaction]),
    /// Draw from each user's bottom affinity decile.
    SyntheticLowAffinity(&'a dyn Affinity),
}

/// Number of planted positives for a given noise ratio.
pub fn planted_count(train_positives: usize, ratio: f64) -> usize {
    (ratio * train_positives as f64).floor() as usize
}

/// Bottom-decile items of a user by affinity, ascending.
pub fn bottom_decile(affinity: &dyn Affinity, user: usize, item_count: usize) -> Vec<usize> {
    let mut items: Vec<(f64, usize)> = (0..item_count).map(|i| (affinity.affinity(user, i), i)).collect();
    items.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let take = item_count.div_ceil(10);
    items.into_iter().take(take).map(|(_, i)| i).collect()
}

/// Adds `⌊ratio · |train positives|⌋` planted noisy positives to the training
/// split, each with its own fixed negative. Validation and test splits are
/// left untouched.
pub fn inject_noise(
    split: &SplitDataset,
    ratio: f64,
    source: NoiseSource<'_>,
    seed: u64,
) -> Result<SplitDataset, DataError> {
    if !(0.0..=0.5).contains(&ratio) {
        return Err(DataError::BadNoiseRatio(ratio));
    }
    let requested = planted_count(split.train.positives(), ratio);
    if requested == 0 {
        return Ok(split.clone());
    }
    let seen = split.all_user_items();
    let mut pool: Vec<Interaction> = match source {
        NoiseSource::RatedBelow3(candidates) => {
            let mut unique = BTreeMap::new();
            for x in candidates {
                let rating = x.rating.ok_or(DataError::MissingRating {
                    user: x.user,
                    item: x.item,
                })?;
                if rating < 3 && x.user < seen.len() && !seen[x.user].contains(&x.item) {
                    unique.entry((x.user, x.item)).or_insert(rating);
                }
            }
            unique
                .into_iter()
                .map(|((user, item), rating)| Interaction {
                    user,
                    item,
                    label: 1,
                    rating: Some(rating),
                    planted_noise: Some(true),
                })
                .collect()
        }
        NoiseSource::SyntheticLowAffinity(oracle) => {
            let item_count = split.train.item_count;
            let mut pool = Vec::new();
            for (user, items) in seen.iter().enumerate() {
                for item in bottom_decile(oracle, user, item_count) {
                    if !items.contains(&item) {
                        pool.push(Interaction {
                            user,
                            item,
                            label: 1,
                            rating: Some(1),
                            planted_noise: Some(true),
                        });
                    }
                }
            }
            pool
        }
    };
    if pool.len() < requested {
        return Err(DataError::NoisePoolShortfall {
            requested,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (chosen, _) = pool.partial_shuffle(&mut rng, requested);
    let mut chosen = chosen.to_vec();
    chosen.sort_by_key(|x| (x.user, x.item));

    let mut seen = seen;
    for x in &chosen {
        seen[x.user].insert(x.item);
    }
    let mut out = split.clone();
    let item_count = out.train.item_count;
    for x in chosen {
        let neg = sample_unseen(&seen[x.user], item_count, &mut rng)
            .ok_or(DataError::NoNegativeAvailable { user: x.user })?;
        out.train.interactions.push(x);
        out.negatives.push(neg);
    }
    // keep (user, item) order with negatives aligned
    let mut paired: Vec<(Interaction, usize)> = out
        .train
        .interactions
        .into_iter()
        .zip(out.negatives)
        .collect();
    paired.sort_by_key(|(x, _)| (x.user, x.item));
    let (interactions, negatives) = paired.into_iter().unzip();
    out.train.interactions = interactions;
    out.negatives = negatives;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemProfile {
    pub item: usize,
    pub title: String,
    pub description: String,
}

#[derive(Debug, Clone, Default)]
pub struct ProfileSet {
    pub profiles: BTreeMap<usize, ItemProfile>,
    /// Dense item indices without a profile.
    pub missing: Vec<usize>,
    /// Records whose item is not part of the dataset.
    pub unknown: usize,
}

impl ProfileSet {
    pub fn get(&self, item: usize) -> Option<&ItemProfile> {
        self.profiles.get(&item)
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct ProfileRecord {
    item_id: serde_json::Value,
    title: String,
    #[serde(default)]
    description: String,
}

/// Reads JSON-lines item profiles `{item_id, title, description}` and maps
/// them onto the dataset's dense item indices.
pub fn load_item_profiles(path: &Path, dataset: &Dataset) -> Result<ProfileSet, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let items = dataset.item_index();
    let mut set = ProfileSet::default();
    let mut index = 0usize;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ProfileRecord = serde_json::from_str(line).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        let id = match &record.item_id {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(x) => x.to_string(),
            other => {
                return Err(DataError::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    message: format!("item_id must be a string or number, got {other}"),
                })
            }
        };
        if record.title.trim().is_empty() {
            return Err(DataError::InvalidProfile {
                index,
                reason: "empty title".into(),
            });
        }
        index += 1;
        match items.get(id.as_str()) {
            Some(&item) => {
                set.profiles.insert(
                    item,
                    ItemProfile {
                        item,
                        title: record.title,
                        description: record.description,
                    },
                );
            }
            None => set.unknown += 1,
        }
    }
    set.missing = (0..dataset.item_count)
        .filter(|i| !set.profiles.contains_key(i))
        .collect();
    Ok(set)
}

pub fn write_item_profiles(path: &Path, dataset: &Dataset, profiles: &ProfileSet) -> Result<(), DataError> {
    let mut out = String::new();
    for p in profiles.profiles.values() {
        let record = ProfileRecord {
            item_id: serde_json::Value::String(dataset.item_ids[p.item].clone()),
            title: p.title.clone(),
            description: p.description.clone(),
        };
        out.push_str(&serde_json::to_string(&record).expect("profile serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}
