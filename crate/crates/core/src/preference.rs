//! Versioned user-preference texts and their variance-driven refinement.
//!
//! Every epoch, training positives with the lowest prediction-score
//! variance are flagged as likely false positives and fixed negatives with
//! the highest variance as likely false negatives. A pair that keeps being
//! flagged for `ε_γ` epochs triggers one refinement of its user's
//! preference: false positives have their characteristics removed, false
//! negatives have theirs added. Each refinement bumps the preference version,
//! which also retires score-cache entries keyed to the old version.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ItemProfile;
use crate::error::{Error, Result};
use crate::scorer::{FeedbackKind, PreferenceBackend, ScorerError};

/// A (user, item) pair.
pub type Pair = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trigger {
    pub item: usize,
    pub kind: FeedbackKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceEvent {
    pub version: u32,
    pub trigger: Trigger,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserPreference {
    pub user: usize,
    pub text: String,
    pub version: u32,
    pub history: Vec<PreferenceEvent>,
}

pub fn summarize_preference(
    backend: &dyn PreferenceBackend,
    user: usize,
    profiles: &[&ItemProfile],
) -> Result<UserPreference, ScorerError> {
    if profiles.is_empty() {
        return Err(ScorerError::InvalidRequest(format!("user {user} has no profiled items to summarize")));
    }
    let text = backend.summarize(user, profiles)?;
    if text.trim().is_empty() {
        return Err(ScorerError::Parse {
            raw: text,
            reason: "empty summary".into(),
        });
    }
    Ok(UserPreference {
        user,
        text,
        version: 1,
        history: Vec::new(),
    })
}

/// Refines `pref` with one detected false positive or false negative.
/// On failure the preference is left untouched.
pub fn update_preference(
    backend: &dyn PreferenceBackend,
    pref: &UserPreference,
    profile: &ItemProfile,
    kind: FeedbackKind,
) -> Result<UserPreference, ScorerError> {
    let text = backend.refine(pref.user, &pref.text, profile, kind)?;
    let version = pref.version + 1;
    let mut history = pref.history.clone();
    history.push(PreferenceEvent {
        version,
        trigger: Trigger {
            item: profile.item,
            kind,
        },
    });
    Ok(UserPreference {
        user: pref.user,
        text,
        version,
        history,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochFlags {
    pub fp: Vec<(usize, usize)>,
    pub fn_: Vec<(usize, usize)>,
}

/// The `count` lowest-variance positives (FP) and `count` highest-variance
/// negatives (FN). Ties go to the earlier pair in the input.
pub fn detect_fp_fn(
    positives: &[((usize, usize), f64)],
    negatives: &[((usize, usize), f64)],
    count: usize,
) -> EpochFlags {
    let mut pos: Vec<usize> = (0..positives.len()).collect();
    pos.sort_by(|&a, &b| positives[a].1.total_cmp(&positives[b].1).then(a.cmp(&b)));
    let mut neg: Vec<usize> = (0..negatives.len()).collect();
    neg.sort_by(|&a, &b| negatives[b].1.total_cmp(&negatives[a].1).then(a.cmp(&b)));
    EpochFlags {
        fp: pos.into_iter().take(count).map(|k| positives[k].0).collect(),
        fn_: neg.into_iter().take(count).map(|k| negatives[k].0).collect(),
    }
}

type PairKey = (usize, usize, FeedbackKind);

#[derive(Debug, Clone, Default)]
pub struct ConfidenceCounters {
    counts: BTreeMap<PairKey, u32>,
    consumed: BTreeSet<PairKey>,
    retried: BTreeSet<PairKey>,
}

impl ConfidenceCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self, user: usize, item: usize, kind: FeedbackKind) -> u32 {
        self.counts.get(&(user, item, kind)).copied().unwrap_or(0)
    }

    pub fn update(&mut self, flags: &EpochFlags) {
        let fp = flags.fp.iter().map(|&(u, i)| (u, i, FeedbackKind::Fp));
        let fn_ = flags.fn_.iter().map(|&(u, i)| (u, i, FeedbackKind::Fn));
        for key in fp.chain(fn_) {
            *self.counts.entry(key).or_insert(0) += 1;
        }
    }

    /// Unconsumed pairs whose counter reached `eps_gamma`, in (user, item)
    /// order: `(false positives, false negatives)`.
    pub fn confident_items(&self, eps_gamma: u32) -> (Vec<Pair>, Vec<Pair>) {
        let mut fp = Vec::new();
        let mut fn_ = Vec::new();
        for (&(u, i, kind), &c) in &self.counts {
            if c >= eps_gamma && !self.consumed.contains(&(u, i, kind)) {
                match kind {
                    FeedbackKind::Fp => fp.push((u, i)),
                    FeedbackKind::Fn => fn_.push((u, i)),
                }
            }
        }
        (fp, fn_)
    }

    pub fn consume(&mut self, user: usize, item: usize, kind: FeedbackKind) {
        self.consumed.insert((user, item, kind));
    }

    pub fn is_consumed(&self, user: usize, item: usize, kind: FeedbackKind) -> bool {
        self.consumed.contains(&(user, item, kind))
    }

    /// Records a failed update. The first failure leaves the pair queued;
    /// the second consumes it.
    pub fn fail(&mut self, user: usize, item: usize, kind: FeedbackKind) {
        if !self.retried.insert((user, item, kind)) {
            self.consume(user, item, kind);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateLogEntry {
    pub epoch: u64,
    pub user: usize,
    pub item: usize,
    pub kind: FeedbackKind,
    pub version: Option<u32>,
    pub error: Option<String>,
}

/// Current preference per user plus the append-only record of every version.
#[derive(Debug, Clone, Default)]
pub struct PreferenceStore {
    current: BTreeMap<usize, UserPreference>,
    records: Vec<StoreRecord>,
}

/// One line of the preference store file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub user: usize,
    pub version: u32,
    pub text: String,
    pub trigger: Option<Trigger>,
}

impl PreferenceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, user: usize) -> Option<&UserPreference> {
        self.current.get(&user)
    }

    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }

    pub fn insert(&mut self, pref: UserPreference) {
        self.records.push(StoreRecord {
            user: pref.user,
            version: pref.version,
            text: pref.text.clone(),
            trigger: pref.history.last().map(|e| e.trigger),
        });
        self.current.insert(pref.user, pref);
    }

    pub fn records(&self) -> &[StoreRecord] {
        &self.records
    }

    /// Applies every confident FP/FN pair, user by user and item by item,
    /// bumping the version once per successful update.
    pub fn apply_confident(
        &mut self,
        backend: &dyn PreferenceBackend,
        counters: &mut ConfidenceCounters,
        eps_gamma: u32,
        profile_of: impl Fn(usize) -> Option<ItemProfile>,
        epoch: u64,
    ) -> Vec<UpdateLogEntry> {
        let (fp, fn_) = counters.confident_items(eps_gamma);
        let mut work: Vec<(usize, usize, FeedbackKind)> = fp
            .into_iter()
            .map(|(u, i)| (u, i, FeedbackKind::Fp))
            .chain(fn_.into_iter().map(|(u, i)| (u, i, FeedbackKind::Fn)))
            .collect();
        work.sort();
        let mut log = Vec::new();
        for (user, item, kind) in work {
            let (Some(pref), Some(profile)) = (self.current.get(&user), profile_of(item)) else {
                // nothing to refine without a summary or a profile
                counters.consume(user, item, kind);
                continue;
            };
            match update_preference(backend, pref, &profile, kind) {
                Ok(next) => {
                    counters.consume(user, item, kind);
                    log.push(UpdateLogEntry {
                        epoch,
                        user,
                        item,
                        kind,
                        version: Some(next.version),
                        error: None,
                    });
                    self.insert(next);
                }
                Err(e) => {
                    counters.fail(user, item, kind);
                    log.push(UpdateLogEntry {
                        epoch,
                        user,
                        item,
                        kind,
                        version: None,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
        log
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for r in &self.records {
            let line = serde_json::to_string(r)?;
            writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    /// Rebuilds a store from its file; the highest version per user wins.
    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut store = Self::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let r: StoreRecord = serde_json::from_str(line)?;
            let entry = store.current.entry(r.user).or_insert_with(|| UserPreference {
                user: r.user,
                text: r.text.clone(),
                version: r.version,
                history: Vec::new(),
            });
            if r.version >= entry.version {
                entry.version = r.version;
                entry.text = r.text.clone();
            }
            if let Some(trigger) = r.trigger {
                entry.history.push(PreferenceEvent {
                    version: r.version,
                    trigger,
                });
            }
            store.records.push(r);
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Affinity;
    use crate::scorer::OracleBackend;
    use proptest::prelude::*;
    use std::sync::Arc;

    struct Half;
    impl Affinity for Half {
        fn affinity(&self, _: usize, _: usize) -> f64 {
            0.5
        }
    }

    fn oracle() -> OracleBackend {
        OracleBackend::new(Arc::new(Half))
    }

    fn profile(item: usize) -> ItemProfile {
        ItemProfile {
            item,
            title: format!("Item {item}"),
            description: "d".into(),
        }
    }

    #[test]
    fn summarize_with_oracle() {
        let (a, b) = (profile(1), profile(2));
        let p = summarize_preference(&oracle(), 0, &[&a, &b]).unwrap();
        assert_eq!(p.version, 1);
        assert!(p.text.contains("Item 1") && p.text.contains("Item 2"));
        assert_eq!(p, summarize_preference(&oracle(), 0, &[&a, &b]).unwrap());
        assert!(summarize_preference(&oracle(), 0, &[]).is_err());
    }

    #[test]
    fn updates_bump_version_and_move_markers() {
        let (a, b, c) = (profile(1), profile(2), profile(3));
        let p = summarize_preference(&oracle(), 0, &[&a, &b]).unwrap();
        let p2 = update_preference(&oracle(), &p, &a, FeedbackKind::Fp).unwrap();
        assert_eq!(p2.version, 2);
        assert!(p.text.contains("[[Item 1]]") && !p2.text.contains("[[Item 1]]"));
        let p3 = update_preference(&oracle(), &p2, &c, FeedbackKind::Fn).unwrap();
        assert_eq!(p3.version, 3);
        assert!(p3.text.contains("[[Item 3]]"));
        assert_eq!(p3.history.len(), 2);
    }

    #[test]
    fn detection_picks_extremes() {
        let pos: Vec<((usize, usize), f64)> = [0.5, 0.1, 0.9, 0.05, 0.3].iter().enumerate().map(|(k, &v)| ((0, k), v)).collect();
        let neg: Vec<((usize, usize), f64)> = [0.5, 0.1, 0.9, 0.05, 0.3].iter().enumerate().map(|(k, &v)| ((1, k), v)).collect();
        assert_eq!(detect_fp_fn(&pos, &neg, 0), EpochFlags::default());
        let f = detect_fp_fn(&pos, &neg, 2);
        assert_eq!(f.fp, vec![(0, 3), (0, 1)]);
        assert_eq!(detect_fp_fn(&pos, &neg, 1).fn_, vec![(1, 2)]);
    }

    #[test]
    fn confidence_accumulates_and_consumes() {
        let mut c = ConfidenceCounters::new();
        let flags = EpochFlags {
            fp: vec![(0, 1)],
            fn_: vec![],
        };
        c.update(&flags);
        c.update(&flags);
        assert!(c.confident_items(3).0.is_empty());
        c.update(&flags);
        assert_eq!(c.confident_items(3).0, vec![(0, 1)]);
        c.consume(0, 1, FeedbackKind::Fp);
        c.update(&flags);
        assert!(c.confident_items(3).0.is_empty());
    }

    #[test]
    fn store_applies_and_round_trips() {
        let mut store = PreferenceStore::new();
        let (a, b) = (profile(1), profile(2));
        store.insert(summarize_preference(&oracle(), 0, &[&a, &b]).unwrap());
        let mut c = ConfidenceCounters::new();
        for _ in 0..3 {
            c.update(&EpochFlags {
                fp: vec![(0, 1)],
                fn_: vec![(0, 7)],
            });
        }
        let log = store.apply_confident(&oracle(), &mut c, 3, |i| Some(profile(i)), 4);
        assert_eq!(log.len(), 2);
        let p = store.get(0).unwrap().clone();
        assert_eq!(p.version, 3);
        assert!(!p.text.contains("[[Item 1]]") && p.text.contains("[[Item 7]]"));
        assert!(store.apply_confident(&oracle(), &mut c, 3, |i| Some(profile(i)), 5).is_empty());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prefs.jsonl");
        store.write_jsonl(&path).unwrap();
        let back = PreferenceStore::read_jsonl(&path).unwrap();
        assert_eq!(back.get(0).unwrap().text, p.text);
        assert_eq!(back.get(0).unwrap().version, 3);
    }

    proptest! {
        #[test]
        fn detection_matches_full_sort(vals in proptest::collection::vec(0.0f64..1.0, 0..300), count in 0usize..40) {
            let pos: Vec<((usize, usize), f64)> = vals.iter().enumerate().map(|(k, &v)| ((k, 0), v)).collect();
            let flags = detect_fp_fn(&pos, &pos, count);
            let mut asc = pos.clone();
            asc.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            let mut desc = pos.clone();
            desc.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let exp_fp: Vec<_> = asc.iter().take(count).map(|x| x.0).collect();
            let exp_fn: Vec<_> = desc.iter().take(count).map(|x| x.0).collect();
            prop_assert_eq!(flags.fp, exp_fp);
            prop_assert_eq!(flags.fn_, exp_fn);
        }
    }
}
