use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::data::ItemProfile;

use super::{FeedbackKind, PreferenceBackend, Score, ScoreRequest, ScorerError};

type Key = (usize, usize, u32);

/// One line of the append-only cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub user: usize,
    pub item: usize,
    pub pref_version: u32,
    pub score: Score,
    pub timestamp: u64,
}

/// Persistent `(user, item, preference version) → score` store.
///
/// Reads are concurrent; writes are serialized through the append handle.
pub struct ScoreCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<Key, Score>>,
    writer: Mutex<Option<File>>,
    skipped: usize,
}

impl ScoreCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
            skipped: 0,
        }
    }

    /// Opens (or creates) a cache file, loading existing records. Corrupted
    /// lines are skipped and counted.
    pub fn open(path: &Path) -> Result<Self, ScorerError> {
        let mut entries = HashMap::new();
        let mut skipped = 0;
        if path.exists() {
            let text = fs::read_to_string(path).map_err(|e| ScorerError::Cache(format!("{}: {e}", path.display())))?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                match serde_json::from_str::<CacheRecord>(line) {
                    Ok(r) => {
                        entries.insert((r.user, r.item, r.pref_version), r.score);
                    }
                    Err(_) => skipped += 1,
                }
            }
            if skipped > 0 {
                log::warn!("score cache {}: skipped {skipped} corrupted record(s)", path.display());
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ScorerError::Cache(format!("{}: {e}", path.display())))?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
            skipped,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, user: usize, item: usize, pref_version: u32) -> Option<Score> {
        self.entries
            .read()
            .expect("cache lock")
            .get(&(user, item, pref_version))
            .copied()
    }

    pub fn put(&self, user: usize, item: usize, pref_version: u32, score: Score) -> Result<(), ScorerError> {
        let mut writer = self.writer.lock().expect("cache writer lock");
        if let Some(file) = writer.as_mut() {
            let record = CacheRecord {
                user,
                item,
                pref_version,
                score,
                timestamp: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            };
            let mut line = serde_json::to_string(&record).map_err(|e| ScorerError::Cache(e.to_string()))?;
            line.push('\n');
            file.write_all(line.as_bytes())
                .map_err(|e| ScorerError::Cache(e.to_string()))?;
        }
        self.entries
            .write()
            .expect("cache lock")
            .insert((user, item, pref_version), score);
        Ok(())
    }
}

/// Serves repeated `(user, item, preference version)` requests from a cache
/// and forwards misses to the wrapped backend.
pub struct CachedBackend<B> {
    inner: B,
    cache: ScoreCache,
}

impl<B: PreferenceBackend> CachedBackend<B> {
    pub fn new(inner: B, cache: ScoreCache) -> Self {
        Self { inner, cache }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn cache(&self) -> &ScoreCache {
        &self.cache
    }
}

impl<B: PreferenceBackend> PreferenceBackend for CachedBackend<B> {
    fn name(&self) -> &'static str {
        "cached"
    }

    fn score(&self, request: &ScoreRequest) -> Result<Score, ScorerError> {
        if let Some(s) = self.cache.get(request.user, request.item, request.preference_version) {
            return Ok(s);
        }
        let s = self.inner.score(request)?;
        self.cache.put(request.user, request.item, request.preference_version, s)?;
        Ok(s)
    }

    fn summarize(&self, user: usize, profiles: &[&ItemProfile]) -> Result<String, ScorerError> {
        self.inner.summarize(user, profiles)
    }

    fn refine(&self, user: usize, preference: &str, profile: &ItemProfile, kind: FeedbackKind) -> Result<String, ScorerError> {
        self.inner.refine(user, preference, profile, kind)
    }
}
