//! Preference scoring: a single contract mapping (user preference text, item
//! profile) to an integer score on a 1–10 scale, plus the summarize/refine
//! calls that maintain the preference text.
//!
//! Backends:
//! - [`OracleBackend`]: deterministic, driven by a ground-truth affinity.
//! - [`RemoteBackend`]: an OpenAI-style chat-completions endpoint.
//! - [`CachedBackend`]: wraps another backend with a persistent score cache.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ItemProfile;

mod cache;
mod oracle;
pub mod prompt;
mod remote;

pub use cache::{CacheRecord, CachedBackend, ScoreCache};
pub use oracle::{oracle_score, marker, OracleBackend};
pub use prompt::{parse_preference_response, parse_score_response, render_score_prompt};
pub use remote::{remote_call, EndpointConfig, RemoteBackend};

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("scoring unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: u32, message: String },
    #[error("endpoint rejected request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("could not parse response ({reason}): {raw:?}")]
    Parse { raw: String, reason: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("affinity {0} outside [0, 1]")]
    AffinityOutOfRange(f64),
    #[error("score cache: {0}")]
    Cache(String),
}

impl ScorerError {
    /// Errors originating from the remote transport (as opposed to parsing).
    pub fn is_remote(&self) -> bool {
        matches!(
            self,
            ScorerError::Unavailable { .. } | ScorerError::Rejected { .. } | ScorerError::Protocol(_)
        )
    }
}

/// Integer preference score in `[1, 10]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Score(u8);

impl Score {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 10;

    pub fn new(value: u8) -> Option<Self> {
        (Self::MIN..=Self::MAX).contains(&value).then_some(Self(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for Score {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Score::new(value).ok_or_else(|| format!("score {value} outside [1, 10]"))
    }
}

impl From<Score> for u8 {
    fn from(s: Score) -> u8 {
        s.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub user: usize,
    pub item: usize,
    pub preference_text: String,
    pub item_profile: ItemProfile,
    pub preference_version: u32,
}

impl ScoreRequest {
    pub fn validate(&self) -> Result<(), ScorerError> {
        if self.preference_version < 1 {
            return Err(ScorerError::InvalidRequest("preference_version must be at least 1".into()));
        }
        if self.item_profile.item != self.item {
            return Err(ScorerError::InvalidRequest(format!(
                "profile for item {} attached to request for item {}",
                self.item_profile.item, self.item
            )));
        }
        Ok(())
    }
}

/// Which way a detected mislabel should move the preference text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FeedbackKind {
    /// An interacted item the user likely dislikes: remove its traits.
    Fp,
    /// A non-interacted item the user likely likes: add its traits.
    Fn,
}

pub trait PreferenceBackend: Send + Sync {
    fn name(&self) -> &'static str;

    fn score(&self, request: &ScoreRequest) -> Result<Score, ScorerError>;

    /// Summarizes a user's preference from the profiles of interacted items.
    fn summarize(&self, user: usize, profiles: &[&ItemProfile]) -> Result<String, ScorerError>;

    /// Rewrites `preference` to drop (FP) or absorb (FN) the item's traits.
    fn refine(
        &self,
        user: usize,
        preference: &str,
        profile: &ItemProfile,
        kind: FeedbackKind,
    ) -> Result<String, ScorerError>;
}

impl<B: PreferenceBackend + ?Sized> PreferenceBackend for std::sync::Arc<B> {
    fn name(&self) -> &'static str {
        (**self).name()
    }
    fn score(&self, request: &ScoreRequest) -> Result<Score, ScorerError> {
        (**self).score(request)
    }
    fn summarize(&self, user: usize, profiles: &[&ItemProfile]) -> Result<String, ScorerError> {
        (**self).summarize(user, profiles)
    }
    fn refine(&self, user: usize, preference: &str, profile: &ItemProfile, kind: FeedbackKind) -> Result<String, ScorerError> {
        (**self).refine(user, preference, profile, kind)
    }
}

/// Validates the request and scores it with `backend`.
pub fn score(backend: &dyn PreferenceBackend, request: &ScoreRequest) -> Result<Score, ScorerError> {
    request.validate()?;
    let s = backend.score(request)?;
    assert!((Score::MIN..=Score::MAX).contains(&s.value()), "backend produced out-of-range score");
    Ok(s)
}

/// Scores `requests` with up to `parallelism` calls in flight; results keep
/// the request order.
pub fn score_many(
    backend: &dyn PreferenceBackend,
    requests: &[ScoreRequest],
    parallelism: usize,
) -> Vec<Result<Score, ScorerError>> {
    let workers = parallelism.max(1).min(requests.len());
    if workers <= 1 {
        return requests.iter().map(|r| score(backend, r)).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<Score, ScorerError>>> = (0..requests.len()).map(|_| None).collect();
    let results: Vec<Vec<(usize, Result<Score, ScorerError>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let k = next.fetch_add(1, Ordering::Relaxed);
                        if k >= requests.len() {
                            break;
                        }
                        done.push((k, score(backend, &requests[k])));
                    }
                    done
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("scoring worker panicked")).collect()
    });
    for (k, r) in results.into_iter().flatten() {
        slots[k] = Some(r);
    }
    slots.into_iter().map(|r| r.expect("every request scored")).collect()
}
