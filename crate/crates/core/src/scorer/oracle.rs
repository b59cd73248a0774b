use std::sync::Arc;

use crate::data::{Affinity, ItemProfile};

use super::{FeedbackKind, PreferenceBackend, Score, ScoreRequest, ScorerError};

/// Maps an affinity in `[0, 1]` onto the 1–10 scale: `1 + ⌊10a⌋`, capped at 10.
pub fn oracle_score(affinity: f64) -> Result<Score, ScorerError> {
    if !(0.0..=1.0).contains(&affinity) {
        return Err(ScorerError::AffinityOutOfRange(affinity));
    }
    let bin = (affinity * 10.0).floor() as u8;
    Ok(Score::new((1 + bin).min(Score::MAX)).expect("bin within scale"))
}

/// Token standing for an item inside oracle-generated preference texts.
pub fn marker(profile: &ItemProfile) -> String {
    format!("[[{}]]", profile.title.trim())
}

const SUMMARY_PREFIX: &str = "Enjoys items like:";

/// Deterministic stand-in for a language model.
///
/// Scores come from the ground-truth affinity. The preference text is a
/// list of item markers; an item whose marker appears in the text is
/// perceived as closer to the user's taste, pulled toward 1 by
/// `listed_weight`. Summaries list every interacted item, so planted noise
/// inflates its own scores until a false-positive refinement removes it.
#[derive(Clone)]
pub struct OracleBackend {
    affinity: Arc<dyn Affinity>,
    listed_weight: f64,
}

impl OracleBackend {
    pub fn new(affinity: Arc<dyn Affinity>) -> Self {
        Self {
            affinity,
            listed_weight: 0.0,
        }
    }

    pub fn with_listed_weight(mut self, weight: f64) -> Self {
        self.listed_weight = weight.clamp(0.0, 1.0);
        self
    }

    pub fn listed_weight(&self) -> f64 {
        self.listed_weight
    }

    pub fn perceived_affinity(&self, request: &ScoreRequest) -> f64 {
        let a = self.affinity.affinity(request.user, request.item).clamp(0.0, 1.0);
        if request.preference_text.contains(&marker(&request.item_profile)) {
            a + self.listed_weight * (1.0 - a)
        } else {
            a
        }
    }
}

impl PreferenceBackend for OracleBackend {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn score(&self, request: &ScoreRequest) -> Result<Score, ScorerError> {
        oracle_score(self.perceived_affinity(request))
    }

    fn summarize(&self, _user: usize, profiles: &[&ItemProfile]) -> Result<String, ScorerError> {
        if profiles.is_empty() {
            return Err(ScorerError::InvalidRequest("no profiles to summarize".into()));
        }
        let mut text = String::from(SUMMARY_PREFIX);
        for p in profiles {
            text.push(' ');
            text.push_str(&marker(p));
        }
        Ok(text)
    }

    fn refine(
        &self,
        _user: usize,
        preference: &str,
        profile: &ItemProfile,
        kind: FeedbackKind,
    ) -> Result<String, ScorerError> {
        let token = marker(profile);
        let text = match kind {
            FeedbackKind::Fp => preference.replace(&token, ""),
            FeedbackKind::Fn if preference.contains(&token) => preference.to_string(),
            FeedbackKind::Fn => format!("{preference} {token}"),
        };
        Ok(text.split_whitespace().collect::<Vec<_>>().join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Flat(f64);
    impl Affinity for Flat {
        fn affinity(&self, _: usize, _: usize) -> f64 {
            self.0
        }
    }

    fn profile(item: usize, title: &str) -> ItemProfile {
        ItemProfile {
            item,
            title: title.into(),
            description: String::new(),
        }
    }

    #[test]
    fn binning() {
        assert_eq!(oracle_score(1.0).unwrap().value(), 10);
        assert_eq!(oracle_score(0.95).unwrap().value(), 10);
        assert_eq!(oracle_score(0.0).unwrap().value(), 1);
        assert_eq!(oracle_score(0.55).unwrap().value(), 6);
        assert_eq!(oracle_score(0.049).unwrap().value(), 1);
        assert!(oracle_score(1.01).is_err());
        assert!(oracle_score(-0.1).is_err());
        // brute-force bin edges: a in [k/10, (k+1)/10) lands in bin k+1
        for k in 0..10u8 {
            let lo = f64::from(k) / 10.0 + 1e-9;
            let hi = (f64::from(k) + 1.0) / 10.0 - 1e-9;
            assert_eq!(oracle_score(lo).unwrap().value(), k + 1);
            assert_eq!(oracle_score(hi).unwrap().value(), k + 1);
        }
    }

    #[test]
    fn monotone() {
        let mut prev = 0;
        for k in 0..=1000 {
            let s = oracle_score(f64::from(k) / 1000.0).unwrap().value();
            assert!(s >= prev);
            prev = s;
        }
    }

    #[test]
    fn summary_and_refinement_markers() {
        let oracle = OracleBackend::new(Arc::new(Flat(0.2)));
        let a = profile(0, "Alpha");
        let b = profile(1, "Beta");
        let text = oracle.summarize(0, &[&a, &b]).unwrap();
        assert!(text.contains("[[Alpha]]") && text.contains("[[Beta]]"));
        assert_eq!(text, oracle.summarize(0, &[&a, &b]).unwrap());
        let without = oracle.refine(0, &text, &a, FeedbackKind::Fp).unwrap();
        assert!(!without.contains("[[Alpha]]") && without.contains("[[Beta]]"));
        let c = profile(2, "Gamma");
        let with = oracle.refine(0, &without, &c, FeedbackKind::Fn).unwrap();
        assert!(with.contains("[[Gamma]]"));
        assert!(oracle.summarize(0, &[]).is_err());
    }

    #[test]
    fn listed_items_are_boosted() {
        let oracle = OracleBackend::new(Arc::new(Flat(0.2))).with_listed_weight(0.5);
        let a = profile(3, "Alpha");
        let req = |text: &str| ScoreRequest {
            user: 0,
            item: 3,
            preference_text: text.into(),
            item_profile: a.clone(),
            preference_version: 1,
        };
        assert_eq!(oracle.score(&req("Enjoys items like:")).unwrap().value(), 3);
        assert_eq!(oracle.score(&req("Enjoys items like: [[Alpha]]")).unwrap().value(), 7);
    }
}
