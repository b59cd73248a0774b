//! Plugs a hand-written preference backend into training.
//!
//! The backend keeps no model of the user at all: it scores an item by how
//! many words its title shares with the preference text.

use llmhd::data::ItemProfile;
use llmhd::denoise::ScheduleConfig;
use llmhd::scorer::{FeedbackKind, PreferenceBackend, Score, ScoreRequest, ScorerError};
use llmhd::synth::{SyntheticWorld, WorldParams};
use llmhd::trainer::{train, Ablation, RunConfig};

struct WordOverlap;

impl PreferenceBackend for WordOverlap {
    fn name(&self) -> &'static str {
        "word-overlap"
    }

    fn score(&self, request: &ScoreRequest) -> Result<Score, ScorerError> {
        let shared = request
            .item_profile
            .title
            .split_whitespace()
            .filter(|w| request.preference_text.contains(w))
            .count();
        Ok(Score::new((1 + 3 * shared).min(10) as u8).expect("in range"))
    }

    fn summarize(&self, _user: usize, profiles: &[&ItemProfile]) -> Result<String, ScorerError> {
        let titles: Vec<&str> = profiles.iter().map(|p| p.title.as_str()).collect();
        Ok(format!("Likes {}", titles.join(", ")))
    }

    fn refine(&self, _user: usize, preference: &str, profile: &ItemProfile, kind: FeedbackKind) -> Result<String, ScorerError> {
        Ok(match kind {
            FeedbackKind::Fp => preference.replace(&profile.title, ""),
            FeedbackKind::Fn => format!("{preference}, {}", profile.title),
        })
    }
}

fn main() -> llmhd::Result<()> {
    let world = SyntheticWorld::generate(&WorldParams {
        users: 120,
        items: 100,
        seed: 3,
        ..WorldParams::default()
    })?;
    let split = world.split([0.8, 0.1, 0.1], 3)?;
    let cfg = RunConfig {
        dim: 16,
        batch_size: 128,
        max_epochs: 5,
        learning_rate: 0.01,
        seed: 3,
        schedule: ScheduleConfig {
            alpha: 5,
            eps_l_max: 0.2,
            m: 2,
            ..ScheduleConfig::default()
        },
        ablation: Ablation::full(),
        ..RunConfig::default()
    };
    let out = train(&cfg, &split, &world.profiles, Some(&WordOverlap))?;
    let r = &out.report;
    println!("summaries {} ({} failed)", r.summaries, r.summary_failures);
    for e in &r.epochs {
        println!(
            "epoch {:>2}: dropped {:>4}, candidates {:>4}, rescued {:>3}, updates {:>3}",
            e.epoch, e.noisy, e.hard_candidates, e.rescued, e.preference_updates
        );
    }
    println!("test NDCG@10 {:.4}", r.test_ndcg(10));
    Ok(())
}
