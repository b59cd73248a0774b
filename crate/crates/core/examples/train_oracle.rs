//! Trains vanilla BPR and the full method on the same noisy world, scoring
//! hard samples with the affinity oracle.

use llmhd::denoise::ScheduleConfig;
use llmhd::synth::{SyntheticWorld, WorldParams};
use llmhd::trainer::{train, Ablation, RunConfig};

fn main() -> llmhd::Result<()> {
    let world = SyntheticWorld::generate(&WorldParams {
        users: 200,
        items: 150,
        noise_ratio: 0.2,
        seed: 1,
        ..WorldParams::default()
    })?;
    let split = world.split([0.8, 0.1, 0.1], 1)?;
    let oracle = world.oracle().with_listed_weight(0.3);

    for ablation in [Ablation::vanilla(), Ablation::full()] {
        let cfg = RunConfig {
            dim: 16,
            batch_size: 128,
            max_epochs: 10,
            learning_rate: 0.01,
            seed: 1,
            schedule: ScheduleConfig {
                alpha: 10,
                eps_l_max: 0.2,
                m: 3,
                ..ScheduleConfig::default()
            },
            ablation,
            ..RunConfig::default()
        };
        let out = train(&cfg, &split, &world.profiles, Some(&oracle))?;
        let r = &out.report;
        println!(
            "{:<16} best epoch {:>2}  test NDCG@10 {:.4}  Recall@10 {:.4}",
            ablation.label(),
            r.best_epoch,
            r.test_ndcg(10),
            r.test.as_ref().map_or(0.0, |m| m.recall_at(10))
        );
        if let Some(q) = r.quality {
            println!("    dropped precision {:?}, rescued {} ({:?} planted)", q.precision, r.noise.rescued, q.contamination);
        }
    }
    Ok(())
}
