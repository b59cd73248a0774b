//! Compares ablation variants, including random pruning, on one world.

use llmhd::denoise::ScheduleConfig;
use llmhd::synth::{SyntheticWorld, WorldParams};
use llmhd::trainer::{train, Ablation, RunConfig};

fn main() -> llmhd::Result<()> {
    let world = SyntheticWorld::generate(&WorldParams {
        users: 150,
        items: 120,
        noise_ratio: 0.15,
        seed: 2,
        ..WorldParams::default()
    })?;
    let split = world.split([0.8, 0.1, 0.1], 2)?;
    let oracle = world.oracle().with_listed_weight(0.3);
    for spec in ["none", "LD", "LD,LMS", "LD,RS,LMS", "LD,VS,LMS", "LD,VS,LMS,PU"] {
        let cfg = RunConfig {
            dim: 16,
            batch_size: 128,
            max_epochs: 8,
            learning_rate: 0.01,
            seed: 2,
            schedule: ScheduleConfig {
                alpha: 10,
                eps_l_max: 0.2,
                m: 3,
                ..ScheduleConfig::default()
            },
            ablation: Ablation::parse(spec).map_err(llmhd::Error::Config)?,
            ..RunConfig::default()
        };
        let r = train(&cfg, &split, &world.profiles, Some(&oracle))?.report;
        let updates: usize = r.epochs.iter().map(|e| e.preference_updates).sum();
        println!(
            "{:<14} NDCG@10 {:.4}  rescued {:>4}  preference updates {:>3}",
            cfg.ablation.label(),
            r.test_ndcg(10),
            r.noise.rescued,
            updates
        );
    }
    Ok(())
}
