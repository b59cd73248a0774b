//! Traces mean loss and score per epoch for easy, hard and noisy samples.

use llmhd::config::ExperimentConfig;
use llmhd::runner;
use llmhd::synth::WorldParams;

fn main() -> llmhd::Result<()> {
    let root = std::env::temp_dir().join("llmhd-example-trace");
    runner::synth(
        &WorldParams {
            users: 150,
            items: 120,
            noise_ratio: 0.2,
            ..WorldParams::default()
        },
        &root.join("world"),
    )?;
    let mut cfg = ExperimentConfig::from_toml("[train]\nmax_epochs = 8\ndim = 16\nlearning_rate = 0.01\nbatch_size = 128\n")?;
    cfg.data.world = Some(root.join("world"));
    let rows = runner::trace(&cfg, &[1, 3], &root)?;
    for r in rows.iter().filter(|r| r.epoch % 2 == 1) {
        println!("epoch {:>2} {:<8} loss {:.4} score {:+.4}", r.epoch, r.class, r.mean_loss, r.mean_score);
    }
    println!("full table: {}", root.join("trace.csv").display());
    Ok(())
}
