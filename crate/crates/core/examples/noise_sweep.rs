//! A small noise sweep: two ratios, two seeds, three methods.

use llmhd::config::ExperimentConfig;
use llmhd::runner;
use llmhd::synth::WorldParams;
use llmhd::trainer::Ablation;

fn main() -> llmhd::Result<()> {
    let root = std::env::temp_dir().join("llmhd-example-sweep");
    runner::synth(
        &WorldParams {
            users: 120,
            items: 100,
            ..WorldParams::default()
        },
        &root.join("world"),
    )?;
    let mut cfg = ExperimentConfig::from_toml(
        "[train]\ndim = 16\nbatch_size = 128\nmax_epochs = 5\nlearning_rate = 0.01\n\n\
         [schedule]\nalpha = 10\neps_l_max = 0.2\nm = 3\n\n[scorer]\nlisted_weight = 0.3\n",
    )?;
    cfg.data.world = Some(root.join("world"));

    let methods = [Ablation::vanilla(), Ablation::loss_drop_only(), Ablation::full()];
    let rows = runner::noise_sweep(&cfg, &[0.1, 0.2], 2, &methods, 2, &root.join("sweep"))?;
    for r in &rows {
        println!(
            "ratio {:.2} seed {} {:<14} NDCG@10 {:.4}",
            r.ratio,
            r.seed,
            r.method,
            r.test_ndcg.get(&10).copied().unwrap_or(0.0)
        );
    }
    println!("summary table: {}", root.join("sweep/sweep.csv").display());
    Ok(())
}
