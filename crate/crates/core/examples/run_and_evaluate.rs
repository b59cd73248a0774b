//! Writes a config, trains into a run directory and re-evaluates the saved
//! checkpoint on the validation and test splits.

use llmhd::config::ExperimentConfig;
use llmhd::eval::EvalSplit;
use llmhd::runner;
use llmhd::synth::WorldParams;

fn main() -> llmhd::Result<()> {
    let root = std::env::temp_dir().join("llmhd-example-run");
    runner::synth(
        &WorldParams {
            users: 150,
            items: 120,
            seed: 5,
            ..WorldParams::default()
        },
        &root.join("world"),
    )?;
    let text = r#"
[data]
world = "world"

[train]
dim = 16
batch_size = 128
max_epochs = 6
learning_rate = 0.01
seed = 5

[schedule]
alpha = 10
eps_l_max = 0.2
m = 3

[scorer]
listed_weight = 0.3
"#;
    let path = root.join("run.toml");
    std::fs::write(&path, text).map_err(|e| llmhd::Error::io(&path, e))?;
    let cfg = ExperimentConfig::load(&path)?;

    let outcome = runner::run_training(&cfg, &root.join("full"))?;
    println!("run directory {}", outcome.dir.display());
    for entry in std::fs::read_dir(&outcome.dir).map_err(|e| llmhd::Error::io(&outcome.dir, e))?.flatten() {
        println!("  {}", entry.file_name().to_string_lossy());
    }

    let ckpt = outcome.dir.join("best.json");
    for split in [EvalSplit::Valid, EvalSplit::Test] {
        let m = runner::evaluate_checkpoint(&ckpt, None, split, &[5, 10])?;
        println!("{split:?}: NDCG@10 {:.4}  Recall@10 {:.4}", m.ndcg_at(10), m.recall_at(10));
    }
    println!("stored in report: test NDCG@10 {:.4}", outcome.report.test_ndcg(10));
    Ok(())
}
