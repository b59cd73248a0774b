//! Generates a synthetic world with planted noise, saves it and splits it.

use llmhd::synth::{SyntheticWorld, WorldParams};

fn main() -> llmhd::Result<()> {
    let params = WorldParams {
        users: 200,
        items: 150,
        noise_ratio: 0.15,
        seed: 4,
        ..WorldParams::default()
    };
    let world = SyntheticWorld::generate(&params)?;
    let dir = std::env::temp_dir().join("llmhd-example-world");
    world.save(&dir)?;
    let reloaded = SyntheticWorld::load(&dir)?;
    assert_eq!(reloaded.dataset.len(), world.dataset.len());

    let split = world.split([0.8, 0.1, 0.1], 0)?;
    println!("{} interactions, {} planted, saved to {}", world.dataset.len(), world.planted(), dir.display());
    println!(
        "train {} / valid {} / test {}; one fixed negative per train row: {}",
        split.train.len(),
        split.valid.len(),
        split.test.len(),
        split.negatives.len() == split.train.len()
    );
    let planted_in_train = split.train.interactions.iter().filter(|x| x.is_planted()).count();
    println!("planted noise in train: {planted_in_train}");
    Ok(())
}
