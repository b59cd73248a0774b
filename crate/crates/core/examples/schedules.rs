//! Prints the drop and threshold schedules and partitions a toy batch.

use llmhd::denoise::{epsilon_l, epsilon_neg, epsilon_pair, epsilon_pos, partition_by_loss, population_variance, ScheduleConfig};

fn main() {
    let cfg = ScheduleConfig {
        alpha: 100,
        eps_l_max: 0.2,
        ..ScheduleConfig::default()
    };
    println!("{:>6} {:>5} {:>6} {:>6} {:>6}", "T", "drop", "pos", "neg", "pair");
    for t in [0, 50, 100, 200, 400, 800] {
        println!(
            "{t:>6} {:>5} {:>6.2} {:>6.2} {:>6.2}",
            epsilon_l(t, &cfg, 64),
            epsilon_pos(t, &cfg),
            epsilon_neg(t, &cfg),
            epsilon_pair(t, &cfg)
        );
    }

    let losses = [0.2, 1.9, 0.4, 0.3, 2.4, 0.1];
    let p = partition_by_loss(&losses, 2);
    println!("noisy {:?} clean {:?}", p.noisy, p.clean);
    println!("variance of a stable history {:.4}", population_variance(&[0.9, 0.91, 0.89]));
    println!("variance of a swinging one   {:.4}", population_variance(&[0.2, 0.9, 0.4]));
}
