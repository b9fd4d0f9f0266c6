//! Compares a graph fixed at reset against one rebuilt every step, counting
//! the training episodes each needs to reach a smoothed return threshold.
//!
//! cargo run --release --example graph_ablation -- [updates] [n_robots]

use gpg::cli::updates_to_threshold;
use gpg::config::AblationConfig;
use gpg::env::SpawnGenerator;
use gpg::trainer::{train, TrainConfig};

fn main() -> gpg::Result<()> {
    let mut args = std::env::args().skip(1);
    let updates = args.next().and_then(|s| s.parse().ok()).unwrap_or(150);
    let n = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);

    let ablation = AblationConfig::default();
    let mut cfg = TrainConfig::default();
    cfg.trainer.total_updates = updates;
    cfg.env.n_robots = n;
    cfg.env.spawn = SpawnGenerator::Rectangle { width: 5.0, height: 5.0 };
    let threshold = ablation.threshold(&cfg.env);
    println!("threshold {threshold} on a {}-update moving average", ablation.window);

    for seed in [0, 1] {
        for dynamic in [false, true] {
            let mut c = cfg.clone();
            c.trainer.seed = seed;
            c.env.dynamic_graph = dynamic;
            let curve = train(c)?.1;
            let label = if dynamic { "dynamic" } else { "static" };
            match updates_to_threshold(&curve, threshold, ablation.window) {
                Some(u) => println!(
                    "seed {seed} {label:>7}: reached after {} episodes",
                    (u + 1) * cfg.trainer.episodes_per_update
                ),
                None => println!("seed {seed} {label:>7}: not reached in {updates} updates"),
            }
        }
    }
    Ok(())
}
