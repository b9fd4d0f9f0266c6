//! Trains the graph policy on the default three-robot task, evaluates it with
//! mean actions and writes the checkpoint and learning curve.
//!
//! cargo run --release --example train_three_robots -- [updates] [seed] [out_dir]

use std::path::PathBuf;

use gpg::trainer::{evaluate, train, ActionMode, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut cfg = TrainConfig::default();
    if let Some(u) = args.next() {
        cfg.trainer.total_updates = u.parse().expect("updates");
    }
    if let Some(s) = args.next() {
        cfg.trainer.seed = s.parse().expect("seed");
    }
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("gpg-three-robots"));
    std::fs::create_dir_all(&out)?;

    let (policy, curve) = train(cfg.clone())?;
    for r in curve.records.iter().step_by((curve.records.len() / 10).max(1)) {
        println!(
            "update {:>4}  mean return {:>9.2}  covered {:.2}  collided {:.2}",
            r.update, r.mean_return, r.coverage_rate, r.collision_rate
        );
    }
    let eval = evaluate(&policy, &cfg.env, 100, cfg.trainer.seed, ActionMode::Mean)?;
    println!("{eval:?}");

    policy.save(&out.join("policy.ckpt"))?;
    curve.write_csv(&out.join("curve.csv"))?;
    println!("wrote {}", out.display());
    Ok(())
}
