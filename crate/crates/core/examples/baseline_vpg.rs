//! Trains the graph policy and the centralized MLP baseline on the same
//! five-robot task with matched budgets and compares their learning curves.
//!
//! cargo run --release --example baseline_vpg -- [updates]

use gpg::trainer::{train, train_vpg_baseline, LearningCurve, TrainConfig};

fn fifths(curve: &LearningCurve) -> (f64, f64) {
    let r = curve.mean_returns();
    let n = (r.len() / 5).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&r[..n]), mean(&r[r.len() - n..]))
}

fn main() -> gpg::Result<()> {
    let updates = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let mut cfg = TrainConfig::default();
    cfg.env.n_robots = 5;
    cfg.trainer.total_updates = updates;

    let (gcn, gpg_curve) = train(cfg.clone())?;
    let (mlp, vpg_curve) = train_vpg_baseline(cfg)?;
    use gpg::policy::Policy;
    for (name, params, curve) in [
        ("GPG", gcn.num_params(), &gpg_curve),
        ("VPG", mlp.num_params(), &vpg_curve),
    ] {
        let (first, last) = fifths(curve);
        println!("{name}: {params:>6} parameters, mean return first fifth {first:>9.1}, last fifth {last:>9.1}");
    }
    Ok(())
}
