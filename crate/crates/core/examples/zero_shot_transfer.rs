//! Trains on three robots, then deploys the frozen weights on larger swarms
//! and unseen formations.
//!
//! cargo run --release --example zero_shot_transfer -- [checkpoint]

use gpg::env::record::{episode_rows, write_trajectory_csv};
use gpg::env::EnvConfig;
use gpg::policy::GcnPolicy;
use gpg::trainer::{train, ActionMode, TrainConfig};
use gpg::transfer::{sweep_transfer, zero_shot_eval, FormationKind, FormationSpec};

fn main() -> gpg::Result<()> {
    let policy = match std::env::args().nth(1) {
        Some(path) => GcnPolicy::load(path.as_ref())?,
        None => train(TrainConfig::default())?.0,
    };
    let env = EnvConfig {
        horizon: 200,
        ..EnvConfig::default()
    };

    let specs: Vec<FormationSpec> = [
        (FormationKind::Line, 21),
        (FormationKind::Line, 51),
        (FormationKind::Arrowhead, 21),
        (FormationKind::FigureEight, 21),
    ]
    .into_iter()
    .map(|(kind, n_robots)| FormationSpec {
        kind,
        n_robots,
        ..FormationSpec::default()
    })
    .collect();
    for r in sweep_transfer(&policy, &specs, &env, 1, 0)? {
        println!(
            "{:>12} N={:>2}: coverage {:.2}, collision steps {:>3}, steps to cover {:>3}, mean final distance {:.3}",
            r.spec_name, r.n_robots, r.coverage, r.collisions, r.steps_to_cover, r.mean_final_dist
        );
    }

    let run = zero_shot_eval(&policy, &specs[0], &env, 1, 0, ActionMode::Mean)?;
    let out = std::env::temp_dir().join("gpg-line-21.csv");
    write_trajectory_csv(&out, &episode_rows(0, &run.states, &run.actions, &run.rewards))?;
    println!("trajectory written to {}", out.display());
    Ok(())
}
