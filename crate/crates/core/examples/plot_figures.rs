//! Writes a short learning curve and a transfer trajectory, then renders the
//! three SVG figure kinds from them.

use gpg::env::record::{episode_rows, write_trajectory_csv};
use gpg::env::EnvConfig;
use gpg::plot::{plot, PlotKind};
use gpg::trainer::{train, ActionMode, TrainConfig};
use gpg::transfer::{zero_shot_eval, FormationKind, FormationSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("gpg-figures");
    std::fs::create_dir_all(&dir)?;

    let mut cfg = TrainConfig::default();
    cfg.trainer.total_updates = 60;
    let mut curves = Vec::new();
    for seed in [0, 1] {
        cfg.trainer.seed = seed;
        let (policy, curve) = train(cfg.clone())?;
        let path = dir.join(format!("seed{seed}.csv"));
        curve.write_csv(&path)?;
        curves.push(path);
        if seed == 0 {
            let spec = FormationSpec {
                kind: FormationKind::Arrowhead,
                n_robots: 9,
                ..FormationSpec::default()
            };
            let env = EnvConfig { horizon: 150, ..EnvConfig::default() };
            let run = zero_shot_eval(&policy, &spec, &env, 1, 0, ActionMode::Mean)?;
            write_trajectory_csv(&dir.join("arrowhead.csv"), &episode_rows(0, &run.states, &run.actions, &run.rewards))?;
        }
    }

    let curve_inputs: Vec<&std::path::Path> = curves.iter().map(|p| p.as_path()).collect();
    plot(PlotKind::LearningCurve, &curve_inputs, &dir.join("curve.svg"))?;
    let traj = dir.join("arrowhead.csv");
    plot(PlotKind::Trajectory, &[&traj], &dir.join("trajectory.svg"))?;
    plot(PlotKind::FormationSnapshot, &[&traj], &dir.join("snapshot.svg"))?;
    println!("figures in {}", dir.display());
    Ok(())
}
