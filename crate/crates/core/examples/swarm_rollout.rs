//! Steps the swarm environment by hand with a proportional controller, under
//! both dynamics models, and reports reward, coverage and collisions.

use gpg::env::{coverage, Dynamics, EnvConfig, SwarmEnv};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn run(dynamics: Dynamics, gain: f64) -> gpg::Result<()> {
    let mut env = SwarmEnv::new(EnvConfig {
        n_robots: 6,
        dynamics,
        horizon: 100,
        spawn: gpg::env::SpawnGenerator::Rectangle { width: 5.0, height: 5.0 },
        ..EnvConfig::default()
    })?;
    env.reset(&mut ChaCha8Rng::seed_from_u64(3))?;
    let mut total = 0.0;
    let mut collisions = 0;
    let mut first_cover = None;
    for t in 0..env.config().horizon {
        let s = env.state();
        let a = DMatrix::from_fn(s.num_robots(), 2, |i, j| {
            let to_goal = gain * (s.goals[i][j] - s.positions[i][j]);
            match dynamics {
                Dynamics::PointMass => to_goal,
                // damp the velocity so the integrator settles
                Dynamics::SingleIntegrator => to_goal - 20.0 * s.velocities[i][j],
            }
        });
        let out = env.step(&a)?;
        total += out.reward;
        collisions += out.collision as usize;
        if out.all_covered && first_cover.is_none() {
            first_cover = Some(t);
        }
        if out.done {
            break;
        }
    }
    let phi = coverage(env.state(), env.config().epsilon);
    println!(
        "{dynamics:?}: return {total:.2}, first covered at step {first_cover:?}, final coverage {}/{}, collision steps {collisions}",
        phi.covered_count(),
        env.state().num_robots()
    );
    Ok(())
}

fn main() -> gpg::Result<()> {
    run(Dynamics::PointMass, 0.5)?;
    run(Dynamics::SingleIntegrator, 10.0)
}
