//! Runs one set of graph-filter policy weights on swarms of different sizes
//! and samples actions from the resulting Gaussian.

use gpg::env::{observe, Dynamics, EnvConfig, SwarmEnv};
use gpg::graph::{normalized_laplacian, shift_powers};
use gpg::policy::{log_prob, sample_actions, GcnConfig, GcnPolicy, Policy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gpg::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = GcnConfig::default();
    let policy = GcnPolicy::new(Dynamics::PointMass.obs_width(), &cfg, &mut rng)?;
    println!("widths {:?}, taps {}, {} parameters", policy.widths(), policy.taps(), policy.num_params());
    for (name, rows, cols) in policy.param_shapes() {
        println!("  {name}: {rows}x{cols}");
    }

    for n in [3, 10, 40] {
        let side = 2.0 * (n as f64).sqrt();
        let mut env = SwarmEnv::new(EnvConfig {
            n_robots: n,
            spawn: gpg::env::SpawnGenerator::Rectangle { width: side, height: side },
            ..EnvConfig::default()
        })?;
        let (state, graph) = env.reset(&mut rng)?;
        let powers = shift_powers(&normalized_laplacian(&graph), policy.taps());
        let (dist, _) = policy.forward(&powers, &observe(&state, Dynamics::PointMass))?;
        let actions = sample_actions(&dist.mu, &dist.sigma, &mut rng);
        let lp = log_prob(&dist.mu, &dist.sigma, &actions)?;
        println!(
            "N={n:>2}: mu is {}x{}, robot 0 mu ({:+.3}, {:+.3}), sigma {:.3}, joint log-prob {:.2}",
            dist.mu.nrows(),
            dist.mu.ncols(),
            dist.mu[(0, 0)],
            dist.mu[(0, 1)],
            dist.sigma[(0, 0)],
            lp.joint
        );
    }
    Ok(())
}
