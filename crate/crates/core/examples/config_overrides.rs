//! Loads a run configuration from TOML, applies command-line style
//! overrides and prints the resolved result.

use gpg::config::RunConfig;

const TOML: &str = r#"
[trainer]
total_updates = 500
seed = 4

[env]
n_robots = 4
dynamics = "single_integrator"

[transfer.formation]
kind = "arrowhead"
n_robots = 15
"#;

fn main() -> gpg::Result<()> {
    let overrides = vec!["trainer.lr=5e-4".to_string(), "env.dynamic_graph=true".to_string()];
    let cfg = RunConfig::from_toml(TOML, &overrides)?;
    let train = cfg.train_config();
    println!("config hash {:016x}", train.hash());
    println!("{}", cfg.to_toml());

    match RunConfig::from_toml("[env]\nn_robot = 4\n", &[]) {
        Err(e) => println!("rejected: {e} (exit code {})", e.exit_code()),
        Ok(_) => println!("unexpectedly accepted"),
    }
    Ok(())
}
