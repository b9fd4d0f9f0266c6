//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use gpg::cli::updates_to_threshold;
use gpg::config::{AblationConfig, TransferConfig};
use gpg::env::{clip_speed, integrate_unclipped, step_single_integrator, EnvConfig, SpawnGenerator, SwarmState};
use gpg::graph::{
    distance, normalized_laplacian, permute_graph, shift_powers, Graph, Permutation, ShiftOperator,
};
use gpg::policy::{log_prob, log_prob_grads, param_hash, GcnConfig, GcnPolicy, Policy};
use gpg::trainer::{
    evaluate, policy_gradient, return_weights, train, train_vpg_baseline, ActionMode, LearningCurve, TrainConfig,
    Trainer,
};
use gpg::transfer::{zero_shot_eval, FormationSpec};
use nalgebra::{DMatrix, Matrix4, Matrix4x2, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EQUIVARIANCE_CASES: usize = 200;
const EQUIVARIANCE_TOL: f64 = 1e-10;
const EQUIVARIANCE_BUDGET: Duration = Duration::from_secs(10);
const LAPLACIAN_GRAPHS: usize = 100;
const LAPLACIAN_TOL: f64 = 1e-12;
const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor for relative error on coordinates whose gradient is ~0.
const FD_REL_FLOOR: f64 = 1e-6;
const SEEDS: [u64; 3] = [0, 1, 2];
const EVAL_EPISODES: usize = 100;
const MIN_EVAL_COVERAGE: f64 = 0.9;
const MIN_COLLISION_FREE: f64 = 0.9;
const BASELINE_ROBOTS: usize = 5;
const BASELINE_UPDATES: usize = 200;
const ABLATION_ROBOTS: usize = 10;
const ABLATION_UPDATES: usize = 300;
const TRANSFER_ROBOTS: usize = 21;
const TRANSFER_MIN_GOAL_DISTANCE: f64 = 20.0;
const TRANSFER_MIN_COVERAGE: f64 = 0.95;
const TRANSFER_BUDGET: Duration = Duration::from_secs(60);
const INTEGRATOR_STATES: usize = 1000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Graph {
    let density = rng.gen_range(0.0..1.0);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(density) {
                pairs.push((i, j));
            }
        }
    }
    Graph::from_edges(n, pairs).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn linear_filter(s: &ShiftOperator, x: &DMatrix<f64>, taps: &[DMatrix<f64>]) -> DMatrix<f64> {
    let powers = shift_powers(s, taps.len() - 1);
    let mut out = DMatrix::zeros(x.nrows(), taps[0].ncols());
    for (k, h) in taps.iter().enumerate() {
        out += powers.get(k) * x * h;
    }
    out
}

fn perturbed_policy(rng: &mut ChaCha8Rng, cfg: &GcnConfig) -> GcnPolicy {
    let mut p = GcnPolicy::new(2, cfg, rng).unwrap();
    let mut theta = p.params();
    theta.iter_mut().for_each(|t| *t += rng.gen_range(-0.2..0.2));
    p.set_params(&theta).unwrap();
    p
}

fn equivariance() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut filter_err, mut forward_err) = (0.0f64, 0.0f64);
    for _ in 0..EQUIVARIANCE_CASES {
        let n = rng.gen_range(1..=8);
        let g = random_graph(&mut rng, n);
        let p = Permutation::random(n, &mut rng);
        let s = normalized_laplacian(&g);
        let s_hat = permute_graph(&s, &p).unwrap();
        let k = rng.gen_range(0..=3);
        let taps: Vec<_> = (0..=k).map(|_| random_matrix(&mut rng, 2, 3)).collect();
        let x = random_matrix(&mut rng, n, 2);
        let lhs = linear_filter(&s_hat, &p.apply_rows(&x).unwrap(), &taps);
        let rhs = p.apply_rows(&linear_filter(&s, &x, &taps)).unwrap();
        filter_err = filter_err.max((lhs - rhs).amax());

        let cfg = GcnConfig {
            hidden: vec![8, 8],
            taps: k,
            ..GcnConfig::default()
        };
        let policy = perturbed_policy(&mut rng, &cfg);
        let (d, _) = policy.forward(&shift_powers(&s, k), &x).unwrap();
        let (dp, _) = policy.forward(&shift_powers(&s_hat, k), &p.apply_rows(&x).unwrap()).unwrap();
        forward_err = forward_err
            .max((dp.mu - p.apply_rows(&d.mu).unwrap()).amax())
            .max((dp.sigma - p.apply_rows(&d.sigma).unwrap()).amax());
    }
    let took = start.elapsed();
    outcome(
        filter_err <= EQUIVARIANCE_TOL && forward_err <= EQUIVARIANCE_TOL && took < EQUIVARIANCE_BUDGET,
        format!(
            "{EQUIVARIANCE_CASES} cases, filter max err {filter_err:.1e}, forward max err {forward_err:.1e}, {:.2} s",
            took.as_secs_f64()
        ),
    )
}

fn laplacian() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..LAPLACIAN_GRAPHS {
        let n = rng.gen_range(1..=30);
        let g = random_graph(&mut rng, n);
        let a = g.adjacency();
        let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
        let s = normalized_laplacian(&g);
        for i in 0..n {
            for j in 0..n {
                let norm = if deg[i] > 0.0 && deg[j] > 0.0 {
                    a[(i, j)] / (deg[i].sqrt() * deg[j].sqrt())
                } else {
                    0.0
                };
                let want = if i == j { 1.0 } else { 0.0 } - norm;
                worst = worst.max((s.matrix()[(i, j)] - want).abs());
            }
        }
    }
    outcome(worst <= LAPLACIAN_TOL, format!("{LAPLACIAN_GRAPHS} graphs, max abs err {worst:.1e}"))
}

fn rel_err(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(FD_REL_FLOOR)
}

fn backward_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let cfg = GcnConfig {
        hidden: vec![8, 8],
        taps: 1,
        ..GcnConfig::default()
    };
    let policy = perturbed_policy(&mut rng, &cfg);
    let g = Graph::from_edges(4, [(0, 1), (1, 2), (2, 3), (0, 2)]).unwrap();
    let powers = shift_powers(&normalized_laplacian(&g), 1);
    let x = random_matrix(&mut rng, 4, 2);
    let actions = random_matrix(&mut rng, 4, 2);
    let loss = |p: &GcnPolicy| {
        let (d, _) = p.forward(&powers, &x).unwrap();
        log_prob(&d.mu, &d.sigma, &actions).unwrap().joint
    };
    let (d, cache) = policy.forward(&powers, &x).unwrap();
    let (dmu, dls) = log_prob_grads(&d.mu, &d.sigma, &actions).unwrap();
    let grad = policy.backward(&cache, &dmu, &dls).unwrap();
    let theta = policy.params();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let mut probe = policy.clone();
        let mut t = theta.clone();
        t[i] += FD_STEP;
        probe.set_params(&t).unwrap();
        let up = loss(&probe);
        t[i] -= 2.0 * FD_STEP;
        probe.set_params(&t).unwrap();
        let down = loss(&probe);
        worst = worst.max(rel_err((up - down) / (2.0 * FD_STEP), grad[i]));
    }
    outcome(
        worst <= FD_REL_TOL,
        format!("{} parameters, max relative err {worst:.1e}", theta.len()),
    )
}

fn estimator_gradient() -> Outcome {
    let mut cfg = TrainConfig::default();
    cfg.env.n_robots = 4;
    cfg.env.horizon = 15;
    cfg.trainer.episodes_per_update = 6;
    let trainer = Trainer::new(cfg.clone()).unwrap();
    let policy = trainer.policy().clone();
    let batch = trainer.collect_batch(0).unwrap();
    let returns: Vec<f64> = batch.iter().map(|t| t.total_return).collect();
    let weights = return_weights(&returns, true);
    let grad = policy_gradient(&batch, &policy, true).unwrap();
    // the graph is held fixed from the reset state
    let powers: Vec<_> = batch
        .iter()
        .map(|t| shift_powers(&normalized_laplacian(&cfg.env.build_graph(&t.states[0].positions).unwrap()), 1))
        .collect();
    let surrogate = |p: &GcnPolicy| {
        let mut total = 0.0;
        for ((traj, w), pw) in batch.iter().zip(&weights).zip(&powers) {
            for t in 0..traj.len() {
                let (d, _) = p.forward(pw, &traj.observations[t]).unwrap();
                total += w * log_prob(&d.mu, &d.sigma, &traj.actions[t]).unwrap().joint;
            }
        }
        total / batch.len() as f64
    };
    let theta = policy.params();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let mut probe = policy.clone();
        let mut t = theta.clone();
        t[i] += FD_STEP;
        probe.set_params(&t).unwrap();
        let up = surrogate(&probe);
        t[i] -= 2.0 * FD_STEP;
        probe.set_params(&t).unwrap();
        let down = surrogate(&probe);
        worst = worst.max(rel_err((up - down) / (2.0 * FD_STEP), grad[i]));
    }
    outcome(
        worst <= FD_REL_TOL,
        format!("batch of {}, {} parameters, max relative err {worst:.1e}", batch.len(), theta.len()),
    )
}

fn phase_means(curve: &LearningCurve) -> (f64, f64) {
    let r = curve.mean_returns();
    let fifth = (r.len() / 5).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&r[..fifth]), mean(&r[r.len() - fifth..]))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn three_robot_training(keep: &mut Option<GcnPolicy>) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let start = Instant::now();
    for seed in SEEDS {
        let mut cfg = TrainConfig::default();
        cfg.trainer.seed = seed;
        let t0 = Instant::now();
        let (policy, curve) = train(cfg.clone()).unwrap();
        let secs = t0.elapsed().as_secs_f64();
        let (first, last) = phase_means(&curve);
        let eval = evaluate(&policy, &cfg.env, EVAL_EPISODES, seed, ActionMode::Mean).unwrap();
        let ok = last > first
            && eval.coverage_rate >= MIN_EVAL_COVERAGE
            && eval.collision_free_rate >= MIN_COLLISION_FREE;
        pass &= ok;
        parts.push(format!(
            "seed {seed}: return {first:.1} -> {last:.1}, coverage {:.2}, collision-free {:.2}, {secs:.0} s",
            eval.coverage_rate, eval.collision_free_rate
        ));
        if seed == 0 {
            *keep = Some(policy);
        }
    }
    parts.push(format!("total {:.0} s", start.elapsed().as_secs_f64()));
    outcome(pass, parts.join("; "))
}

fn baseline_separation() -> Outcome {
    let mut gpg_final = Vec::new();
    let mut vpg_final = Vec::new();
    for seed in SEEDS {
        let mut cfg = TrainConfig::default();
        cfg.trainer.seed = seed;
        cfg.trainer.total_updates = BASELINE_UPDATES;
        cfg.env.n_robots = BASELINE_ROBOTS;
        gpg_final.push(phase_means(&train(cfg.clone()).unwrap().1).1);
        vpg_final.push(phase_means(&train_vpg_baseline(cfg).unwrap().1).1);
    }
    let (g, v) = (median(gpg_final.clone()), median(vpg_final.clone()));
    outcome(
        g > v,
        format!("N={BASELINE_ROBOTS}, final-phase return median GPG {g:.1} vs VPG {v:.1} (GPG {gpg_final:.1?}, VPG {vpg_final:.1?})"),
    )
}

fn static_vs_dynamic() -> Outcome {
    let ablation = AblationConfig::default();
    let mut cfg = TrainConfig::default();
    cfg.trainer.total_updates = ABLATION_UPDATES;
    cfg.env.n_robots = ABLATION_ROBOTS;
    cfg.env.spawn = SpawnGenerator::Rectangle { width: 5.0, height: 5.0 };
    let threshold = ablation.threshold(&cfg.env);
    let epu = cfg.trainer.episodes_per_update;
    let mut reached = [Vec::new(), Vec::new()];
    for seed in SEEDS {
        for (k, dynamic) in [false, true].into_iter().enumerate() {
            let mut c = cfg.clone();
            c.trainer.seed = seed;
            c.env.dynamic_graph = dynamic;
            let curve = train(c).unwrap().1;
            let episodes = updates_to_threshold(&curve, threshold, ablation.window).map_or(f64::INFINITY, |u| ((u + 1) * epu) as f64);
            reached[k].push(episodes);
        }
    }
    let (s, d) = (median(reached[0].clone()), median(reached[1].clone()));
    outcome(
        s <= d,
        format!(
            "N={ABLATION_ROBOTS}, episodes to smoothed return {threshold}: median static {s} vs dynamic {d} (static {:?}, dynamic {:?})",
            reached[0], reached[1]
        ),
    )
}

fn zero_shot_transfer(policy: Option<&GcnPolicy>) -> Outcome {
    let Some(policy) = policy else {
        return outcome(false, "no 3-robot policy was trained".into());
    };
    let spec = FormationSpec {
        n_robots: TRANSFER_ROBOTS,
        ..FormationSpec::default()
    };
    let env = EnvConfig {
        horizon: TransferConfig::default().horizon,
        ..EnvConfig::default()
    };
    let hash = param_hash(policy);
    let start = Instant::now();
    let run = zero_shot_eval(policy, &spec, &env, 1, 0, ActionMode::Mean).unwrap();
    let took = start.elapsed();
    let s0: &SwarmState = &run.states[0];
    let nearest_goal = s0
        .positions
        .iter()
        .zip(&s0.goals)
        .map(|(p, g)| distance(*p, *g))
        .fold(f64::INFINITY, f64::min);
    let r = &run.report;
    outcome(
        policy.taps() == 1
            && nearest_goal >= TRANSFER_MIN_GOAL_DISTANCE
            && r.coverage >= TRANSFER_MIN_COVERAGE
            && r.collisions == 0
            && r.param_hash_before == hash
            && r.param_hash_after == hash
            && took < TRANSFER_BUDGET,
        format!(
            "{} robots, goals >= {nearest_goal:.1} away, coverage {:.3}, collision steps {}, hash unchanged {}, {:.2} s",
            r.n_robots,
            r.coverage,
            r.collisions,
            r.param_hash_after == hash,
            took.as_secs_f64()
        ),
    )
}

fn integrator_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let (mut mismatches, mut max_speed, mut clipped) = (0, 0.0f64, 0);
    for _ in 0..INTEGRATOR_STATES {
        let ts = rng.gen_range(0.05..1.0);
        let n = rng.gen_range(1..=4);
        let pos: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)]).collect();
        let vel: Vec<[f64; 2]> = (0..n)
            .map(|_| clip_speed([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)], 1.0))
            .collect();
        let goals = pos.clone();
        let state = SwarmState::new(pos.clone(), vel.clone(), goals).unwrap();
        let actions = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-30.0..30.0));
        let transition = Matrix4::new(
            1.0, 0.0, ts, 0.0, //
            0.0, 1.0, 0.0, ts, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        );
        let input = Matrix4x2::new(
            0.0, 0.0, //
            0.0, 0.0, //
            0.1 * ts, 0.0, //
            0.0, 0.1 * ts,
        );
        let (linear, raw) = integrate_unclipped(&state, &actions, ts);
        let stepped = step_single_integrator(&state, &actions, ts, 1.0).unwrap();
        for i in 0..n {
            let s = Vector4::new(pos[i][0], pos[i][1], vel[i][0], vel[i][1]);
            let want = transition * s + input * Vector2::new(actions[(i, 0)], actions[(i, 1)]);
            if linear.positions[i] != [want[0], want[1]] || raw[i] != [want[2], want[3]] {
                mismatches += 1;
            }
            if stepped.positions[i] != linear.positions[i] || stepped.velocities[i] != clip_speed(raw[i], 1.0) {
                mismatches += 1;
            }
            let v = stepped.velocities[i];
            max_speed = max_speed.max(v[0].hypot(v[1]));
            clipped += (raw[i][0].hypot(raw[i][1]) > 1.0) as usize;
        }
    }
    outcome(
        mismatches == 0 && max_speed <= 1.0,
        format!("{INTEGRATOR_STATES} states, {mismatches} mismatches, {clipped} robots clipped, max speed {max_speed:.17}"),
    )
}

fn gpg(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_gpg"))
        .args(args)
        .env_remove("GPG_OUT_ROOT")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism() -> Outcome {
    let root = std::env::temp_dir().join(format!("gpg-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&root);
    let short = [
        "--override",
        "trainer.total_updates=6",
        "--override",
        "trainer.episodes_per_update=8",
        "--override",
        "ablation.seeds=[0]",
    ];
    let dir = |run: &str, cmd: &str| -> PathBuf { root.join(run).join(cmd) };
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let mut ok = true;
    for run in ["a", "b"] {
        for cmd in ["train", "baseline-vpg", "ablate-graph"] {
            let out = s(&dir(run, cmd));
            let mut args = vec![cmd, "--out", &out];
            args.extend(short);
            ok &= gpg(&args);
        }
        // both runs deploy the first run's checkpoint
        let ckpt = s(&dir("a", "train").join("policy.ckpt"));
        for cmd in ["transfer", "sweep"] {
            let out = s(&dir(run, cmd));
            ok &= gpg(&[cmd, "--checkpoint", &ckpt, "--out", &out]);
        }
    }
    let files = [
        ("train", "curve.csv"),
        ("baseline-vpg", "curve.csv"),
        ("ablate-graph", "curves.csv"),
        ("ablate-graph", "summary.csv"),
        ("transfer", "report.csv"),
        ("transfer", "trajectory.csv"),
        ("sweep", "report.csv"),
    ];
    let mut differing = Vec::new();
    for (cmd, f) in files {
        let a = std::fs::read(dir("a", cmd).join(f));
        let b = std::fs::read(dir("b", cmd).join(f));
        match (a, b) {
            (Ok(a), Ok(b)) if a == b && !a.is_empty() => {}
            _ => differing.push(format!("{cmd}/{f}")),
        }
    }
    let _ = std::fs::remove_dir_all(&root);
    outcome(
        ok && differing.is_empty(),
        format!(
            "{} CSVs from 5 commands compared, commands ok {ok}, differing {differing:?}",
            files.len()
        ),
    )
}

fn report(n: usize, name: &str, o: Outcome) -> bool {
    println!("criterion {n:>2} {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    o.pass
}

fn main() {
    let mut policy = None;
    let passed = [
        report(1, "permutation equivariance", equivariance()),
        report(2, "laplacian oracle", laplacian()),
        report(3, "backward vs finite differences", backward_gradient()),
        report(4, "policy-gradient estimator", estimator_gradient()),
        report(5, "3-robot training", three_robot_training(&mut policy)),
        report(6, "GPG vs VPG baseline", baseline_separation()),
        report(7, "static vs dynamic graph", static_vs_dynamic()),
        report(8, "zero-shot transfer", zero_shot_transfer(policy.as_ref())),
        report(9, "single-integrator oracle", integrator_oracle()),
        report(10, "determinism", determinism()),
    ];
    let ok = passed.iter().filter(|&&p| p).count();
    println!("acceptance: {ok} of {} criteria pass", passed.len());
    if ok < passed.len() {
        std::process::exit(1);
    }
}
