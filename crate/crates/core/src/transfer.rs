//! Zero-shot deployment of trained filters on larger swarms.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    check_collisions, coverage, goal_assignment, min_pairwise_distance, EnvConfig, SpawnGenerator, SwarmEnv,
};
use crate::error::{Error, Result};
use crate::graph::{distance, Point};
use crate::policy::{param_hash, GcnPolicy, Policy};
use crate::trainer::{collect_rollout, eval_rng, ActionMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormationKind {
    Line,
    Arrowhead,
    FigureEight,
    Custom,
}

impl FormationKind {
    pub const NAMES: [&'static str; 4] = ["line", "arrowhead", "figure_eight", "custom"];

    pub fn name(self) -> &'static str {
        match self {
            FormationKind::Line => "line",
            FormationKind::Arrowhead => "arrowhead",
            FormationKind::FigureEight => "figure_eight",
            FormationKind::Custom => "custom",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "line" => Some(FormationKind::Line),
            "arrowhead" => Some(FormationKind::Arrowhead),
            "figure_eight" => Some(FormationKind::FigureEight),
            "custom" => Some(FormationKind::Custom),
            _ => None,
        }
    }
}

/// A target formation and where the robots start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormationSpec {
    pub kind: FormationKind,
    pub n_robots: usize,
    /// Goal spacing for line and arrowhead.
    pub spacing: f64,
    /// Half-width of the figure eight.
    pub scale: f64,
    /// Opening half-angle of the arrowhead, degrees.
    pub wedge_angle: f64,
    /// Translation applied to every goal.
    pub offset: Point,
    /// Spawn layout; `None` picks the kind's default (line spawns for a line,
    /// a circle otherwise).
    pub spawn: Option<SpawnGenerator>,
    /// Explicit goals for `custom`.
    pub goals: Vec<Point>,
}

impl Default for FormationSpec {
    fn default() -> Self {
        Self {
            kind: FormationKind::Line,
            n_robots: 21,
            spacing: 1.0,
            scale: 10.0,
            wedge_angle: 35.0,
            offset: [0.0, 20.0],
            spawn: None,
            goals: Vec::new(),
        }
    }
}

impl FormationSpec {
    pub fn spawn_generator(&self) -> SpawnGenerator {
        self.spawn.clone().unwrap_or(match self.kind {
            FormationKind::Line => SpawnGenerator::Line { spacing: self.spacing },
            _ => SpawnGenerator::Circle {
                radius: (self.n_robots as f64 * self.spacing / (2.0 * PI)).max(self.spacing),
            },
        })
    }

    /// Goal positions before translation, one per robot, in formation order.
    fn shape(&self) -> Result<Vec<Point>> {
        let n = self.n_robots;
        Ok(match self.kind {
            FormationKind::Line => (0..n).map(|i| [i as f64 * self.spacing, 0.0]).collect(),
            FormationKind::Arrowhead => {
                // apex first, then alternating right and left arm slots
                let th = self.wedge_angle.to_radians();
                (0..n)
                    .map(|i| {
                        if i == 0 {
                            return [0.0, 0.0];
                        }
                        let slot = i.div_ceil(2) as f64 * self.spacing;
                        let side = if i % 2 == 1 { 1.0 } else { -1.0 };
                        [side * slot * th.sin(), -slot * th.cos()]
                    })
                    .collect()
            }
            FormationKind::FigureEight => (0..n)
                .map(|i| {
                    // half-step phase keeps both lobes off the crossing point
                    let t = 2.0 * PI * (i as f64 + 0.5) / n as f64;
                    [self.scale * t.sin(), self.scale * t.sin() * t.cos()]
                })
                .collect(),
            FormationKind::Custom => {
                if self.goals.len() != n {
                    return Err(Error::InvalidConfig(format!(
                        "custom formation lists {} goals for {n} robots",
                        self.goals.len()
                    )));
                }
                self.goals.clone()
            }
        })
    }
}

const SPAWN_RETRIES: usize = 100;

fn angle_about(points: &[Point], p: Point) -> f64 {
    let n = points.len() as f64;
    let cx = points.iter().map(|q| q[0]).sum::<f64>() / n;
    let cy = points.iter().map(|q| q[1]).sum::<f64>() / n;
    (p[1] - cy).atan2(p[0] - cx)
}

/// Spawn and goal positions for a formation, goals indexed by robot.
pub fn make_formation<R: Rng + ?Sized>(spec: &FormationSpec, delta: f64, rng: &mut R) -> Result<(Vec<Point>, Vec<Point>)> {
    if spec.n_robots == 0 {
        return Err(Error::InvalidConfig("formation needs at least one robot".into()));
    }
    let shape: Vec<Point> = spec
        .shape()?
        .into_iter()
        .map(|g| [g[0] + spec.offset[0], g[1] + spec.offset[1]])
        .collect();
    if min_pairwise_distance(&shape) <= delta {
        return Err(Error::InvalidConfig(format!(
            "{} formation of {} robots puts goals within {delta} of each other",
            spec.kind.name(),
            spec.n_robots
        )));
    }
    let generator = spec.spawn_generator();
    let mut spawns = generator.sample(spec.n_robots, rng);
    let mut tries = 1;
    while min_pairwise_distance(&spawns) <= delta {
        if tries >= SPAWN_RETRIES || !matches!(generator, SpawnGenerator::Rectangle { .. }) {
            return Err(Error::SpawnFailed { delta, retries: tries });
        }
        spawns = generator.sample(spec.n_robots, rng);
        tries += 1;
    }
    let goals = match spec.kind {
        FormationKind::Line | FormationKind::Custom => shape,
        FormationKind::Arrowhead => goal_assignment(&spawns, &shape),
        FormationKind::FigureEight => {
            // the k-th robot by spawn angle takes the k-th goal by curve parameter
            let mut order: Vec<usize> = (0..spawns.len()).collect();
            order.sort_by(|&a, &b| {
                angle_about(&spawns, spawns[a])
                    .total_cmp(&angle_about(&spawns, spawns[b]))
                    .then(a.cmp(&b))
            });
            let mut goals = vec![[0.0; 2]; spawns.len()];
            for (k, &robot) in order.iter().enumerate() {
                goals[robot] = shape[k];
            }
            goals
        }
    };
    Ok((spawns, goals))
}

/// Outcome of deploying a frozen policy on one formation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub spec_name: String,
    pub n_robots: usize,
    /// Fraction of robots within epsilon of their goal at the final step.
    pub coverage: f64,
    /// Steps at which at least one pair collided, summed over episodes.
    pub collisions: usize,
    /// First step with every robot covered, or the horizon.
    pub steps_to_cover: usize,
    pub mean_final_dist: f64,
    #[serde(skip)]
    pub final_distances: Vec<f64>,
    #[serde(skip)]
    pub param_hash_before: u64,
    #[serde(skip)]
    pub param_hash_after: u64,
}

#[derive(Clone, Debug)]
pub struct TransferRun {
    pub report: TransferReport,
    /// Visited states of the last episode, for trajectory dumps.
    pub states: Vec<crate::env::SwarmState>,
    pub actions: Vec<nalgebra::DMatrix<f64>>,
    pub rewards: Vec<f64>,
}

/// Deploys `policy` with no parameter updates. Reports average over
/// `episodes` layouts; with a deterministic spawn generator every episode is
/// the same.
pub fn zero_shot_eval(
    policy: &GcnPolicy,
    spec: &FormationSpec,
    env_config: &EnvConfig,
    episodes: usize,
    seed: u64,
    mode: ActionMode,
) -> Result<TransferRun> {
    let cfg = EnvConfig {
        n_robots: spec.n_robots,
        ..env_config.clone()
    };
    cfg.validate()?;
    if policy.obs_width() != cfg.obs_width() {
        return Err(Error::Incompatible(format!(
            "policy observes {} features per robot, {:?} environment provides {}",
            policy.obs_width(),
            cfg.dynamics,
            cfg.obs_width()
        )));
    }
    let before = param_hash(policy);
    let episodes = episodes.max(1);
    let mut covered = 0.0;
    let mut collisions = 0;
    let mut steps = 0;
    let mut final_distances = vec![0.0; spec.n_robots];
    let mut last = None;
    for e in 0..episodes {
        let mut rng = eval_rng(seed, e);
        let (spawns, goals) = make_formation(spec, cfg.delta, &mut rng)?;
        let mut env = SwarmEnv::new(cfg.clone())?;
        env.reset_with(spawns, goals)?;
        let traj = collect_rollout(&mut env, policy, &mut rng, mode)?;
        let end = traj.states.last().expect("rollout keeps its initial state");
        covered += coverage(end, cfg.epsilon).fraction();
        collisions += traj.states[1..].iter().filter(|s| check_collisions(s, cfg.delta).any()).count();
        steps += traj.covered_at.unwrap_or(cfg.horizon);
        for (d, (p, g)) in final_distances.iter_mut().zip(end.positions.iter().zip(&end.goals)) {
            *d += distance(*p, *g) / episodes as f64;
        }
        last = Some(traj);
    }
    let after = param_hash(policy);
    let traj = last.expect("at least one episode");
    let n = episodes as f64;
    Ok(TransferRun {
        report: TransferReport {
            spec_name: spec.kind.name().to_string(),
            n_robots: spec.n_robots,
            coverage: covered / n,
            collisions,
            steps_to_cover: (steps as f64 / n).round() as usize,
            mean_final_dist: final_distances.iter().sum::<f64>() / spec.n_robots as f64,
            final_distances,
            param_hash_before: before,
            param_hash_after: after,
        },
        states: traj.states,
        actions: traj.actions,
        rewards: traj.rewards,
    })
}

/// Loads a checkpoint and deploys it.
pub fn zero_shot_eval_checkpoint(
    checkpoint: &Path,
    spec: &FormationSpec,
    env_config: &EnvConfig,
    episodes: usize,
    seed: u64,
    mode: ActionMode,
) -> Result<TransferRun> {
    let policy = GcnPolicy::load(checkpoint)?;
    zero_shot_eval(&policy, spec, env_config, episodes, seed, mode)
}

/// One report per spec, in order.
pub fn sweep_transfer(
    policy: &GcnPolicy,
    specs: &[FormationSpec],
    env_config: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<Vec<TransferReport>> {
    specs
        .iter()
        .map(|s| zero_shot_eval(policy, s, env_config, episodes, seed, ActionMode::Mean).map(|r| r.report))
        .collect()
}

pub fn write_reports_csv(path: &Path, reports: &[TransferReport]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| crate::env::record::csv_io(path, e))?;
    w.write_record(["spec_name", "n_robots", "coverage", "collisions", "steps_to_cover", "mean_final_dist"])?;
    for r in reports {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_reports_csv(path: &Path) -> Result<Vec<TransferReport>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| crate::env::record::csv_io(path, e))?;
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}
