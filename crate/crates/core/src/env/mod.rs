//! Formation-flying environment.

mod dynamics;
mod layout;
mod metrics;
pub mod record;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_epsilon_graph, build_knn_graph, Graph, Point};

pub use dynamics::{clip_speed, integrate_unclipped, step_point_mass, step_single_integrator, INTEGRATOR_GAIN};
pub use layout::{goal_assignment, min_pairwise_distance, GoalGenerator, SpawnGenerator};
pub use metrics::{all_covered, check_collisions, coverage, reward, total_goal_distance, AssignmentMatrix, Collisions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    PointMass,
    SingleIntegrator,
}

impl Dynamics {
    pub fn obs_width(self) -> usize {
        match self {
            Dynamics::PointMass => 2,
            Dynamics::SingleIntegrator => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphRule {
    /// `k` nearest neighbours, symmetrized.
    Knn,
    /// Every pair within `lambda`.
    Epsilon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub n_robots: usize,
    /// Collision distance.
    pub delta: f64,
    /// Goal acceptance radius.
    pub epsilon: f64,
    /// Connection threshold of the disk graph.
    pub lambda: f64,
    /// Collision penalty.
    pub beta: f64,
    pub horizon: usize,
    pub dynamics: Dynamics,
    /// Sampling time of the integrator model.
    pub ts: f64,
    /// Speed bound of the integrator model.
    pub vel_clip: f64,
    /// Longest displacement of the point-mass model per step.
    pub max_step: f64,
    pub graph_rule: GraphRule,
    pub knn_k: usize,
    /// Rebuild the graph after every step instead of holding the reset graph.
    pub dynamic_graph: bool,
    pub early_stop_on_collision: bool,
    /// Minimum spawn separation; the effective bound is never below `delta`.
    pub min_separation: f64,
    pub spawn_retries: usize,
    pub spawn: SpawnGenerator,
    pub goals: GoalGenerator,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_robots: 3,
            delta: 0.1,
            epsilon: 0.1,
            lambda: 1.0,
            beta: 10.0,
            horizon: 100,
            dynamics: Dynamics::PointMass,
            ts: 0.5,
            vel_clip: 1.0,
            max_step: 0.2,
            graph_rule: GraphRule::Knn,
            knn_k: 2,
            dynamic_graph: false,
            early_stop_on_collision: false,
            min_separation: 0.5,
            spawn_retries: 100,
            spawn: SpawnGenerator::default(),
            goals: GoalGenerator::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_robots == 0 {
            return bad("env.n_robots must be at least 1".into());
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("env.epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.delta >= 0.0) || !(self.delta < self.lambda) {
            return bad(format!(
                "env.delta ({}) must be non-negative and below env.lambda ({})",
                self.delta, self.lambda
            ));
        }
        if self.horizon == 0 {
            return bad("env.horizon must be at least 1".into());
        }
        if !(self.ts > 0.0) || !(self.vel_clip > 0.0) || !(self.max_step > 0.0) {
            return bad("env.ts, env.vel_clip and env.max_step must be positive".into());
        }
        if self.graph_rule == GraphRule::Knn && self.knn_k == 0 {
            return bad("env.knn_k must be at least 1".into());
        }
        Ok(())
    }

    pub fn obs_width(&self) -> usize {
        self.dynamics.obs_width()
    }

    /// Proximity graph for the configured rule. Under kNN, swarms smaller
    /// than `knn_k + 1` link every pair.
    pub fn build_graph(&self, positions: &[Point]) -> Result<Graph> {
        match self.graph_rule {
            GraphRule::Knn if positions.len() == 1 => Ok(Graph::empty(1)),
            GraphRule::Knn => build_knn_graph(positions, self.knn_k.min(positions.len() - 1)),
            GraphRule::Epsilon => build_epsilon_graph(positions, self.lambda),
        }
    }
}

/// Positions, velocities and goals of every robot at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct SwarmState {
    pub positions: Vec<Point>,
    pub velocities: Vec<Point>,
    pub goals: Vec<Point>,
    pub time: usize,
}

impl SwarmState {
    pub fn new(positions: Vec<Point>, velocities: Vec<Point>, goals: Vec<Point>) -> Result<Self> {
        let n = positions.len();
        if velocities.len() != n || goals.len() != n {
            return Err(Error::dims("swarm state", n, format!("{} velocities, {} goals", velocities.len(), goals.len())));
        }
        let finite = |v: &Vec<Point>| v.iter().all(|p| p[0].is_finite() && p[1].is_finite());
        if !finite(&positions) || !finite(&velocities) || !finite(&goals) {
            return Err(Error::InvalidInput("swarm state has non-finite entries".into()));
        }
        Ok(Self {
            positions,
            velocities,
            goals,
            time: 0,
        })
    }

    pub fn at_rest(positions: Vec<Point>, goals: Vec<Point>) -> Result<Self> {
        let n = positions.len();
        Self::new(positions, vec![[0.0; 2]; n], goals)
    }

    pub fn num_robots(&self) -> usize {
        self.positions.len()
    }
}

/// Per-robot features: offset to goal, plus velocity for the integrator model.
pub fn observe(state: &SwarmState, dynamics: Dynamics) -> DMatrix<f64> {
    let n = state.num_robots();
    let mut x = DMatrix::zeros(n, dynamics.obs_width());
    for i in 0..n {
        x[(i, 0)] = state.positions[i][0] - state.goals[i][0];
        x[(i, 1)] = state.positions[i][1] - state.goals[i][1];
        if dynamics == Dynamics::SingleIntegrator {
            x[(i, 2)] = state.velocities[i][0];
            x[(i, 3)] = state.velocities[i][1];
        }
    }
    x
}

/// What one environment step produced.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub collision: bool,
    pub all_covered: bool,
    /// Horizon reached, or a collision under early stopping.
    pub done: bool,
}

/// One environment instance: a state, the graph the policy sees, and the
/// configuration that drives both.
#[derive(Clone, Debug)]
pub struct SwarmEnv {
    config: EnvConfig,
    state: SwarmState,
    graph: Graph,
    /// bumped whenever `graph` is replaced
    graph_epoch: u64,
}

impl SwarmEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let n = config.n_robots;
        Ok(Self {
            state: SwarmState::at_rest(vec![[0.0; 2]; n], vec![[0.0; 2]; n])?,
            graph: Graph::empty(n),
            config,
            graph_epoch: 0,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &SwarmState {
        &self.state
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn graph_epoch(&self) -> u64 {
        self.graph_epoch
    }

    /// Draws spawns and goals from the configured generators, rejecting
    /// layouts with robots or goals too close together.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(SwarmState, Graph)> {
        let n = self.config.n_robots;
        let sep = self.config.min_separation.max(self.config.delta);
        let deterministic = !self.config.spawn.is_random() && !self.config.goals.is_random();
        let attempts = if deterministic { 1 } else { self.config.spawn_retries.max(1) };
        for _ in 0..attempts {
            let spawns = self.config.spawn.sample(n, rng);
            if min_pairwise_distance(&spawns) <= sep {
                continue;
            }
            let goals = self.config.goals.sample(&spawns, rng);
            if min_pairwise_distance(&goals) <= self.config.delta {
                continue;
            }
            return self.reset_with(spawns, goals);
        }
        Err(Error::SpawnFailed {
            delta: sep,
            retries: attempts,
        })
    }

    /// Starts an episode from an explicit layout.
    pub fn reset_with(&mut self, spawns: Vec<Point>, goals: Vec<Point>) -> Result<(SwarmState, Graph)> {
        if spawns.len() != self.config.n_robots {
            return Err(Error::dims("reset layout", self.config.n_robots, spawns.len()));
        }
        let graph = self.config.build_graph(&spawns)?;
        self.state = SwarmState::at_rest(spawns, goals)?;
        self.graph = graph;
        self.graph_epoch += 1;
        Ok((self.state.clone(), self.graph.clone()))
    }

    pub fn observe(&self) -> DMatrix<f64> {
        observe(&self.state, self.config.dynamics)
    }

    pub fn step(&mut self, actions: &DMatrix<f64>) -> Result<StepOutcome> {
        let next = match self.config.dynamics {
            Dynamics::PointMass => step_point_mass(&self.state, actions, Some(self.config.max_step))?,
            Dynamics::SingleIntegrator => {
                step_single_integrator(&self.state, actions, self.config.ts, self.config.vel_clip)?
            }
        };
        self.state = next;
        if self.config.dynamic_graph {
            let g = self.config.build_graph(&self.state.positions)?;
            if g != self.graph {
                self.graph = g;
                self.graph_epoch += 1;
            }
        }
        let collision = check_collisions(&self.state, self.config.delta).any();
        let r = reward(&self.state, &self.config);
        let covered = all_covered(&coverage(&self.state, self.config.epsilon));
        let done = self.state.time >= self.config.horizon || (collision && self.config.early_stop_on_collision);
        Ok(StepOutcome {
            reward: r,
            collision,
            all_covered: covered,
            done,
        })
    }
}
