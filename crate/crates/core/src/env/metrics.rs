use nalgebra::DMatrix;

use super::{EnvConfig, SwarmState};
use crate::graph::distance;

/// Result of a pairwise proximity scan.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Collisions {
    pub pairs: Vec<(usize, usize)>,
}

impl Collisions {
    pub fn any(&self) -> bool {
        !self.pairs.is_empty()
    }
}

/// Pairs `(i, j)`, `i < j`, whose distance is at most `delta`.
pub fn check_collisions(state: &SwarmState, delta: f64) -> Collisions {
    let p = &state.positions;
    let mut pairs = Vec::new();
    for i in 0..p.len() {
        for j in (i + 1)..p.len() {
            if distance(p[i], p[j]) <= delta {
                pairs.push((i, j));
            }
        }
    }
    Collisions { pairs }
}

/// Diagonal 0/1 assignment matrix: entry `i` is set when robot `i` is within
/// `epsilon` of its own goal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssignmentMatrix {
    diagonal: Vec<bool>,
}

impl AssignmentMatrix {
    pub fn from_diagonal(diagonal: Vec<bool>) -> Self {
        Self { diagonal }
    }

    pub fn diagonal(&self) -> &[bool] {
        &self.diagonal
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.diagonal.len();
        DMatrix::from_fn(n, n, |i, j| if i == j && self.diagonal[i] { 1.0 } else { 0.0 })
    }

    pub fn covered_count(&self) -> usize {
        self.diagonal.iter().filter(|&&c| c).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.diagonal.is_empty() {
            1.0
        } else {
            self.covered_count() as f64 / self.diagonal.len() as f64
        }
    }
}

pub fn coverage(state: &SwarmState, epsilon: f64) -> AssignmentMatrix {
    AssignmentMatrix {
        diagonal: state
            .positions
            .iter()
            .zip(&state.goals)
            .map(|(&p, &g)| distance(p, g) <= epsilon)
            .collect(),
    }
}

/// `phi^T phi = I`. With only diagonal entries this is every robot covered.
pub fn all_covered(phi: &AssignmentMatrix) -> bool {
    phi.diagonal.iter().all(|&c| c)
}

pub fn total_goal_distance(state: &SwarmState) -> f64 {
    state.positions.iter().zip(&state.goals).map(|(&p, &g)| distance(p, g)).sum()
}

/// Shared team reward: `-beta` if any pair collides, otherwise minus the sum
/// of goal distances.
pub fn reward(state: &SwarmState, config: &EnvConfig) -> f64 {
    if check_collisions(state, config.delta).any() {
        -config.beta
    } else {
        -total_goal_distance(state)
    }
}
