//! Trajectory CSV: one row per robot per time step.
//!
//! Columns: `episode,t,robot,px,py,vx,vy,gx,gy,ax,ay,reward`. Row `t` holds
//! the state before the step, the action applied at `t`, and the team reward
//! that action earned. The final state of an episode is written with empty
//! action and reward fields.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::SwarmState;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub episode: usize,
    pub t: usize,
    pub robot: usize,
    pub px: f64,
    pub py: f64,
    pub vx: f64,
    pub vy: f64,
    pub gx: f64,
    pub gy: f64,
    pub ax: Option<f64>,
    pub ay: Option<f64>,
    pub reward: Option<f64>,
}

pub fn state_rows(episode: usize, state: &SwarmState, actions: Option<&DMatrix<f64>>, reward: Option<f64>) -> Vec<TrajectoryRow> {
    (0..state.num_robots())
        .map(|n| TrajectoryRow {
            episode,
            t: state.time,
            robot: n,
            px: state.positions[n][0],
            py: state.positions[n][1],
            vx: state.velocities[n][0],
            vy: state.velocities[n][1],
            gx: state.goals[n][0],
            gy: state.goals[n][1],
            ax: actions.map(|a| a[(n, 0)]),
            ay: actions.map(|a| a[(n, 1)]),
            reward,
        })
        .collect()
}

/// Rows for a whole episode: `states` has one more entry than `actions`.
pub fn episode_rows(episode: usize, states: &[SwarmState], actions: &[DMatrix<f64>], rewards: &[f64]) -> Vec<TrajectoryRow> {
    states
        .iter()
        .enumerate()
        .flat_map(|(t, s)| state_rows(episode, s, actions.get(t), rewards.get(t).copied()))
        .collect()
}

pub fn write_trajectory_csv(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
    }
}
