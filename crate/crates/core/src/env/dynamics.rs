use nalgebra::DMatrix;

use super::SwarmState;
use crate::error::{Error, Result};

/// Velocity input gain of the single-integrator model.
pub const INTEGRATOR_GAIN: f64 = 0.1;

fn check_actions(state: &SwarmState, actions: &DMatrix<f64>) -> Result<()> {
    if actions.shape() != (state.num_robots(), 2) {
        return Err(Error::dims(
            "actions",
            format!("({}, 2)", state.num_robots()),
            format!("{:?}", actions.shape()),
        ));
    }
    if let Some(v) = actions.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite action {v}")));
    }
    Ok(())
}

/// Point-mass robots: each action is a planar displacement, shortened to
/// length `max_step` when one is given and it is longer.
pub fn step_point_mass(state: &SwarmState, actions: &DMatrix<f64>, max_step: Option<f64>) -> Result<SwarmState> {
    check_actions(state, actions)?;
    let mut next = state.clone();
    for (n, p) in next.positions.iter_mut().enumerate() {
        let mut a = [actions[(n, 0)], actions[(n, 1)]];
        if let Some(m) = max_step {
            a = clip_speed(a, m);
        }
        p[0] += a[0];
        p[1] += a[1];
    }
    for v in &mut next.velocities {
        *v = [0.0, 0.0];
    }
    next.time += 1;
    Ok(next)
}

/// Single-integrator robots: `p' = p + ts * v`, `v' = v + 0.1 * ts * a`, then
/// the new velocity is rescaled so its magnitude is at most `vel_clip`.
pub fn step_single_integrator(state: &SwarmState, actions: &DMatrix<f64>, ts: f64, vel_clip: f64) -> Result<SwarmState> {
    check_actions(state, actions)?;
    let (mut next, _) = integrate_unclipped(state, actions, ts);
    for v in &mut next.velocities {
        *v = clip_speed(*v, vel_clip);
    }
    Ok(next)
}

/// The linear block-matrix update without the speed clip; also returns the
/// unclipped velocities.
pub fn integrate_unclipped(state: &SwarmState, actions: &DMatrix<f64>, ts: f64) -> (SwarmState, Vec<[f64; 2]>) {
    let mut next = state.clone();
    for n in 0..state.num_robots() {
        let p = state.positions[n];
        let v = state.velocities[n];
        next.positions[n] = [p[0] + ts * v[0], p[1] + ts * v[1]];
        next.velocities[n] = [
            v[0] + INTEGRATOR_GAIN * ts * actions[(n, 0)],
            v[1] + INTEGRATOR_GAIN * ts * actions[(n, 1)],
        ];
    }
    next.time += 1;
    let raw = next.velocities.clone();
    (next, raw)
}

pub fn clip_speed(v: [f64; 2], limit: f64) -> [f64; 2] {
    let speed = v[0].hypot(v[1]);
    if speed > limit {
        let s = limit / speed;
        // rounding can leave the product a hair above the limit
        let mut out = [v[0] * s, v[1] * s];
        while out[0].hypot(out[1]) > limit {
            out = [out[0] * (1.0 - f64::EPSILON), out[1] * (1.0 - f64::EPSILON)];
        }
        out
    } else {
        v
    }
}
