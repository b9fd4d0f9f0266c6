//! Gaussian control policies: the graph convolutional policy, the
//! fully-connected baseline, Adam, and checkpoint files.

mod adam;
pub mod checkpoint;
mod gcn;
mod mlp;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ShiftPowers;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gcn::{GcnCache, GcnConfig, GcnPolicy, GraphFilterLayer};
pub use mlp::{MlpCache, MlpConfig, MlpPolicy};

/// Bounds applied to `log_sigma` before exponentiating.
pub const LOG_SIGMA_MIN: f64 = -5.0;
pub const LOG_SIGMA_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Per-robot diagonal Gaussian over actions. `mu`, `sigma` and `log_sigma`
/// are all `N x A`.
#[derive(Clone, Debug)]
pub struct ActionDistribution {
    pub mu: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

impl ActionDistribution {
    pub fn num_robots(&self) -> usize {
        self.mu.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.mu.ncols()
    }
}

/// Log density per robot and the joint (summed) value.
#[derive(Clone, Debug, PartialEq)]
pub struct LogProb {
    pub per_robot: Vec<f64>,
    pub joint: f64,
}

fn check_gaussian(mu: &DMatrix<f64>, sigma: &DMatrix<f64>, actions: &DMatrix<f64>) -> Result<()> {
    if mu.shape() != sigma.shape() {
        return Err(Error::dims("gaussian sigma", format!("{:?}", mu.shape()), format!("{:?}", sigma.shape())));
    }
    if mu.shape() != actions.shape() {
        return Err(Error::dims("gaussian actions", format!("{:?}", mu.shape()), format!("{:?}", actions.shape())));
    }
    if let Some(s) = sigma.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::InvalidInput(format!("sigma must be positive, got {s}")));
    }
    Ok(())
}

pub fn log_prob(mu: &DMatrix<f64>, sigma: &DMatrix<f64>, actions: &DMatrix<f64>) -> Result<LogProb> {
    check_gaussian(mu, sigma, actions)?;
    let per_robot: Vec<f64> = (0..mu.nrows())
        .map(|n| {
            (0..mu.ncols())
                .map(|a| {
                    let s = sigma[(n, a)];
                    let z = (actions[(n, a)] - mu[(n, a)]) / s;
                    -s.ln() - HALF_LN_2PI - 0.5 * z * z
                })
                .sum()
        })
        .collect();
    let joint = per_robot.iter().sum();
    Ok(LogProb { per_robot, joint })
}

/// Gradient of the joint log density with respect to `mu` and to the
/// (clamped) `log_sigma`, both `N x A`.
pub fn log_prob_grads(
    mu: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    actions: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_gaussian(mu, sigma, actions)?;
    let (n, a) = mu.shape();
    let mut dmu = DMatrix::zeros(n, a);
    let mut dls = DMatrix::zeros(n, a);
    for i in 0..n {
        for j in 0..a {
            let s = sigma[(i, j)];
            let diff = actions[(i, j)] - mu[(i, j)];
            dmu[(i, j)] = diff / (s * s);
            dls[(i, j)] = diff * diff / (s * s) - 1.0;
        }
    }
    Ok((dmu, dls))
}

/// `a = mu + sigma * eps` with standard normal `eps`, drawn row-major.
pub fn sample_actions<R: Rng + ?Sized>(mu: &DMatrix<f64>, sigma: &DMatrix<f64>, rng: &mut R) -> DMatrix<f64> {
    let (n, a) = mu.shape();
    let mut out = DMatrix::zeros(n, a);
    for i in 0..n {
        for j in 0..a {
            let eps: f64 = rng.sample(StandardNormal);
            out[(i, j)] = mu[(i, j)] + sigma[(i, j)] * eps;
        }
    }
    out
}

pub(crate) fn clamp_log_sigma(raw: f64) -> f64 {
    raw.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX)
}

/// Gradient gate for the clamp: zero when the raw value sits outside the bounds.
pub(crate) fn log_sigma_passes(raw: f64) -> bool {
    (LOG_SIGMA_MIN..=LOG_SIGMA_MAX).contains(&raw)
}

/// A differentiable stochastic policy over a swarm. Parameters are exposed
/// as one flat vector in a fixed canonical order so optimizers and gradient
/// checks can treat every policy alike.
pub trait Policy: Clone + Send + Sync {
    type Cache: Send + Sync;

    /// Per-robot observation width.
    fn obs_width(&self) -> usize;

    fn action_dim(&self) -> usize;

    /// Highest shift power the policy reads; 0 for graph-agnostic policies.
    fn shift_taps(&self) -> usize {
        0
    }

    fn forward(&self, powers: &ShiftPowers, obs: &DMatrix<f64>) -> Result<(ActionDistribution, Self::Cache)>;

    /// Maps upstream gradients on `mu` and on the clamped `log_sigma`
    /// (both `N x A`) to a flat parameter gradient.
    fn backward(&self, cache: &Self::Cache, dmu: &DMatrix<f64>, dlog_sigma: &DMatrix<f64>) -> Result<Vec<f64>>;

    fn num_params(&self) -> usize;

    fn params(&self) -> Vec<f64>;

    fn set_params(&mut self, theta: &[f64]) -> Result<()>;
}

/// FNV-1a over the parameter bit patterns; equal hashes mean bit-identical
/// parameters for practical purposes.
pub fn param_hash<P: Policy>(policy: &P) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in policy.params() {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

pub(crate) fn uniform_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> DMatrix<f64> {
    // filled row-major so the draw order matches the flat parameter order
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.gen_range(-scale..=scale);
        }
    }
    m
}

pub(crate) fn push_row_major(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
}

pub(crate) fn read_row_major(m: &mut DMatrix<f64>, src: &[f64]) -> usize {
    let cols = m.ncols();
    for i in 0..m.nrows() {
        for j in 0..cols {
            m[(i, j)] = src[i * cols + j];
        }
    }
    m.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn log_prob_at_mean_and_one_sigma() {
        let sigma = 0.7_f64;
        let peak = log_prob(&m(1.5), &m(sigma), &m(1.5)).unwrap();
        let expected = -sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((peak.joint - expected).abs() < 1e-14);
        let one = log_prob(&m(1.5), &m(sigma), &m(1.5 + sigma)).unwrap();
        assert!((one.joint - (expected - 0.5)).abs() < 1e-14);
    }

    #[test]
    fn log_prob_matches_density_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mu = DMatrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
        let sigma = DMatrix::from_fn(3, 2, |_, _| rng.gen_range(0.2..2.0));
        let a = DMatrix::from_fn(3, 2, |_, _| rng.gen_range(-2.0..2.0));
        let lp = log_prob(&mu, &sigma, &a).unwrap();
        let mut joint = 0.0;
        for n in 0..3 {
            let mut density = 1.0;
            for j in 0..2 {
                let s: f64 = sigma[(n, j)];
                let d: f64 = a[(n, j)] - mu[(n, j)];
                density *= (-d * d / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
            }
            assert!((lp.per_robot[n] - density.ln()).abs() < 1e-12);
            joint += density.ln();
        }
        assert!((lp.joint - joint).abs() < 1e-12);
    }

    #[test]
    fn log_prob_rejects_bad_sigma() {
        assert!(log_prob(&m(0.0), &m(0.0), &m(0.0)).is_err());
        assert!(log_prob(&m(0.0), &m(-1.0), &m(0.0)).is_err());
        assert!(log_prob(&m(0.0), &m(1.0), &DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn log_prob_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mu = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
        let sigma = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(0.3..1.5));
        let a = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-2.0..2.0));
        let (dmu, dls) = log_prob_grads(&mu, &sigma, &a).unwrap();
        let h = 1e-6;
        for idx in 0..4 {
            let mut p = mu.clone();
            p[idx] += h;
            let mut q = mu.clone();
            q[idx] -= h;
            let fd = (log_prob(&p, &sigma, &a).unwrap().joint - log_prob(&q, &sigma, &a).unwrap().joint) / (2.0 * h);
            assert!((fd - dmu[idx]).abs() < 1e-6);
            let mut p = sigma.clone();
            p[idx] *= h.exp();
            let mut q = sigma.clone();
            q[idx] *= (-h).exp();
            let fd = (log_prob(&mu, &p, &a).unwrap().joint - log_prob(&mu, &q, &a).unwrap().joint) / (2.0 * h);
            assert!((fd - dls[idx]).abs() < 1e-6);
        }
    }

    #[test]
    fn sampling_is_seeded_and_collapses_with_sigma() {
        let mu = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let tiny = DMatrix::from_element(2, 2, 1e-300);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_actions(&mu, &tiny, &mut rng), mu);

        let sigma = DMatrix::from_element(2, 2, 0.5);
        let a = sample_actions(&mu, &sigma, &mut ChaCha8Rng::seed_from_u64(4));
        let b = sample_actions(&mu, &sigma, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_mean_is_within_three_standard_errors() {
        let n = 100_000;
        let (mu, sigma) = (0.3, 1.7);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let total: f64 = (0..n)
            .map(|_| sample_actions(&m(mu), &m(sigma), &mut rng)[(0, 0)])
            .sum();
        let mean = total / n as f64;
        assert!((mean - mu).abs() <= 3.0 * sigma / (n as f64).sqrt());
    }
}
