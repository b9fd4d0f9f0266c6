use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    clamp_log_sigma, log_sigma_passes, push_row_major, read_row_major, uniform_matrix, Activation,
    ActionDistribution, Policy,
};
use crate::error::{Error, Result};
use crate::graph::ShiftPowers;

/// Fully-connected baseline over the concatenated swarm observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub action_dim: usize,
    pub init_log_sigma: f64,
    pub activation: Activation,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            action_dim: 2,
            init_log_sigma: 0.2_f64.ln(),
            activation: Activation::Relu,
        }
    }
}

/// Centralized policy: one network maps all `N*F` observations to all `N*A`
/// action means. Its size grows with `N`, unlike the graph policy.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpPolicy {
    num_robots: usize,
    obs_width: usize,
    action_dim: usize,
    /// `(weight in x out, bias)` per layer; the last one is the mean head.
    pub layers: Vec<(DMatrix<f64>, Vec<f64>)>,
    /// One entry per robot and action dimension, row-major.
    pub log_sigma: Vec<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct MlpCache {
    /// inputs to each layer as `1 x width` rows; `inputs[0]` is the flattened observation
    inputs: Vec<DMatrix<f64>>,
}

impl MlpPolicy {
    pub fn new<R: Rng + ?Sized>(num_robots: usize, obs_width: usize, config: &MlpConfig, rng: &mut R) -> Result<Self> {
        if num_robots == 0 || obs_width == 0 || config.action_dim == 0 || config.hidden.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig("zero-width layer in fully-connected policy".into()));
        }
        let mut widths = vec![num_robots * obs_width];
        widths.extend(&config.hidden);
        widths.push(num_robots * config.action_dim);
        let layers = widths
            .windows(2)
            .map(|w| (uniform_matrix(w[0], w[1], 1.0 / (w[0] as f64).sqrt(), rng), vec![0.0; w[1]]))
            .collect();
        Ok(Self {
            num_robots,
            obs_width,
            action_dim: config.action_dim,
            layers,
            log_sigma: vec![config.init_log_sigma; num_robots * config.action_dim],
            activation: config.activation,
        })
    }

    pub fn num_robots(&self) -> usize {
        self.num_robots
    }
}

impl Policy for MlpPolicy {
    type Cache = MlpCache;

    fn obs_width(&self) -> usize {
        self.obs_width
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn forward(&self, _powers: &ShiftPowers, obs: &DMatrix<f64>) -> Result<(ActionDistribution, MlpCache)> {
        if obs.shape() != (self.num_robots, self.obs_width) {
            return Err(Error::dims(
                "mlp observation",
                format!("({}, {})", self.num_robots, self.obs_width),
                format!("{:?}", obs.shape()),
            ));
        }
        let mut flat = Vec::with_capacity(obs.len());
        push_row_major(&mut flat, obs);
        let mut z = DMatrix::from_row_slice(1, flat.len(), &flat);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let mut out = &z * w;
            for (v, bias) in out.iter_mut().zip(b) {
                *v += bias;
            }
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation { layer: l });
            }
            if l < last {
                let act = self.activation;
                out.apply(|v| *v = act.apply(*v));
            }
            inputs.push(std::mem::replace(&mut z, out));
        }
        let (n, a) = (self.num_robots, self.action_dim);
        let mu = DMatrix::from_fn(n, a, |i, j| z[(0, i * a + j)]);
        let sigma = DMatrix::from_fn(n, a, |i, j| clamp_log_sigma(self.log_sigma[i * a + j]).exp());
        Ok((ActionDistribution { mu, sigma }, MlpCache { inputs }))
    }

    fn backward(&self, cache: &MlpCache, dmu: &DMatrix<f64>, dlog_sigma: &DMatrix<f64>) -> Result<Vec<f64>> {
        let (n, a) = (self.num_robots, self.action_dim);
        if cache.inputs.len() != self.layers.len() || dmu.shape() != (n, a) || dlog_sigma.shape() != (n, a) {
            return Err(Error::dims("mlp upstream gradient", format!("({n}, {a})"), format!("{:?}", dmu.shape())));
        }
        let mut upstream = DMatrix::from_fn(1, n * a, |_, c| dmu[(c / a, c % a)]);
        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let (w, _) = &self.layers[l];
            let input = &cache.inputs[l];
            grads.push((input.transpose() * &upstream, upstream.iter().copied().collect::<Vec<_>>()));
            if l > 0 {
                // inputs[l] is the activation output of layer l-1
                let act = self.activation;
                upstream = (&upstream * w.transpose()).zip_map(input, |g, y| g * act.grad_from_output(y));
            }
        }
        grads.reverse();
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in &grads {
            push_row_major(&mut out, w);
            out.extend_from_slice(b);
        }
        for i in 0..n {
            for j in 0..a {
                let raw = self.log_sigma[i * a + j];
                out.push(if log_sigma_passes(raw) { dlog_sigma[(i, j)] } else { 0.0 });
            }
        }
        Ok(out)
    }

    fn num_params(&self) -> usize {
        self.layers.iter().map(|(w, b)| w.len() + b.len()).sum::<usize>() + self.log_sigma.len()
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in &self.layers {
            push_row_major(&mut out, w);
            out.extend_from_slice(b);
        }
        out.extend_from_slice(&self.log_sigma);
        out
    }

    fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.num_params() {
            return Err(Error::dims("mlp parameters", self.num_params(), theta.len()));
        }
        let mut at = 0;
        for (w, b) in &mut self.layers {
            at += read_row_major(w, &theta[at..]);
            let len = b.len();
            b.copy_from_slice(&theta[at..at + len]);
            at += len;
        }
        self.log_sigma.copy_from_slice(&theta[at..]);
        Ok(())
    }
}
