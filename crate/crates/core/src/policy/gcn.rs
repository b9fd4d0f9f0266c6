use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    clamp_log_sigma, log_sigma_passes, push_row_major, read_row_major, uniform_matrix, Activation,
    ActionDistribution, Policy,
};
use crate::error::{Error, Result};
use crate::graph::ShiftPowers;

/// Architecture of a graph convolutional policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcnConfig {
    /// Widths of the graph filter layers.
    pub hidden: Vec<usize>,
    /// Highest shift power used by each filter.
    pub taps: usize,
    pub action_dim: usize,
    pub init_log_sigma: f64,
    pub activation: Activation,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![16, 16],
            taps: 1,
            action_dim: 2,
            init_log_sigma: 0.2_f64.ln(),
            activation: Activation::Tanh,
        }
    }
}

/// `sum_k S^k Z H_k + 1 b^T` followed by the pointwise activation.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphFilterLayer {
    pub taps: Vec<DMatrix<f64>>,
    pub bias: Vec<f64>,
}

impl GraphFilterLayer {
    pub fn in_width(&self) -> usize {
        self.taps[0].nrows()
    }

    pub fn out_width(&self) -> usize {
        self.taps[0].ncols()
    }

    fn num_params(&self) -> usize {
        self.taps.iter().map(|t| t.len()).sum::<usize>() + self.bias.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnPolicy {
    pub layers: Vec<GraphFilterLayer>,
    /// `F_last x A`
    pub head_weight: DMatrix<f64>,
    pub head_bias: Vec<f64>,
    pub log_sigma: Vec<f64>,
    pub activation: Activation,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct GcnCache {
    powers: ShiftPowers,
    /// `shifted[l][k] = S^k z^l`
    shifted: Vec<Vec<DMatrix<f64>>>,
    /// post-activation output of each graph layer
    outputs: Vec<DMatrix<f64>>,
}

impl GcnCache {
    pub fn num_robots(&self) -> usize {
        self.powers.num_nodes()
    }

    pub fn layer_outputs(&self) -> &[DMatrix<f64>] {
        &self.outputs
    }
}

impl GcnPolicy {
    pub fn new<R: Rng + ?Sized>(obs_width: usize, config: &GcnConfig, rng: &mut R) -> Result<Self> {
        if obs_width == 0 || config.action_dim == 0 || config.hidden.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig(format!(
                "zero-width layer in obs {obs_width} -> {:?} -> {}",
                config.hidden, config.action_dim
            )));
        }
        if config.hidden.is_empty() {
            return Err(Error::InvalidConfig("policy needs at least one graph layer".into()));
        }
        if !config.init_log_sigma.is_finite() {
            return Err(Error::InvalidConfig("init_log_sigma must be finite".into()));
        }
        let mut layers = Vec::with_capacity(config.hidden.len());
        let mut fan_in = obs_width;
        for &width in &config.hidden {
            let scale = 1.0 / ((fan_in * (config.taps + 1)) as f64).sqrt();
            let taps = (0..=config.taps)
                .map(|_| uniform_matrix(fan_in, width, scale, rng))
                .collect();
            layers.push(GraphFilterLayer {
                taps,
                bias: vec![0.0; width],
            });
            fan_in = width;
        }
        let head_weight = uniform_matrix(fan_in, config.action_dim, 1.0 / (fan_in as f64).sqrt(), rng);
        Ok(Self {
            layers,
            head_weight,
            head_bias: vec![0.0; config.action_dim],
            log_sigma: vec![config.init_log_sigma; config.action_dim],
            activation: config.activation,
        })
    }

    /// Highest shift power `K`.
    pub fn taps(&self) -> usize {
        self.layers[0].taps.len() - 1
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].in_width()];
        w.extend(self.layers.iter().map(|l| l.out_width()));
        w
    }

    /// Shape of every parameter block, in canonical order. Depends on
    /// feature widths and taps only, never on the number of robots.
    pub fn param_shapes(&self) -> Vec<(String, usize, usize)> {
        let mut shapes = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (k, tap) in layer.taps.iter().enumerate() {
                shapes.push((format!("layer{l}.tap{k}"), tap.nrows(), tap.ncols()));
            }
            shapes.push((format!("layer{l}.bias"), 1, layer.bias.len()));
        }
        shapes.push(("head.weight".into(), self.head_weight.nrows(), self.head_weight.ncols()));
        shapes.push(("head.bias".into(), 1, self.head_bias.len()));
        shapes.push(("log_sigma".into(), 1, self.log_sigma.len()));
        shapes
    }

    fn check_input(&self, powers: &ShiftPowers, obs: &DMatrix<f64>) -> Result<()> {
        if obs.ncols() != self.obs_width() {
            return Err(Error::dims("gcn observation width", self.obs_width(), obs.ncols()));
        }
        if obs.nrows() != powers.num_nodes() {
            return Err(Error::dims("gcn robot count", powers.num_nodes(), obs.nrows()));
        }
        if powers.taps() < self.taps() {
            return Err(Error::dims("gcn shift powers", self.taps(), powers.taps()));
        }
        Ok(())
    }
}

fn check_finite(m: &DMatrix<f64>, layer: usize) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation { layer })
    }
}

fn add_row_bias(m: &mut DMatrix<f64>, bias: &[f64]) {
    for mut row in m.row_iter_mut() {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn column_sums(m: &DMatrix<f64>) -> Vec<f64> {
    m.column_iter().map(|c| c.sum()).collect()
}

impl Policy for GcnPolicy {
    type Cache = GcnCache;

    fn obs_width(&self) -> usize {
        self.layers[0].in_width()
    }

    fn action_dim(&self) -> usize {
        self.head_weight.ncols()
    }

    fn shift_taps(&self) -> usize {
        self.taps()
    }

    fn forward(&self, powers: &ShiftPowers, obs: &DMatrix<f64>) -> Result<(ActionDistribution, GcnCache)> {
        self.check_input(powers, obs)?;
        let n = obs.nrows();
        let mut shifted = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut z = obs.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let per_tap: Vec<DMatrix<f64>> = (0..layer.taps.len())
                .map(|k| if k == 0 { z.clone() } else { powers.get(k) * &z })
                .collect();
            let mut pre = DMatrix::zeros(n, layer.out_width());
            for (sz, tap) in per_tap.iter().zip(&layer.taps) {
                pre.gemm(1.0, sz, tap, 1.0);
            }
            add_row_bias(&mut pre, &layer.bias);
            check_finite(&pre, l)?;
            let act = self.activation;
            pre.apply(|v| *v = act.apply(*v));
            shifted.push(per_tap);
            outputs.push(pre.clone());
            z = pre;
        }
        let mut mu = &z * &self.head_weight;
        add_row_bias(&mut mu, &self.head_bias);
        check_finite(&mu, self.layers.len())?;
        let sigma = DMatrix::from_fn(n, self.action_dim(), |_, a| clamp_log_sigma(self.log_sigma[a]).exp());
        Ok((
            ActionDistribution { mu, sigma },
            GcnCache {
                powers: powers.clone(),
                shifted,
                outputs,
            },
        ))
    }

    fn backward(&self, cache: &GcnCache, dmu: &DMatrix<f64>, dlog_sigma: &DMatrix<f64>) -> Result<Vec<f64>> {
        let n = cache.num_robots();
        let a = self.action_dim();
        if cache.outputs.len() != self.layers.len()
            || cache.outputs.last().map(|o| o.ncols()) != Some(self.head_weight.nrows())
        {
            return Err(Error::dims("gcn cache layers", self.layers.len(), cache.outputs.len()));
        }
        if dmu.shape() != (n, a) || dlog_sigma.shape() != (n, a) {
            return Err(Error::dims("gcn upstream gradient", format!("({n}, {a})"), format!("{:?}", dmu.shape())));
        }

        let mut layer_grads: Vec<(Vec<DMatrix<f64>>, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        let last = cache.outputs.last().expect("checked above");
        let head_w_grad = last.transpose() * dmu;
        let head_b_grad = column_sums(dmu);
        let mut dz = dmu * self.head_weight.transpose();

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let out = &cache.outputs[l];
            let act = self.activation;
            let dpre = dz.zip_map(out, |g, y| g * act.grad_from_output(y));
            let taps: Vec<DMatrix<f64>> = cache.shifted[l].iter().map(|sz| sz.transpose() * &dpre).collect();
            let bias = column_sums(&dpre);
            if l > 0 {
                let mut next = DMatrix::zeros(n, layer.in_width());
                for (k, tap) in layer.taps.iter().enumerate() {
                    let back = &dpre * tap.transpose();
                    if k == 0 {
                        next += back;
                    } else {
                        next += cache.powers.get(k).transpose() * back;
                    }
                }
                dz = next;
            }
            layer_grads.push((taps, bias));
        }
        layer_grads.reverse();

        let mut grad = Vec::with_capacity(self.num_params());
        for (taps, bias) in &layer_grads {
            for t in taps {
                push_row_major(&mut grad, t);
            }
            grad.extend_from_slice(bias);
        }
        push_row_major(&mut grad, &head_w_grad);
        grad.extend_from_slice(&head_b_grad);
        for j in 0..a {
            let g = if log_sigma_passes(self.log_sigma[j]) {
                dlog_sigma.column(j).sum()
            } else {
                0.0
            };
            grad.push(g);
        }
        Ok(grad)
    }

    fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.num_params()).sum::<usize>()
            + self.head_weight.len()
            + self.head_bias.len()
            + self.log_sigma.len()
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            for t in &layer.taps {
                push_row_major(&mut out, t);
            }
            out.extend_from_slice(&layer.bias);
        }
        push_row_major(&mut out, &self.head_weight);
        out.extend_from_slice(&self.head_bias);
        out.extend_from_slice(&self.log_sigma);
        out
    }

    fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.num_params() {
            return Err(Error::dims("gcn parameters", self.num_params(), theta.len()));
        }
        let mut at = 0;
        for layer in &mut self.layers {
            for t in &mut layer.taps {
                at += read_row_major(t, &theta[at..]);
            }
            let b = layer.bias.len();
            layer.bias.copy_from_slice(&theta[at..at + b]);
            at += b;
        }
        at += read_row_major(&mut self.head_weight, &theta[at..]);
        let a = self.head_bias.len();
        self.head_bias.copy_from_slice(&theta[at..at + a]);
        at += a;
        self.log_sigma.copy_from_slice(&theta[at..at + a]);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_epsilon_graph, normalized_laplacian, shift_powers, Graph, ShiftOperator};
    use crate::policy::{log_prob, log_prob_grads};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config(hidden: Vec<usize>, taps: usize) -> GcnConfig {
        GcnConfig {
            hidden,
            taps,
            ..GcnConfig::default()
        }
    }

    fn random_obs(rng: &mut ChaCha8Rng, n: usize, f: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, f, |_, _| rng.gen_range(-2.0..2.0))
    }

    /// Straight-line evaluation with explicit loops, no matrix library calls.
    fn reference_mu(p: &GcnPolicy, s: &DMatrix<f64>, x: &DMatrix<f64>) -> Vec<Vec<f64>> {
        let n = x.nrows();
        let mut z: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).iter().copied().collect()).collect();
        for layer in &p.layers {
            let fin = layer.in_width();
            let fout = layer.out_width();
            let mut power: Vec<Vec<f64>> = z.clone();
            let mut out = vec![layer.bias.clone(); n];
            for (k, tap) in layer.taps.iter().enumerate() {
                if k > 0 {
                    let mut next = vec![vec![0.0; fin]; n];
                    for i in 0..n {
                        for j in 0..n {
                            for f in 0..fin {
                                next[i][f] += s[(i, j)] * power[j][f];
                            }
                        }
                    }
                    power = next;
                }
                for i in 0..n {
                    for o in 0..fout {
                        for f in 0..fin {
                            out[i][o] += power[i][f] * tap[(f, o)];
                        }
                    }
                }
            }
            z = out.into_iter().map(|r| r.into_iter().map(f64::tanh).collect()).collect();
        }
        (0..n)
            .map(|i| {
                (0..p.action_dim())
                    .map(|a| {
                        p.head_bias[a]
                            + (0..p.head_weight.nrows()).map(|f| z[i][f] * p.head_weight[(f, a)]).sum::<f64>()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn default_architecture() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = GcnPolicy::new(2, &GcnConfig::default(), &mut rng).unwrap();
        assert_eq!(p.widths(), vec![2, 16, 16]);
        assert_eq!(p.head_weight.nrows(), 16);
        assert_eq!(p.taps(), 1);
        assert_eq!(p.activation, Activation::Tanh);
        assert_eq!(p.log_sigma, vec![0.2_f64.ln(); 2]);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = small_config(vec![8, 5], 2);
        let a = GcnPolicy::new(3, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = GcnPolicy::new(3, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        let scales = [1.0 / (9.0f64).sqrt(), 1.0 / (24.0f64).sqrt()];
        for (layer, scale) in a.layers.iter().zip(scales) {
            for t in &layer.taps {
                assert!(t.amax() <= scale);
            }
        }
        assert!(a.head_weight.amax() <= 1.0 / 5.0f64.sqrt());
        assert!(GcnPolicy::new(3, &small_config(vec![0], 1), &mut ChaCha8Rng::seed_from_u64(1)).is_err());
        assert!(GcnPolicy::new(0, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn zero_weights_give_head_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = GcnPolicy::new(2, &GcnConfig::default(), &mut rng).unwrap();
        let mut theta = vec![0.0; p.num_params()];
        let n = theta.len();
        theta[n - 4] = 0.25; // head bias
        theta[n - 3] = -1.5;
        theta[n - 2] = 0.5_f64.ln();
        theta[n - 1] = 0.5_f64.ln();
        p.set_params(&theta).unwrap();
        let g = build_epsilon_graph(&[[0.0, 0.0], [0.5, 0.0], [3.0, 1.0]], 1.0).unwrap();
        let powers = shift_powers(&normalized_laplacian(&g), 1);
        let (dist, _) = p.forward(&powers, &random_obs(&mut rng, 3, 2)).unwrap();
        for i in 0..3 {
            assert_eq!(dist.mu[(i, 0)], 0.25);
            assert_eq!(dist.mu[(i, 1)], -1.5);
            assert!((dist.sigma[(i, 0)] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn single_node_is_a_plain_mlp() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = GcnPolicy::new(2, &small_config(vec![6, 4], 2), &mut rng).unwrap();
        let powers = shift_powers(&ShiftOperator::identity(1), 2);
        let x = random_obs(&mut rng, 1, 2);
        let (dist, _) = p.forward(&powers, &x).unwrap();
        // with S = [1] every tap sees the same input, so the layer is x * sum_k H_k
        let mut z = x.clone();
        for layer in &p.layers {
            let w = layer.taps.iter().fold(DMatrix::zeros(layer.in_width(), layer.out_width()), |acc, t| acc + t);
            let mut pre = &z * w;
            for (v, b) in pre.iter_mut().zip(&layer.bias) {
                *v += b;
            }
            z = pre.map(f64::tanh);
        }
        let mu = &z * &p.head_weight;
        for a in 0..2 {
            assert!((dist.mu[(0, a)] - mu[(0, a)] - p.head_bias[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_matches_reference_evaluator() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let n = rng.gen_range(1..7);
            let taps = rng.gen_range(0..4);
            let mut p = GcnPolicy::new(3, &small_config(vec![5, 4], taps), &mut rng).unwrap();
            let theta: Vec<f64> = (0..p.num_params()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            p.set_params(&theta).unwrap();
            let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0)]).collect();
            let s = normalized_laplacian(&build_epsilon_graph(&pts, 1.0).unwrap());
            let x = random_obs(&mut rng, n, 3);
            let (dist, _) = p.forward(&shift_powers(&s, taps), &x).unwrap();
            let reference = reference_mu(&p, s.matrix(), &x);
            for i in 0..n {
                for a in 0..2 {
                    assert!((dist.mu[(i, a)] - reference[i][a]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = GcnPolicy::new(2, &GcnConfig::default(), &mut rng).unwrap();
        let powers = shift_powers(&ShiftOperator::identity(3), 1);
        assert!(p.forward(&powers, &DMatrix::zeros(3, 4)).is_err());
        assert!(p.forward(&powers, &DMatrix::zeros(2, 2)).is_err());
        let short = shift_powers(&ShiftOperator::identity(3), 0);
        assert!(p.forward(&short, &DMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn non_finite_input_reports_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = GcnPolicy::new(2, &GcnConfig::default(), &mut rng).unwrap();
        let powers = shift_powers(&ShiftOperator::identity(2), 1);
        let mut x = DMatrix::zeros(2, 2);
        x[(1, 0)] = f64::NAN;
        assert!(matches!(p.forward(&powers, &x), Err(Error::NonFiniteActivation { layer: 0 })));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = GcnPolicy::new(2, &GcnConfig::default(), &mut rng).unwrap();
        let powers = shift_powers(&ShiftOperator::identity(3), 1);
        let (_, cache) = p.forward(&powers, &random_obs(&mut rng, 3, 2)).unwrap();
        let g = p.backward(&cache, &DMatrix::zeros(3, 2), &DMatrix::zeros(3, 2)).unwrap();
        assert_eq!(g.len(), p.num_params());
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(p.backward(&cache, &DMatrix::zeros(4, 2), &DMatrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = GcnPolicy::new(2, &small_config(vec![4, 3], 2), &mut rng).unwrap();
        let g = Graph::from_edges(5, [(0, 1), (1, 2), (2, 3), (1, 4)]).unwrap();
        let powers = shift_powers(&normalized_laplacian(&g), 2);
        let x = random_obs(&mut rng, 5, 2);
        let actions = random_obs(&mut rng, 5, 2);
        let theta = p.params();
        let objective = |p: &GcnPolicy| {
            let (d, _) = p.forward(&powers, &x).unwrap();
            log_prob(&d.mu, &d.sigma, &actions).unwrap().joint
        };
        let (d, cache) = p.forward(&powers, &x).unwrap();
        let (dmu, dls) = log_prob_grads(&d.mu, &d.sigma, &actions).unwrap();
        let grad = p.backward(&cache, &dmu, &dls).unwrap();
        let h = 1e-5;
        for i in 0..theta.len() {
            let mut t = theta.clone();
            t[i] += h;
            p.set_params(&t).unwrap();
            let up = objective(&p);
            t[i] -= 2.0 * h;
            p.set_params(&t).unwrap();
            let down = objective(&p);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(rel <= 1e-4 || (fd - grad[i]).abs() < 1e-8, "param {i}: fd {fd} analytic {}", grad[i]);
        }
    }

    #[test]
    fn params_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut p = GcnPolicy::new(4, &small_config(vec![3, 2], 1), &mut rng).unwrap();
        let theta: Vec<f64> = (0..p.num_params()).map(|i| i as f64).collect();
        p.set_params(&theta).unwrap();
        assert_eq!(p.params(), theta);
        let total: usize = p.param_shapes().iter().map(|(_, r, c)| r * c).sum();
        assert_eq!(total, p.num_params());
        assert!(p.set_params(&theta[1..]).is_err());
    }

    #[test]
    fn clamped_log_sigma_blocks_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = GcnPolicy::new(2, &GcnConfig::default(), &mut rng).unwrap();
        p.log_sigma = vec![-9.0, 0.0];
        let powers = shift_powers(&ShiftOperator::identity(2), 1);
        let (d, cache) = p.forward(&powers, &random_obs(&mut rng, 2, 2)).unwrap();
        assert!((d.sigma[(0, 0)] - (-5.0f64).exp()).abs() < 1e-15);
        let g = p.backward(&cache, &DMatrix::zeros(2, 2), &DMatrix::from_element(2, 2, 1.0)).unwrap();
        let n = g.len();
        assert_eq!(g[n - 2], 0.0);
        assert_eq!(g[n - 1], 2.0);
    }
}
