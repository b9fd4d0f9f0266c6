//! REINFORCE over a swarm policy with a shared team reward.
//!
//! Each update collects a batch of full-horizon episodes, weights the summed
//! joint log-likelihood of every episode by its (optionally batch-normalized)
//! total return, averages over the batch and takes one Adam ascent step.
//!
//! Episode `e` of update `u` draws from ChaCha stream `(u << 32) | e` of the
//! master seed, so results do not depend on how many threads collect the
//! batch, and a run resumed at update `u` replays exactly.

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, SwarmEnv, SwarmState};
use crate::error::{Error, Result};
use crate::graph::{normalized_laplacian, shift_powers, ShiftPowers};
use crate::policy::{
    adam_step, log_prob_grads, sample_actions, ActionDistribution, AdamConfig, AdamState, GcnConfig, GcnPolicy,
    MlpConfig, MlpPolicy, Policy,
};

const INIT_STREAM: u64 = u64::MAX;
const EVAL_STREAM_BASE: u64 = 1 << 63;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub seed: u64,
    /// Episodes per gradient step.
    pub episodes_per_update: usize,
    pub total_updates: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Center and scale episode returns within each batch.
    pub normalize_returns: bool,
    pub entropy_coef: f64,
    /// Checkpoint period in updates; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            seed: 0,
            episodes_per_update: 32,
            total_updates: 300,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            normalize_returns: true,
            entropy_coef: 0.0,
            checkpoint_every: 0,
        }
    }
}

impl TrainerConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// Everything a training run depends on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub trainer: TrainerConfig,
    pub env: EnvConfig,
    pub policy: GcnConfig,
    pub baseline: MlpConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        let t = &self.trainer;
        if t.episodes_per_update == 0 {
            return Err(Error::InvalidConfig("trainer.episodes_per_update must be at least 1".into()));
        }
        if !(t.lr >= 0.0) || !t.lr.is_finite() {
            return Err(Error::InvalidConfig(format!("trainer.lr must be finite and non-negative, got {}", t.lr)));
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) || !(t.adam_eps > 0.0) {
            return Err(Error::InvalidConfig("adam betas must lie in [0, 1) and adam_eps be positive".into()));
        }
        if self.policy.action_dim != 2 || self.baseline.action_dim != 2 {
            return Err(Error::InvalidConfig("action_dim must be 2 for planar robots".into()));
        }
        Ok(())
    }

    /// Stable FNV-1a hash of the canonical JSON form, leaving out the run
    /// length and checkpoint period so an extended or resumed run keeps it.
    pub fn hash(&self) -> u64 {
        let mut c = self.clone();
        c.trainer.total_updates = 0;
        c.trainer.checkpoint_every = 0;
        let json = serde_json::to_string(&c).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

pub fn episode_rng(seed: u64, update: usize, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((update as u64) << 32) | episode as u64);
    rng
}

pub fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    rng
}

pub fn eval_rng(seed: u64, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(EVAL_STREAM_BASE | episode as u64);
    rng
}

/// How actions are drawn from the policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    /// `a = mu`.
    Mean,
}

/// One episode. `observations`, `actions`, `rewards`, `dists` and `caches`
/// are indexed by step; `states` additionally holds the final state.
#[derive(Clone, Debug)]
pub struct Trajectory<C> {
    pub observations: Vec<DMatrix<f64>>,
    pub actions: Vec<DMatrix<f64>>,
    pub rewards: Vec<f64>,
    pub dists: Vec<ActionDistribution>,
    pub caches: Vec<C>,
    pub states: Vec<SwarmState>,
    pub total_return: f64,
    pub collided: bool,
    /// First step after which every robot sat within epsilon of its goal.
    pub covered_at: Option<usize>,
}

impl<C> Trajectory<C> {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

fn powers_for(env: &SwarmEnv, taps: usize) -> ShiftPowers {
    shift_powers(&normalized_laplacian(env.graph()), taps)
}

/// Runs one episode from the environment's current state until the horizon
/// (or an early stop).
pub fn collect_rollout<P: Policy, R: rand::Rng + ?Sized>(
    env: &mut SwarmEnv,
    policy: &P,
    rng: &mut R,
    mode: ActionMode,
) -> Result<Trajectory<P::Cache>> {
    if policy.obs_width() != env.config().obs_width() {
        return Err(Error::Incompatible(format!(
            "policy observes {} features per robot, environment provides {}",
            policy.obs_width(),
            env.config().obs_width()
        )));
    }
    let taps = policy.shift_taps();
    let horizon = env.config().horizon;
    let mut powers = powers_for(env, taps);
    let mut epoch = env.graph_epoch();
    let mut traj = Trajectory {
        observations: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        dists: Vec::with_capacity(horizon),
        caches: Vec::with_capacity(horizon),
        states: vec![env.state().clone()],
        total_return: 0.0,
        collided: false,
        covered_at: None,
    };
    loop {
        if env.graph_epoch() != epoch {
            powers = powers_for(env, taps);
            epoch = env.graph_epoch();
        }
        let obs = env.observe();
        let (dist, cache) = policy.forward(&powers, &obs)?;
        let actions = match mode {
            ActionMode::Sample => sample_actions(&dist.mu, &dist.sigma, rng),
            ActionMode::Mean => dist.mu.clone(),
        };
        let out = env.step(&actions)?;
        traj.observations.push(obs);
        traj.actions.push(actions);
        traj.rewards.push(out.reward);
        traj.dists.push(dist);
        traj.caches.push(cache);
        traj.states.push(env.state().clone());
        traj.total_return += out.reward;
        traj.collided |= out.collision;
        if out.all_covered && traj.covered_at.is_none() {
            traj.covered_at = Some(env.state().time);
        }
        if out.done {
            break;
        }
    }
    Ok(traj)
}

/// Per-episode weights applied to the score function.
pub fn return_weights(returns: &[f64], normalize: bool) -> Vec<f64> {
    if !normalize {
        return returns.to_vec();
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 * mean.abs().max(1.0) {
        return vec![0.0; returns.len()];
    }
    returns.iter().map(|r| (r - mean) / std).collect()
}

/// Summed gradient of the joint log-likelihood of one episode.
pub fn score_function<P: Policy>(policy: &P, traj: &Trajectory<P::Cache>) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; policy.num_params()];
    for t in 0..traj.len() {
        let d = &traj.dists[t];
        let (dmu, dls) = log_prob_grads(&d.mu, &d.sigma, &traj.actions[t])?;
        let g = policy.backward(&traj.caches[t], &dmu, &dls)?;
        for (a, v) in acc.iter_mut().zip(g) {
            *a += v;
        }
    }
    Ok(acc)
}

/// Batch estimate of the gradient of expected return (ascent direction):
/// `mean_i w_i * sum_t grad log pi(a_t | x_t)`.
pub fn policy_gradient<P: Policy>(batch: &[Trajectory<P::Cache>], policy: &P, normalize: bool) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("policy gradient needs at least one trajectory".into()));
    }
    let returns: Vec<f64> = batch.iter().map(|t| t.total_return).collect();
    let weights = return_weights(&returns, normalize);
    let scores: Vec<Vec<f64>> = batch
        .par_iter()
        .zip(weights.par_iter())
        .map(|(traj, &w)| {
            if w == 0.0 {
                Ok(vec![0.0; policy.num_params()])
            } else {
                score_function(policy, traj).map(|g| g.into_iter().map(|v| v * w).collect())
            }
        })
        .collect::<Result<_>>()?;
    let mut grad = vec![0.0; policy.num_params()];
    for s in &scores {
        for (g, v) in grad.iter_mut().zip(s) {
            *g += v;
        }
    }
    let b = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= b);
    Ok(grad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub update: usize,
    pub mean_return: f64,
    pub std_return: f64,
    /// Fraction of episodes with at least one collision.
    pub collision_rate: f64,
    /// Fraction of episodes in which every robot covered its goal at some step.
    pub coverage_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LearningCurve {
    pub records: Vec<CurveRecord>,
}

impl LearningCurve {
    pub fn mean_returns(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mean_return).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| crate::env::record::csv_io(path, e))?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| crate::env::record::csv_io(path, e))?;
        let records = r.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(Self { records })
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Stateful training loop: policy, optimizer state and the update counter.
#[derive(Clone, Debug)]
pub struct Trainer<P: Policy> {
    config: TrainConfig,
    policy: P,
    adam: AdamState,
    next_update: usize,
    curve: LearningCurve,
}

impl Trainer<GcnPolicy> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let policy = GcnPolicy::new(config.env.obs_width(), &config.policy, &mut init_rng(config.trainer.seed))?;
        Ok(Self::with_policy(config, policy))
    }
}

impl Trainer<MlpPolicy> {
    pub fn new_baseline(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let policy = MlpPolicy::new(
            config.env.n_robots,
            config.env.obs_width(),
            &config.baseline,
            &mut init_rng(config.trainer.seed),
        )?;
        Ok(Self::with_policy(config, policy))
    }
}

impl<P: Policy> Trainer<P> {
    pub fn with_policy(config: TrainConfig, policy: P) -> Self {
        let adam = AdamState::new(policy.num_params());
        Self {
            config,
            policy,
            adam,
            next_update: 0,
            curve: LearningCurve::default(),
        }
    }

    /// Continues a run from saved policy and optimizer state.
    pub fn resume(config: TrainConfig, policy: P, adam: AdamState, curve: LearningCurve) -> Result<Self> {
        config.validate()?;
        if adam.m.len() != policy.num_params() {
            return Err(Error::Incompatible(format!(
                "optimizer state has {} entries, policy has {} parameters",
                adam.m.len(),
                policy.num_params()
            )));
        }
        Ok(Self {
            next_update: curve.records.len(),
            config,
            policy,
            adam,
            curve,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn policy(&self) -> &P {
        &self.policy
    }

    pub fn adam_state(&self) -> &AdamState {
        &self.adam
    }

    pub fn curve(&self) -> &LearningCurve {
        &self.curve
    }

    pub fn next_update(&self) -> usize {
        self.next_update
    }

    pub fn is_finished(&self) -> bool {
        self.next_update >= self.config.trainer.total_updates
    }

    /// Collects the batch for update `update` with the current policy.
    pub fn collect_batch(&self, update: usize) -> Result<Vec<Trajectory<P::Cache>>> {
        let cfg = &self.config;
        (0..cfg.trainer.episodes_per_update)
            .into_par_iter()
            .map(|e| {
                let mut rng = episode_rng(cfg.trainer.seed, update, e);
                let mut env = SwarmEnv::new(cfg.env.clone())?;
                env.reset(&mut rng)?;
                collect_rollout(&mut env, &self.policy, &mut rng, ActionMode::Sample)
            })
            .collect()
    }

    /// One collect / estimate / Adam step.
    pub fn step(&mut self) -> Result<CurveRecord> {
        let update = self.next_update;
        let batch = self.collect_batch(update)?;
        let returns: Vec<f64> = batch.iter().map(|t| t.total_return).collect();
        let (mean_return, std_return) = mean_std(&returns);
        if !mean_return.is_finite() {
            return Err(Error::Divergence { update, mean_return });
        }
        let b = batch.len() as f64;
        let record = CurveRecord {
            update,
            mean_return,
            std_return,
            collision_rate: batch.iter().filter(|t| t.collided).count() as f64 / b,
            coverage_rate: batch.iter().filter(|t| t.covered_at.is_some()).count() as f64 / b,
        };

        let mut grad = policy_gradient(&batch, &self.policy, self.config.trainer.normalize_returns)?;
        drop(batch);
        if self.config.trainer.entropy_coef != 0.0 {
            let bonus = self.entropy_gradient()?;
            for (g, e) in grad.iter_mut().zip(bonus) {
                *g += self.config.trainer.entropy_coef * e;
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { update, mean_return });
        }
        // Adam descends, so feed it the negated ascent direction
        grad.iter_mut().for_each(|g| *g = -*g);
        let mut theta = self.policy.params();
        adam_step(&mut theta, &grad, &mut self.adam, &self.config.trainer.adam())?;
        self.policy.set_params(&theta)?;

        self.curve.records.push(record.clone());
        self.next_update += 1;
        Ok(record)
    }

    /// Gradient of the summed per-robot Gaussian entropy; with state-free
    /// `log_sigma` it only touches those parameters.
    fn entropy_gradient(&self) -> Result<Vec<f64>> {
        let n = self.config.env.n_robots;
        let a = self.policy.action_dim();
        let mut env = SwarmEnv::new(self.config.env.clone())?;
        env.reset(&mut init_rng(self.config.trainer.seed))?;
        let powers = shift_powers(&normalized_laplacian(env.graph()), self.policy.shift_taps());
        let (_, cache) = self.policy.forward(&powers, &env.observe())?;
        self.policy
            .backward(&cache, &DMatrix::zeros(n, a), &DMatrix::from_element(n, a, 1.0))
    }

    /// Runs every remaining update.
    pub fn run(&mut self) -> Result<()> {
        self.run_with(|_, _| Ok(()))
    }

    /// Runs every remaining update, calling `after_update` after each one.
    pub fn run_with(&mut self, mut after_update: impl FnMut(&Self, &CurveRecord) -> Result<()>) -> Result<()> {
        while !self.is_finished() {
            let rec = self.step()?;
            after_update(self, &rec)?;
        }
        Ok(())
    }

    pub fn into_parts(self) -> (P, LearningCurve) {
        (self.policy, self.curve)
    }
}

/// Trains the graph policy.
pub fn train(config: TrainConfig) -> Result<(GcnPolicy, LearningCurve)> {
    let mut t = Trainer::new(config)?;
    t.run()?;
    Ok(t.into_parts())
}

/// Same loop with the fully-connected baseline policy.
pub fn train_vpg_baseline(config: TrainConfig) -> Result<(MlpPolicy, LearningCurve)> {
    let mut t = Trainer::new_baseline(config)?;
    t.run()?;
    Ok(t.into_parts())
}

/// Aggregate of deterministic or sampled evaluation episodes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_return: f64,
    /// Fraction of episodes where every robot covered its goal within the horizon.
    pub coverage_rate: f64,
    pub collision_free_rate: f64,
    /// Fraction of episodes that covered and never collided.
    pub success_rate: f64,
}

/// Evaluates `policy` on fresh layouts from `env_config`'s generators.
pub fn evaluate<P: Policy>(policy: &P, env_config: &EnvConfig, episodes: usize, seed: u64, mode: ActionMode) -> Result<EvalSummary> {
    let trajs: Vec<(f64, bool, bool)> = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let mut rng = eval_rng(seed, e);
            let mut env = SwarmEnv::new(env_config.clone())?;
            env.reset(&mut rng)?;
            let t = collect_rollout(&mut env, policy, &mut rng, mode)?;
            Ok((t.total_return, t.covered_at.is_some(), t.collided))
        })
        .collect::<Result<_>>()?;
    let n = episodes.max(1) as f64;
    Ok(EvalSummary {
        episodes,
        mean_return: trajs.iter().map(|t| t.0).sum::<f64>() / n,
        coverage_rate: trajs.iter().filter(|t| t.1).count() as f64 / n,
        collision_free_rate: trajs.iter().filter(|t| !t.2).count() as f64 / n,
        success_rate: trajs.iter().filter(|t| t.1 && !t.2).count() as f64 / n,
    })
}
