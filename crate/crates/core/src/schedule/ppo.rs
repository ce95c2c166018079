//! Distributed PPO over interval schedules.
//!
//! W workers roll out episodes from a read-only snapshot of the global policy
//! at version v. The updater consumes the merged batch (worker-index order)
//! and produces version v + 1.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::env::{CoolingEnv, RewardMode};
use super::nn::{log_softmax, softmax, Adam, Mlp};
use super::{beam, MeasurementSchedule};
use crate::error::{Error, Result};
use crate::params::PhysicalParams;

/// PPO and environment settings. Everything the paper leaves open lives here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_r: usize,
    pub rounds: usize,
    pub actions: usize,
    pub workers: usize,
    pub episodes_per_worker: usize,
    pub updates: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub clip: f64,
    pub discount: f64,
    pub gae_lambda: f64,
    pub policy_lr: f64,
    pub critic_lr: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub reward_scale: f64,
    pub hidden: Vec<usize>,
    pub reward_mode: RewardMode,
    /// Updates without improvement, below the equal-spacing baseline, before warning.
    pub stagnation_window: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_r: 10,
            rounds: 30,
            actions: 5,
            workers: 4,
            episodes_per_worker: 8,
            updates: 400,
            epochs: 4,
            minibatch: 240,
            clip: 0.2,
            discount: 0.99,
            gae_lambda: 0.95,
            policy_lr: 3e-4,
            critic_lr: 1e-3,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            reward_scale: 0.01,
            hidden: vec![64, 64],
            reward_mode: RewardMode::PerStep,
            stagnation_window: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Hex sha256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.actions == 0 || self.rounds == 0 {
            return bad("need at least one action and one round");
        }
        if self.workers == 0 || self.episodes_per_worker == 0 || self.minibatch == 0 {
            return bad("workers, episodes_per_worker and minibatch must be positive");
        }
        if !(self.clip > 0.0
            && (0.0..=1.0).contains(&self.discount)
            && (0.0..=1.0).contains(&self.gae_lambda))
        {
            return bad("clip must be positive; discount and gae_lambda in [0, 1]");
        }
        if !(self.policy_lr > 0.0 && self.critic_lr > 0.0 && self.reward_scale > 0.0) {
            return bad("learning rates and reward scale must be positive");
        }
        Ok(())
    }

    /// Environment described by this config.
    pub fn env(&self, params: &PhysicalParams) -> Result<CoolingEnv> {
        Ok(
            CoolingEnv::new(params, self.n_r, self.rounds, self.actions)?
                .with_reward_mode(self.reward_mode),
        )
    }
}

/// Policy and critic networks with optimizer state and a version counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub version: u64,
    pub policy: Mlp,
    pub critic: Mlp,
    policy_opt: Adam,
    critic_opt: Adam,
}

impl PolicyParams {
    pub fn new(obs_dim: usize, actions: usize, config: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX, 0, 0));
        let sizes = |out| {
            let mut s = vec![obs_dim];
            s.extend(&config.hidden);
            s.push(out);
            s
        };
        let policy = Mlp::new(&sizes(actions), 0.01, &mut rng);
        let critic = Mlp::new(&sizes(1), 1.0, &mut rng);
        Self {
            version: 0,
            policy_opt: Adam::new(policy.params().len(), config.policy_lr),
            critic_opt: Adam::new(critic.params().len(), config.critic_lr),
            policy,
            critic,
        }
    }

    pub fn for_env(env: &CoolingEnv, config: &TrainConfig) -> Self {
        Self::new(env.observation_dim(), env.actions(), config)
    }

    pub fn actions(&self) -> usize {
        self.policy.output_dim()
    }

    pub fn action_probs(&self, obs: &[f64]) -> Vec<f64> {
        softmax(&self.policy.predict(obs))
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        self.critic.predict(obs)[0]
    }
}

/// How a rollout picks actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Stochastic,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// Populations before the measurement.
    pub populations: Vec<f64>,
    pub observation: Vec<f64>,
    /// 1-based interval multiple.
    pub action: u32,
    pub log_prob: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub final_populations: Vec<f64>,
    pub final_fidelity: f64,
    pub policy_version: u64,
}

impl Trajectory {
    pub fn actions(&self) -> Vec<u32> {
        self.transitions.iter().map(|t| t.action).collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    /// Populations after step i.
    pub fn populations_after(&self, i: usize) -> &[f64] {
        self.transitions
            .get(i + 1)
            .map_or(&self.final_populations, |t| &t.populations)
    }
}

/// Mixes the master seed with (update, worker, episode) into one stream seed.
pub fn derive_seed(master: u64, update: u64, worker: u64, episode: u64) -> u64 {
    let mut h = Sha256::new();
    for v in [master, update, worker, episode] {
        h.update(v.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Plays one episode of `env.rounds()` measurements.
pub fn rollout(
    policy: &PolicyParams,
    env: &CoolingEnv,
    seed: u64,
    sampling: Sampling,
) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = env.initial().as_slice().to_vec();
    let mut transitions = Vec::with_capacity(env.rounds());
    for step in 0..env.rounds() {
        let obs = env.observe(&p, step);
        let logp = log_softmax(&policy.policy.predict(&obs));
        let idx = match sampling {
            Sampling::Greedy => argmax(&logp),
            Sampling::Stochastic => sample(&logp, rng.gen::<f64>()),
        };
        let before = p.clone();
        env.apply(&mut p, idx as u32 + 1)?;
        transitions.push(Transition {
            populations: before,
            observation: obs,
            action: idx as u32 + 1,
            log_prob: logp[idx],
            reward: env.reward_at(&p, step),
        });
    }
    Ok(Trajectory {
        transitions,
        final_fidelity: p[env.n_r()],
        final_populations: p,
        policy_version: policy.version,
    })
}

fn argmax(v: &[f64]) -> usize {
    // first maximum wins, so ties resolve toward shorter intervals
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| {
            if x > best.1 {
                (i, x)
            } else {
                best
            }
        })
        .0
}

fn sample(logp: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, lp) in logp.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    logp.len() - 1
}

/// One training sample for the surrogate and value losses.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub observation: Vec<f64>,
    /// 0-based action index.
    pub action: usize,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub target: f64,
}

/// Clipped surrogate loss −mean[min(rA, clip(r)A)] − c·mean[H] and its gradient.
pub fn surrogate_loss_and_grad(
    policy: &Mlp,
    samples: &[Sample],
    clip: f64,
    entropy_coef: f64,
) -> (f64, Vec<f64>) {
    let parts: Vec<(f64, Vec<f64>)> = samples
        .par_chunks(64)
        .map(|chunk| {
            let mut grad = vec![0.0; policy.params().len()];
            let mut loss = 0.0;
            for s in chunk {
                let cache = policy.forward(&s.observation);
                let logp = log_softmax(cache.output());
                let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
                let ratio = (logp[s.action] - s.old_log_prob).exp();
                let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
                let (surr, d_logp) = if ratio * s.advantage <= clipped * s.advantage {
                    (ratio * s.advantage, ratio * s.advantage)
                } else {
                    (clipped * s.advantage, 0.0)
                };
                let entropy: f64 = -p.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
                loss -= surr + entropy_coef * entropy;
                let d_out: Vec<f64> = (0..p.len())
                    .map(|j| {
                        let onehot = if j == s.action { 1.0 } else { 0.0 };
                        let d_surr = d_logp * (onehot - p[j]);
                        let d_ent = -p[j] * (logp[j] + entropy);
                        -(d_surr + entropy_coef * d_ent)
                    })
                    .collect();
                policy.backward(&cache, &d_out, &mut grad);
            }
            (loss, grad)
        })
        .collect();
    reduce(parts, policy.params().len(), samples.len())
}

/// Value loss mean ½(V − target)² and its gradient.
pub fn value_loss_and_grad(critic: &Mlp, samples: &[Sample]) -> (f64, Vec<f64>) {
    let parts: Vec<(f64, Vec<f64>)> = samples
        .par_chunks(64)
        .map(|chunk| {
            let mut grad = vec![0.0; critic.params().len()];
            let mut loss = 0.0;
            for s in chunk {
                let cache = critic.forward(&s.observation);
                let err = cache.output()[0] - s.target;
                loss += 0.5 * err * err;
                critic.backward(&cache, &[err], &mut grad);
            }
            (loss, grad)
        })
        .collect();
    reduce(parts, critic.params().len(), samples.len())
}

// Sums chunk results in chunk order so the result is independent of thread scheduling.
fn reduce(parts: Vec<(f64, Vec<f64>)>, n: usize, count: usize) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for (l, g) in parts {
        loss += l;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    let inv = 1.0 / count.max(1) as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    (loss * inv, grad)
}

fn check_finite(what: &str, loss: f64, grad: &[f64]) -> Result<()> {
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        let bad = grad.iter().filter(|g| !g.is_finite()).count();
        return Err(Error::NonFiniteGradient(format!(
            "{what}: loss {loss}, {bad} non-finite components"
        )));
    }
    Ok(())
}

fn clip_norm(grad: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        grad.iter_mut().for_each(|g| *g *= max_norm / norm);
    }
}

/// Builds samples with GAE advantages from the global critic.
pub fn prepare_samples(
    global: &PolicyParams,
    batch: &[Trajectory],
    config: &TrainConfig,
) -> Vec<Sample> {
    let mut samples = Vec::new();
    for traj in batch {
        let values: Vec<f64> = traj
            .transitions
            .iter()
            .map(|t| global.value(&t.observation))
            .collect();
        let n = values.len();
        let mut adv = vec![0.0; n];
        let mut next_adv = 0.0;
        for t in (0..n).rev() {
            let next_v = if t + 1 < n { values[t + 1] } else { 0.0 };
            let delta = config.reward_scale * traj.transitions[t].reward + config.discount * next_v
                - values[t];
            next_adv = delta + config.discount * config.gae_lambda * next_adv;
            adv[t] = next_adv;
        }
        for (t, tr) in traj.transitions.iter().enumerate() {
            samples.push(Sample {
                observation: tr.observation.clone(),
                action: tr.action as usize - 1,
                old_log_prob: tr.log_prob,
                advantage: adv[t],
                target: adv[t] + values[t],
            });
        }
    }
    samples
}

/// PPO epochs over prepared samples. Advantages are normalized unless they
/// are all (numerically) equal; an all-zero policy gradient leaves the policy untouched.
pub fn optimize(
    global: &PolicyParams,
    mut samples: Vec<Sample>,
    config: &TrainConfig,
) -> Result<PolicyParams> {
    let mut next = global.clone();
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n;
    let std = (samples
        .iter()
        .map(|s| (s.advantage - mean).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if std > 1e-12 * (1.0 + mean.abs()) {
        samples
            .iter_mut()
            .for_each(|s| s.advantage = (s.advantage - mean) / std);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, global.version, u64::MAX, 1));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(config.minibatch) {
            let mb: Vec<Sample> = idx.iter().map(|&i| samples[i].clone()).collect();
            let (loss, mut grad) =
                surrogate_loss_and_grad(&next.policy, &mb, config.clip, config.entropy_coef);
            check_finite("policy", loss, &grad)?;
            if grad.iter().any(|g| *g != 0.0) {
                clip_norm(&mut grad, config.max_grad_norm);
                next.policy_opt.step(next.policy.params_mut(), &grad);
            }
            let (vloss, mut vgrad) = value_loss_and_grad(&next.critic, &mb);
            check_finite("critic", vloss, &vgrad)?;
            clip_norm(&mut vgrad, config.max_grad_norm);
            next.critic_opt.step(next.critic.params_mut(), &vgrad);
        }
    }
    next.version = global.version + 1;
    Ok(next)
}

/// Consumes a batch collected at the global's version and returns version v + 1.
pub fn update_global(
    global: &PolicyParams,
    batch: &[Trajectory],
    config: &TrainConfig,
) -> Result<PolicyParams> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    if let Some(t) = batch.iter().find(|t| t.policy_version != global.version) {
        return Err(Error::InvalidParameter(format!(
            "stale trajectory from policy version {} (global is {})",
            t.policy_version, global.version
        )));
    }
    optimize(global, prepare_samples(global, batch, config), config)
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub update: usize,
    pub mean_reward: f64,
    pub best_fidelity: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    /// Checkpoint whose greedy decode scored best.
    pub policy: PolicyParams,
    pub schedule: MeasurementSchedule,
    pub fidelity: f64,
    pub baseline_fidelity: f64,
    pub log: Vec<TrainRecord>,
    /// Greedy decode fell short of the all-τ_r schedule.
    pub failed: bool,
    /// Set when training stopped early on a non-finite update.
    pub aborted: Option<String>,
    pub config_hash: String,
}

/// Trains on the closed-system environment built from `params` and `config`.
pub fn train(
    params: &PhysicalParams,
    config: &TrainConfig,
    log_path: Option<&Path>,
) -> Result<TrainResult> {
    let env = config.env(params)?;
    let mut result = train_env(&env, config, log_path)?;
    result.schedule = MeasurementSchedule::new(params, config.n_r, result.schedule.actions.clone());
    Ok(result)
}

/// Trains on an explicit environment. The returned schedule carries the env's τ_r.
pub fn train_env(
    env: &CoolingEnv,
    config: &TrainConfig,
    log_path: Option<&Path>,
) -> Result<TrainResult> {
    config.validate()?;
    if env.actions() != config.actions || env.rounds() != config.rounds || env.n_r() != config.n_r {
        return Err(Error::InvalidParameter(
            "environment does not match TrainConfig".into(),
        ));
    }
    let start = Instant::now();
    let baseline = beam::equal_spacing(env)?;
    let mut global = PolicyParams::for_env(env, config);
    let greedy = |p: &PolicyParams| rollout(p, env, 0, Sampling::Greedy);
    let mut best = (greedy(&global)?, global.clone());
    let mut log = Vec::new();
    let mut aborted = None;
    let mut since_improvement = 0;
    let mut writer = match log_path {
        Some(path) => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_path(path)?;
            w.write_record(["update", "mean_reward", "best_fidelity", "wall_time_s"])?;
            Some(w)
        }
        None => None,
    };

    // a single action leaves nothing to learn
    let updates = if config.actions == 1 {
        0
    } else {
        config.updates
    };
    for update in 0..updates {
        let snapshot = &global;
        let per_worker: Vec<Result<Vec<Trajectory>>> = (0..config.workers)
            .into_par_iter()
            .map(|w| {
                (0..config.episodes_per_worker)
                    .map(|e| {
                        let seed = derive_seed(config.seed, update as u64, w as u64, e as u64);
                        rollout(snapshot, env, seed, Sampling::Stochastic)
                    })
                    .collect()
            })
            .collect();
        let mut batch = Vec::with_capacity(config.workers * config.episodes_per_worker);
        for w in per_worker {
            batch.extend(w?);
        }
        let mean_reward =
            batch.iter().map(Trajectory::total_reward).sum::<f64>() / batch.len() as f64;
        match update_global(&global, &batch, config) {
            Ok(next) => global = next,
            Err(e @ Error::NonFiniteGradient(_)) => {
                log::error!(
                    "update {update}: {e}; keeping best checkpoint (version {})",
                    best.1.version
                );
                aborted = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
        let decoded = greedy(&global)?;
        if decoded.final_fidelity > best.0.final_fidelity {
            best = (decoded, global.clone());
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
        if since_improvement == config.stagnation_window && best.0.final_fidelity < baseline {
            log::warn!(
                "no improvement for {} updates and greedy F_r {:.6} is below the equal-spacing {:.6}",
                config.stagnation_window,
                best.0.final_fidelity,
                baseline
            );
        }
        let record = TrainRecord {
            update,
            mean_reward,
            best_fidelity: best.0.final_fidelity,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        log::debug!(
            "update {update}: mean reward {mean_reward:.4}, best F_r {:.6}",
            record.best_fidelity
        );
        if let Some(w) = writer.as_mut() {
            w.serialize(&record)?;
            w.flush()?;
        }
        log.push(record);
    }
    if let Some(mut w) = writer {
        w.flush()?;
    }

    let (decoded, policy) = best;
    let failed = decoded.final_fidelity < baseline;
    if failed {
        log::warn!(
            "training failed: F_r {:.6} below equal spacing {:.6}",
            decoded.final_fidelity,
            baseline
        );
    }
    std::io::stderr().flush().ok();
    Ok(TrainResult {
        schedule: MeasurementSchedule {
            n_r: env.n_r(),
            tau_r: env.tau_r(),
            actions: decoded.actions(),
            step_two: Default::default(),
        },
        fidelity: decoded.final_fidelity,
        baseline_fidelity: baseline,
        policy,
        log,
        failed,
        aborted,
        config_hash: config.hash(),
    })
}
