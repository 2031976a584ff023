//! Clipped-surrogate PPO with GAE over vectorised environments.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::env::{Env, Outcome};
use super::nn::Adam;
use super::obs::Observation;
use super::policy::{entropy, log_prob, ActorCritic};
use crate::par;

/// Fields missing from a config file take their default values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub learning_rate: f64,
    /// `"linear"` decays to zero over `total_timesteps`, `"constant"` does not.
    pub lr_schedule: String,
    pub n_steps: usize,
    pub n_envs: usize,
    pub batch_size: usize,
    pub n_epochs: usize,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub total_timesteps: u64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_range: f64,
    pub max_grad_norm: f64,
    pub normalize_advantage: bool,
    pub hidden: usize,
    /// Initial log standard deviation of the action distribution.
    pub log_std_init: f64,
    /// Standardise vector observations with running statistics; the final
    /// statistics are stored in the returned model.
    pub normalize_observations: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            learning_rate: 1.4e-4,
            lr_schedule: "linear".into(),
            n_steps: 2048,
            n_envs: 8,
            batch_size: 4096,
            n_epochs: 10,
            ent_coef: 1.68e-6,
            vf_coef: 0.5,
            total_timesteps: 200_000,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_range: 0.2,
            max_grad_norm: 0.5,
            normalize_advantage: true,
            hidden: 64,
            log_std_init: -1.5,
            normalize_observations: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let rollout = self.n_steps * self.n_envs;
        if self.batch_size == 0 || !rollout.is_multiple_of(self.batch_size) {
            return Err(PpoError::Config(format!("batch_size {} must divide n_steps × n_envs = {rollout}", self.batch_size)));
        }
        if !matches!(self.lr_schedule.as_str(), "linear" | "constant") {
            return Err(PpoError::Config(format!("unknown lr schedule `{}`", self.lr_schedule)));
        }
        Ok(())
    }

    /// Learning rate for a given fraction of training still remaining.
    pub fn lr_at(&self, progress_remaining: f64) -> f64 {
        match self.lr_schedule.as_str() {
            "linear" => self.learning_rate * progress_remaining,
            _ => self.learning_rate,
        }
    }
}

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("invalid PPO configuration: {0}")]
    Config(String),
    #[error("non-finite loss at iteration {iteration}: policy {policy_loss}, value {value_loss}")]
    NonFiniteLoss { iteration: usize, policy_loss: f64, value_loss: f64 },
}

/// One training sample of a minibatch.
#[derive(Debug, Clone)]
pub struct Sample {
    pub obs: Observation,
    /// The sampled, unclipped action.
    pub action: [f64; 2],
    pub log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

const CHUNK: usize = 256;

/// Loss over a minibatch (advantages used as given) and, when `grad` is
/// set, its gradient.
fn loss_impl(model: &ActorCritic, p: &[f64], batch: &[Sample], cfg: &PpoConfig, want_grad: bool) -> (LossTerms, Vec<f64>) {
    let n = batch.len() as f64;
    let chunks: Vec<&[Sample]> = batch.chunks(CHUNK).collect();
    let parts = par::map(&chunks, |chunk| {
        let mut g = if want_grad { vec![0.0; p.len()] } else { Vec::new() };
        let mut t = LossTerms::default();
        for s in chunk.iter() {
            let f = model.forward(p, &s.obs);
            let logp = log_prob(f.mean, f.log_std, s.action);
            let ratio = (logp - s.log_prob).exp();
            let clipped = ratio.clamp(1.0 - cfg.clip_range, 1.0 + cfg.clip_range);
            let (u, c) = (ratio * s.advantage, clipped * s.advantage);
            t.policy -= u.min(c) / n;
            let err = f.value - s.ret;
            t.value += err * err / n;
            t.entropy -= entropy(f.log_std) / n;
            t.approx_kl += ((ratio - 1.0) - (logp - s.log_prob)) / n;
            if (ratio - 1.0).abs() > cfg.clip_range {
                t.clip_fraction += 1.0 / n;
            }
            if want_grad {
                let d_logp = if u <= c { -s.advantage * ratio / n } else { 0.0 };
                let mut d_mean = [0.0; 2];
                let mut d_log_std = [0.0; 2];
                for k in 0..2 {
                    let sigma = f.log_std[k].exp();
                    let z = (s.action[k] - f.mean[k]) / sigma;
                    d_mean[k] = d_logp * z / sigma;
                    d_log_std[k] = d_logp * (z * z - 1.0) - cfg.ent_coef / n;
                }
                let d_value = cfg.vf_coef * 2.0 * err / n;
                model.backward(p, &f, d_mean, d_log_std, d_value, &mut g);
            }
        }
        (t, g)
    });
    let mut total = LossTerms::default();
    let mut grad = if want_grad { vec![0.0; p.len()] } else { Vec::new() };
    for (t, g) in parts {
        total.policy += t.policy;
        total.value += t.value;
        total.entropy += t.entropy;
        total.approx_kl += t.approx_kl;
        total.clip_fraction += t.clip_fraction;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    total.total = total.policy + cfg.ent_coef * total.entropy + cfg.vf_coef * total.value;
    (total, grad)
}

pub fn ppo_loss(model: &ActorCritic, p: &[f64], batch: &[Sample], cfg: &PpoConfig) -> LossTerms {
    loss_impl(model, p, batch, cfg, false).0
}

pub fn ppo_loss_grad(model: &ActorCritic, p: &[f64], batch: &[Sample], cfg: &PpoConfig) -> (LossTerms, Vec<f64>) {
    loss_impl(model, p, batch, cfg, true)
}

/// Advantages and returns by generalised advantage estimation. `dones[t]`
/// marks that the episode ended at step `t`; the value after the last
/// step is `last_value`.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut last = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 == n { last_value } else { values[t + 1] };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        last = delta + gamma * lambda * live * last;
        adv[t] = last;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Stateless 64-bit mixer used to derive per-episode seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub timesteps: u64,
    /// Mean return of the last 100 finished episodes.
    pub mean_return: f64,
    pub success_rate: f64,
    pub episodes: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub lr: f64,
}

pub struct TrainResult {
    pub model: ActorCritic,
    pub curve: Vec<IterationLog>,
}

pub fn write_training_csv(curve: &[IterationLog], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in curve {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Running mean and variance merged batch by batch.
#[derive(Debug, Clone)]
struct RunningStat {
    count: f64,
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl RunningStat {
    fn new(n: usize) -> Self {
        RunningStat { count: 1e-4, mean: vec![0.0; n], var: vec![1.0; n] }
    }

    fn update(&mut self, rows: &[&[f64]]) {
        let m = rows.len() as f64;
        if m == 0.0 {
            return;
        }
        let total = self.count + m;
        for k in 0..self.mean.len() {
            let bm = rows.iter().map(|r| r[k]).sum::<f64>() / m;
            let bv = rows.iter().map(|r| (r[k] - bm).powi(2)).sum::<f64>() / m;
            let delta = bm - self.mean[k];
            let m2 = self.var[k] * self.count + bv * m + delta * delta * self.count * m / total;
            self.mean[k] += delta * m / total;
            self.var[k] = m2 / total;
        }
        self.count = total;
    }

    fn scale(&self) -> Vec<f64> {
        self.var.iter().map(|v| (v + 1e-8).sqrt()).collect()
    }
}

struct Slot<E> {
    env: E,
    obs: Observation,
    episodes: u64,
    ret: f64,
    index: u64,
}

/// Trains an actor-critic with PPO. `make_env(i)` builds the `i`-th
/// environment. `on_iteration` sees each log row as it is produced.
pub fn ppo_train<E, F>(
    make_env: F,
    cfg: &PpoConfig,
    seed: u64,
    mut on_iteration: impl FnMut(&IterationLog),
) -> Result<TrainResult, PpoError>
where
    E: Env,
    F: Fn(usize) -> E,
{
    cfg.validate()?;
    let mut slots: Vec<Slot<E>> = (0..cfg.n_envs)
        .map(|i| {
            let mut env = make_env(i);
            let obs = env.reset(mix_seed(seed, (i as u64) << 32));
            Slot { env, obs, episodes: 0, ret: 0.0, index: i as u64 }
        })
        .collect();
    let mode = slots[0].env.obs_mode();
    let mut model = ActorCritic::new(mode, cfg.hidden, seed).with_log_std(cfg.log_std_init);
    let mut stats = RunningStat::new(mode.vector_len());
    // The network trains on already-normalised observations.
    let normalize = |stats: &RunningStat, o: &Observation| -> Observation {
        if !cfg.normalize_observations {
            return o.clone();
        }
        let vector = o
            .vector
            .iter()
            .zip(&stats.mean)
            .zip(stats.scale())
            .map(|((x, m), k)| ((x - m) / k).clamp(-super::policy::OBS_CLIP, super::policy::OBS_CLIP))
            .collect();
        Observation { image: o.image.clone(), vector }
    };
    let mut params = model.params.clone();
    let mut adam = Adam::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xA11CE));
    let mut finished: Vec<(f64, bool)> = Vec::new();
    let mut curve = Vec::new();
    let mut timesteps = 0u64;
    let rollout = cfg.n_steps * cfg.n_envs;

    let mut iteration = 0;
    while timesteps < cfg.total_timesteps {
        iteration += 1;
        let progress_remaining = 1.0 - timesteps as f64 / cfg.total_timesteps as f64;
        let lr = cfg.lr_at(progress_remaining);

        // Rollout, stored env-major: index = env * n_steps + t.
        let mut obs_buf: Vec<Vec<Observation>> = vec![Vec::with_capacity(cfg.n_steps); cfg.n_envs];
        let mut act_buf = vec![Vec::with_capacity(cfg.n_steps); cfg.n_envs];
        let mut logp_buf = vec![Vec::with_capacity(cfg.n_steps); cfg.n_envs];
        let mut val_buf = vec![Vec::with_capacity(cfg.n_steps); cfg.n_envs];
        let mut rew_buf = vec![Vec::with_capacity(cfg.n_steps); cfg.n_envs];
        let mut done_buf = vec![Vec::with_capacity(cfg.n_steps); cfg.n_envs];
        for _ in 0..cfg.n_steps {
            if cfg.normalize_observations {
                let raw: Vec<&[f64]> = slots.iter().map(|s| s.obs.vector.as_slice()).collect();
                stats.update(&raw);
            }
            let normed: Vec<Observation> = slots.iter().map(|s| normalize(&stats, &s.obs)).collect();
            let current: Vec<&Observation> = normed.iter().collect();
            let heads = par::map(&current, |o| {
                let f = model.forward(&params, o);
                (f.mean, f.log_std, f.value)
            });
            let actions: Vec<[f64; 2]> = heads
                .iter()
                .map(|(mean, log_std, _)| {
                    let mut a = [0.0; 2];
                    for k in 0..2 {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        a[k] = mean[k] + log_std[k].exp() * z;
                    }
                    a
                })
                .collect();
            let mut work: Vec<(&mut Slot<E>, [f64; 2], Option<super::env::Transition>)> =
                slots.iter_mut().zip(&actions).map(|(s, a)| (s, *a, None)).collect();
            par::for_each_mut(&mut work, |(s, a, out)| {
                *out = Some(s.env.step(*a).expect("env was reset"));
            });
            let transitions: Vec<_> = work.into_iter().map(|(_, _, t)| t.expect("stepped")).collect();
            for (i, (tr, seen)) in transitions.into_iter().zip(normed).enumerate() {
                let (mean, log_std, value) = heads[i];
                let s = &mut slots[i];
                obs_buf[i].push(seen);
                s.obs = tr.obs.clone();
                act_buf[i].push(actions[i]);
                logp_buf[i].push(log_prob(mean, log_std, actions[i]));
                val_buf[i].push(value);
                let mut reward = tr.reward;
                s.ret += tr.reward;
                if tr.outcome == Outcome::Timeout {
                    reward += cfg.gamma * model.forward(&params, &normalize(&stats, &tr.obs)).value;
                }
                rew_buf[i].push(reward);
                done_buf[i].push(tr.outcome.is_done());
                if tr.outcome.is_done() {
                    finished.push((s.ret, tr.outcome == Outcome::Success));
                    s.ret = 0.0;
                    s.episodes += 1;
                    s.obs = s.env.reset(mix_seed(seed, (s.index << 32) | s.episodes));
                }
            }
        }
        timesteps += rollout as u64;

        let mut samples = Vec::with_capacity(rollout);
        for i in 0..cfg.n_envs {
            let last_value = model.forward(&params, &normalize(&stats, &slots[i].obs)).value;
            let (adv, ret) = gae(&rew_buf[i], &val_buf[i], &done_buf[i], last_value, cfg.gamma, cfg.gae_lambda);
            for t in 0..cfg.n_steps {
                samples.push(Sample {
                    obs: obs_buf[i][t].clone(),
                    action: act_buf[i][t],
                    log_prob: logp_buf[i][t],
                    advantage: adv[t],
                    ret: ret[t],
                });
            }
        }

        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut last_terms = LossTerms::default();
        for _ in 0..cfg.n_epochs {
            order.shuffle(&mut rng);
            for idx in order.chunks(cfg.batch_size) {
                let mut batch: Vec<Sample> = idx.iter().map(|&k| samples[k].clone()).collect();
                if cfg.normalize_advantage && batch.len() > 1 {
                    let m = batch.iter().map(|s| s.advantage).sum::<f64>() / batch.len() as f64;
                    let var = batch.iter().map(|s| (s.advantage - m).powi(2)).sum::<f64>() / (batch.len() - 1) as f64;
                    let sd = var.sqrt() + 1e-8;
                    for s in batch.iter_mut() {
                        s.advantage = (s.advantage - m) / sd;
                    }
                }
                let (terms, mut grad) = ppo_loss_grad(&model, &params, &batch, cfg);
                if !terms.total.is_finite() {
                    return Err(PpoError::NonFiniteLoss { iteration, policy_loss: terms.policy, value_loss: terms.value });
                }
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > cfg.max_grad_norm {
                    let k = cfg.max_grad_norm / norm;
                    grad.iter_mut().for_each(|g| *g *= k);
                }
                adam.step(&mut params, &grad, lr);
                last_terms = terms;
            }
        }

        let recent = &finished[finished.len().saturating_sub(100)..];
        let (mean_return, success_rate) = if recent.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let n = recent.len() as f64;
            (recent.iter().map(|r| r.0).sum::<f64>() / n, recent.iter().filter(|r| r.1).count() as f64 / n)
        };
        let log = IterationLog {
            iteration,
            timesteps,
            mean_return,
            success_rate,
            episodes: finished.len(),
            policy_loss: last_terms.policy,
            value_loss: last_terms.value,
            entropy_loss: last_terms.entropy,
            approx_kl: last_terms.approx_kl,
            clip_fraction: last_terms.clip_fraction,
            lr,
        };
        on_iteration(&log);
        curve.push(log);
    }
    model.params = params;
    if cfg.normalize_observations {
        model.obs_shift = stats.mean.clone();
        model.obs_scale = stats.scale();
    }
    Ok(TrainResult { model, curve })
}
