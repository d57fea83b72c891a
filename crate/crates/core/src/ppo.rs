//! Desk-scale PPO: batched rollouts with auto-reset, GAE, and the clipped
//! surrogate with a separate value network.
//!
//! Batches are time-major: transition `(t, env)` lives at index `t * n_envs + env`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{episode_seed, ControlInput, Episode, SeedStream, TaskConfig};
use crate::error::{Error, Result};
use crate::harness::{self, episode_observation, ObservedFrame, PolicyAgent};
use crate::nn::{clip_grad_norm, Adam, Mlp};
use crate::policy::{layer_sizes, obs_dim, ActionScaler, PolicyNet, RunningMoments, ACTION_DIM, HIDDEN};
use crate::reward::{anneal_delta, RewardParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub n_envs: usize,
    pub horizon_steps: usize,
    pub n_updates: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub lr: f64,
    /// Decay the learning rate linearly to zero over the run.
    pub lr_anneal: bool,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub max_grad_norm: f64,
    pub init_log_std: f64,
    /// Normalize observations with running statistics of the rollouts.
    pub obs_norm: bool,
    /// Feed the waypoint horizon to the policy.
    pub use_horizon: bool,
    pub frame: ObservedFrame,
    /// Validation cadence in updates; the last update is always evaluated.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_envs: 256,
            horizon_steps: 64,
            n_updates: 400,
            epochs: 4,
            minibatches: 64,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            lr: 3e-4,
            lr_anneal: true,
            vf_coef: 0.5,
            ent_coef: 0.0,
            max_grad_norm: 1.0,
            init_log_std: -1.0,
            obs_norm: true,
            use_horizon: false,
            frame: ObservedFrame::Tracked,
            eval_every: 20,
            eval_episodes: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Environment steps over the whole run; drives the tolerance anneal.
    pub fn total_steps(&self) -> u64 {
        (self.n_envs * self.horizon_steps * self.n_updates) as u64
    }

    pub fn batch_size(&self) -> usize {
        self.n_envs * self.horizon_steps
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.n_envs == 0 || self.horizon_steps == 0 || self.n_updates == 0 || self.epochs == 0 {
            return bad("n_envs, horizon_steps, n_updates and epochs must be positive");
        }
        if self.minibatches == 0 || self.minibatches > self.batch_size() {
            return bad("minibatches must be in 1..=n_envs*horizon_steps");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return bad("gamma and gae_lambda must lie in (0, 1]");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(self.lr > 0.0) || !(self.max_grad_norm > 0.0) || self.vf_coef < 0.0 || self.ent_coef < 0.0 {
            return bad("lr and max_grad_norm must be positive, loss coefficients non-negative");
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("eval_every and eval_episodes must be positive");
        }
        Ok(())
    }
}

/// Transitions of one collection phase.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub n_envs: usize,
    pub horizon: usize,
    pub obs_dim: usize,
    /// Normalized observations, as fed to the networks.
    pub obs: Vec<f32>,
    pub raw_obs: Vec<f32>,
    /// Raw (unclipped) sampled actions.
    pub actions: Vec<f32>,
    pub log_probs: Vec<f64>,
    /// Environment reward of the step.
    pub rewards: Vec<f64>,
    /// Reward used for bootstrapping: includes `gamma * V(s_T)` at timeouts
    /// and the discounted capped tail at safety aborts.
    pub shaped_rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// False for transitions masked out of the loss.
    pub valid: Vec<bool>,
    /// Critic value of the observation after the last step, per env.
    pub last_values: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.n_envs * self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean_reward(&self) -> f64 {
        let n = self.valid.iter().filter(|v| **v).count().max(1);
        self.rewards.iter().zip(&self.valid).filter(|(_, v)| **v).map(|(r, _)| r).sum::<f64>() / n as f64
    }
}

/// A set of independent episodes that restart on termination with fresh
/// seeds from the training stream.
pub struct VecEnv {
    pub cfg: TaskConfig,
    pub envs: Vec<Episode>,
    pub use_horizon: bool,
    pub frame: ObservedFrame,
    pub scaler: ActionScaler,
    delta_p: f64,
    next_episode: u64,
}

impl VecEnv {
    pub fn new(cfg: &TaskConfig, n: usize, use_horizon: bool, frame: ObservedFrame) -> Result<Self> {
        cfg.validate()?;
        let mut v = Self {
            cfg: cfg.clone(),
            envs: Vec::with_capacity(n),
            use_horizon,
            frame,
            scaler: ActionScaler::from_params(&cfg.vehicle),
            delta_p: crate::reward::DELTA_P_START,
            next_episode: 0,
        };
        for _ in 0..n {
            let ep = v.fresh()?;
            v.envs.push(ep);
        }
        Ok(v)
    }

    pub fn obs_dim(&self) -> usize {
        obs_dim(if self.use_horizon { self.cfg.horizon_len } else { 0 })
    }

    /// Episodes started so far.
    pub fn episodes_started(&self) -> u64 {
        self.next_episode
    }

    fn fresh(&mut self) -> Result<Episode> {
        let seed = episode_seed(self.cfg.seed, SeedStream::Train, self.next_episode);
        self.next_episode += 1;
        let mut ep = Episode::new(&self.cfg, seed)?;
        ep.reward_params = RewardParams::new(self.cfg.control_dt, self.delta_p);
        Ok(ep)
    }

    pub fn set_delta(&mut self, delta_p: f64) {
        self.delta_p = delta_p;
        let p = RewardParams::new(self.cfg.control_dt, delta_p);
        for ep in &mut self.envs {
            ep.reward_params = p;
        }
    }

    pub fn reset(&mut self, i: usize) -> Result<()> {
        self.envs[i] = self.fresh()?;
        Ok(())
    }

    pub fn observation(&self, i: usize) -> Vec<f64> {
        episode_observation(&self.envs[i], self.use_horizon, self.frame)
    }
}

pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), s)| {
            let z = (a - m) / s.exp();
            -0.5 * z * z - s - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

fn critic_values(critic: &Mlp, obs: &[f32], n: usize) -> Result<Vec<f64>> {
    Ok(critic.predict(obs, n)?.into_iter().map(f64::from).collect())
}

/// Fill one batch of `n_envs * horizon_steps` transitions, resetting
/// episodes that finish. Non-finite observations reset the env and mask the
/// transition.
pub fn collect<R: Rng + ?Sized>(policy: &PolicyNet, critic: &Mlp, venv: &mut VecEnv, cfg: &TrainConfig, rng: &mut R) -> Result<RolloutBatch> {
    let n = venv.envs.len();
    let t_len = cfg.horizon_steps;
    let d = venv.obs_dim();
    if policy.input_dim() != d || critic.input_dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: policy.input_dim() });
    }
    let total = n * t_len;
    let mut batch = RolloutBatch {
        n_envs: n,
        horizon: t_len,
        obs_dim: d,
        obs: Vec::with_capacity(total * d),
        raw_obs: Vec::with_capacity(total * d),
        actions: Vec::with_capacity(total * ACTION_DIM),
        log_probs: Vec::with_capacity(total),
        rewards: Vec::with_capacity(total),
        shaped_rewards: Vec::with_capacity(total),
        values: Vec::with_capacity(total),
        dones: Vec::with_capacity(total),
        valid: Vec::with_capacity(total),
        last_values: Vec::new(),
    };
    let log_std: Vec<f64> = policy.log_std.iter().map(|s| *s as f64).collect();
    let gamma = cfg.gamma;
    let mut masked = vec![false; n];
    let mut obs = gather_observations(venv, &mut masked)?;
    for _ in 0..t_len {
        let x = policy.obs_norm.apply(&obs);
        let mean = policy.actor.predict(&x, n)?;
        let values = critic_values(critic, &x, n)?;
        let mut actions = vec![[0.0f64; ACTION_DIM]; n];
        for (i, a) in actions.iter_mut().enumerate() {
            for j in 0..ACTION_DIM {
                let eps: f64 = rng.sample(StandardNormal);
                a[j] = mean[i * ACTION_DIM + j] as f64 + log_std[j].exp() * eps;
            }
            let m: Vec<f64> = mean[i * ACTION_DIM..(i + 1) * ACTION_DIM].iter().map(|x| *x as f64).collect();
            batch.log_probs.push(gaussian_log_prob(a, &m, &log_std));
            batch.actions.extend(a.iter().map(|x| *x as f32));
        }
        batch.obs.extend_from_slice(&x);
        batch.raw_obs.extend_from_slice(&obs);
        batch.values.extend_from_slice(&values);
        batch.valid.extend(masked.iter().map(|m| !m));

        let scaler = venv.scaler;
        let outcomes: Vec<_> = venv
            .envs
            .par_iter_mut()
            .zip(&actions)
            .map(|(ep, a)| ep.step(ControlInput::Wrench(scaler.scale(a))).map(|o| (o, ep.n_steps() - ep.step_index())))
            .collect::<Result<_>>()?;

        // bootstrap values of timed-out episodes, evaluated before reset
        let timeouts: Vec<usize> = (0..n).filter(|&i| outcomes[i].0.done && !outcomes[i].0.aborted).collect();
        let mut tail = vec![0.0; n];
        if !timeouts.is_empty() {
            let mut final_obs = Vec::with_capacity(timeouts.len() * d);
            for &i in &timeouts {
                final_obs.extend(venv.observation(i).iter().map(|x| *x as f32));
            }
            let v = critic_values(critic, &policy.obs_norm.apply(&final_obs), timeouts.len())?;
            for (k, &i) in timeouts.iter().enumerate() {
                tail[i] = if v[k].is_finite() { gamma * v[k] } else { 0.0 };
            }
        }
        for (i, (o, remaining)) in outcomes.iter().enumerate() {
            let r = o.record.reward;
            let mut shaped = r + tail[i];
            if o.aborted {
                // the evaluated episode keeps paying the capped reward until timeout
                shaped += r * discounted_sum(gamma, *remaining);
            }
            batch.rewards.push(r);
            batch.shaped_rewards.push(shaped);
            batch.dones.push(o.done || o.aborted);
            if o.done || o.aborted {
                venv.reset(i)?;
            }
        }
        masked.iter_mut().for_each(|m| *m = false);
        obs = gather_observations(venv, &mut masked)?;
    }
    batch.last_values = critic_values(critic, &policy.obs_norm.apply(&obs), n)?;
    if batch.rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::Diverged("non-finite reward in rollout".into()));
    }
    Ok(batch)
}

/// `sum_{k=1..=n} gamma^k`.
fn discounted_sum(gamma: f64, n: usize) -> f64 {
    if gamma == 1.0 {
        n as f64
    } else {
        gamma * (1.0 - gamma.powi(n as i32)) / (1.0 - gamma)
    }
}

fn gather_observations(venv: &mut VecEnv, masked: &mut [bool]) -> Result<Vec<f32>> {
    let d = venv.obs_dim();
    let mut out = Vec::with_capacity(venv.envs.len() * d);
    for i in 0..venv.envs.len() {
        let mut o = venv.observation(i);
        if o.iter().any(|x| !x.is_finite()) {
            venv.reset(i)?;
            masked[i] = true;
            o = venv.observation(i);
        }
        out.extend(o.iter().map(|x| *x as f32));
    }
    Ok(out)
}

/// Generalized advantage estimation for one trajectory segment.
///
/// `values` has one more entry than `rewards`: the bootstrap value after the
/// last step. Returns `(advantages, returns)`.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let t_len = rewards.len();
    if values.len() != t_len + 1 || dones.len() != t_len {
        return Err(Error::DimensionMismatch { expected: t_len + 1, got: values.len() });
    }
    let mut adv = vec![0.0; t_len];
    let mut next = 0.0;
    for t in (0..t_len).rev() {
        let cont = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * cont - values[t];
        next = delta + gamma * lambda * cont * next;
        adv[t] = next;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// GAE over a time-major batch, using the shaped rewards.
pub fn batch_advantages(batch: &RolloutBatch, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, t_len) = (batch.n_envs, batch.horizon);
    let mut adv = vec![0.0; n * t_len];
    let mut ret = vec![0.0; n * t_len];
    for i in 0..n {
        let r: Vec<f64> = (0..t_len).map(|t| batch.shaped_rewards[t * n + i]).collect();
        let d: Vec<bool> = (0..t_len).map(|t| batch.dones[t * n + i]).collect();
        let mut v: Vec<f64> = (0..t_len).map(|t| batch.values[t * n + i]).collect();
        v.push(batch.last_values[i]);
        let (a, g) = gae(&r, &v, &d, gamma, lambda)?;
        for t in 0..t_len {
            adv[t * n + i] = a[t];
            ret[t * n + i] = g[t];
        }
    }
    Ok((adv, ret))
}

/// Shift and scale the entries selected by `mask` to zero mean and unit
/// (population) standard deviation.
pub fn normalize_advantages(adv: &mut [f64], mask: &[bool]) {
    let sel: Vec<f64> = adv.iter().zip(mask).filter(|(_, m)| **m).map(|(a, _)| *a).collect();
    if sel.is_empty() {
        return;
    }
    let n = sel.len() as f64;
    let mean = sel.iter().sum::<f64>() / n;
    let var = sel.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for (a, m) in adv.iter_mut().zip(mask) {
        if *m {
            *a = (*a - mean) / std;
        }
    }
}

/// Clipped-surrogate loss (to minimize) and its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateGrad {
    pub loss: f64,
    /// `d loss / d mean`, row-major `n x action_dim`.
    pub d_mean: Vec<f64>,
    pub d_log_std: Vec<f64>,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub entropy: f64,
}

/// `-mean(min(rho A, clip(rho, 1-eps, 1+eps) A)) - ent_coef * H` for a
/// diagonal Gaussian with state-independent `log_std`.
pub fn surrogate(
    mean: &[f64],
    log_std: &[f64],
    actions: &[f64],
    old_log_probs: &[f64],
    advantages: &[f64],
    clip_eps: f64,
    ent_coef: f64,
) -> SurrogateGrad {
    let ad = log_std.len();
    let n = advantages.len();
    let inv_n = 1.0 / n as f64;
    let mut d_mean = vec![0.0; n * ad];
    let mut d_log_std = vec![0.0; ad];
    let (mut loss, mut clipped, mut kl) = (0.0, 0, 0.0);
    for i in 0..n {
        let m = &mean[i * ad..(i + 1) * ad];
        let a = &actions[i * ad..(i + 1) * ad];
        let logp = gaussian_log_prob(a, m, log_std);
        let log_ratio = logp - old_log_probs[i];
        let rho = log_ratio.exp();
        let adv = advantages[i];
        let unclipped = rho * adv;
        let clipped_obj = rho.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv;
        loss -= unclipped.min(clipped_obj) * inv_n;
        kl += ((rho - 1.0) - log_ratio) * inv_n;
        let active = !((adv >= 0.0 && rho > 1.0 + clip_eps) || (adv < 0.0 && rho < 1.0 - clip_eps));
        if !active {
            clipped += 1;
            continue;
        }
        // d(-rho A)/d logp = -rho A
        let g = -rho * adv * inv_n;
        for j in 0..ad {
            let var = (2.0 * log_std[j]).exp();
            let diff = a[j] - m[j];
            d_mean[i * ad + j] = g * diff / var;
            d_log_std[j] += g * (diff * diff / var - 1.0);
        }
    }
    let entropy: f64 = log_std.iter().map(|s| s + 0.5 * (2.0 * PI * std::f64::consts::E).ln()).sum();
    loss -= ent_coef * entropy;
    for g in &mut d_log_std {
        *g -= ent_coef;
    }
    SurrogateGrad { loss, d_mean, d_log_std, clip_fraction: clipped as f64 * inv_n, approx_kl: kl, entropy }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub entropy: f64,
}

/// Optimizer state of the actor, its log standard deviations and the critic.
pub struct Learner {
    pub policy: PolicyNet,
    pub critic: Mlp,
    actor_opt: Adam,
    log_std_opt: Adam,
    critic_opt: Adam,
}

impl Learner {
    pub fn new(policy: PolicyNet, critic: Mlp, lr: f64) -> Self {
        let lr = lr as f32;
        Self {
            actor_opt: Adam::new(policy.actor.param_count(), lr),
            log_std_opt: Adam::new(ACTION_DIM, lr),
            critic_opt: Adam::new(critic.param_count(), lr),
            policy,
            critic,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        let lr = lr as f32;
        self.actor_opt.lr = lr;
        self.log_std_opt.lr = lr;
        self.critic_opt.lr = lr;
    }
}

/// Several epochs of minibatch clipped-surrogate and value regression steps.
pub fn ppo_update<R: Rng + ?Sized>(learner: &mut Learner, batch: &RolloutBatch, cfg: &TrainConfig, update: usize, rng: &mut R) -> Result<UpdateStats> {
    let (mut adv, ret) = batch_advantages(batch, cfg.gamma, cfg.gae_lambda)?;
    normalize_advantages(&mut adv, &batch.valid);
    let mut idx: Vec<usize> = (0..batch.len()).filter(|&i| batch.valid[i]).collect();
    if idx.is_empty() {
        return Ok(UpdateStats::default());
    }
    let d = batch.obs_dim;
    let mb = idx.len().div_ceil(cfg.minibatches);
    let mut stats = UpdateStats::default();
    let mut n_steps = 0.0;
    let mut g_actor = vec![0.0f32; learner.policy.actor.param_count()];
    let mut g_critic = vec![0.0f32; learner.critic.param_count()];
    for _ in 0..cfg.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(mb) {
            let m = chunk.len();
            let mut obs = Vec::with_capacity(m * d);
            let mut actions = Vec::with_capacity(m * ACTION_DIM);
            let (mut old_lp, mut a_mb, mut r_mb) = (Vec::with_capacity(m), Vec::with_capacity(m), Vec::with_capacity(m));
            for &i in chunk {
                obs.extend_from_slice(&batch.obs[i * d..(i + 1) * d]);
                actions.extend(batch.actions[i * ACTION_DIM..(i + 1) * ACTION_DIM].iter().map(|x| *x as f64));
                old_lp.push(batch.log_probs[i]);
                a_mb.push(adv[i]);
                r_mb.push(ret[i]);
            }

            let cache = learner.policy.actor.forward(&obs, m)?;
            let mean: Vec<f64> = cache.output().iter().map(|x| *x as f64).collect();
            let log_std: Vec<f64> = learner.policy.log_std.iter().map(|s| *s as f64).collect();
            let s = surrogate(&mean, &log_std, &actions, &old_lp, &a_mb, cfg.clip_eps, cfg.ent_coef);

            let vcache = learner.critic.forward(&obs, m)?;
            let mut value_loss = 0.0;
            let mut d_v = vec![0.0f32; m];
            for k in 0..m {
                let e = vcache.output()[k] as f64 - r_mb[k];
                value_loss += e * e / m as f64;
                d_v[k] = (2.0 * cfg.vf_coef * e / m as f64) as f32;
            }
            if !s.loss.is_finite() || !value_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    update,
                    detail: format!("policy loss {}, value loss {value_loss}, log_std {:?}", s.loss, learner.policy.log_std),
                });
            }

            g_actor.iter_mut().for_each(|g| *g = 0.0);
            let d_mean: Vec<f32> = s.d_mean.iter().map(|x| *x as f32).collect();
            learner.policy.actor.backward(&cache, &d_mean, &mut g_actor);
            let mut g_std: Vec<f32> = s.d_log_std.iter().map(|x| *x as f32).collect();
            let norm = (g_actor.iter().chain(&g_std).map(|g| (*g as f64).powi(2)).sum::<f64>()).sqrt();
            if norm > cfg.max_grad_norm {
                let k = (cfg.max_grad_norm / norm) as f32;
                g_actor.iter_mut().chain(g_std.iter_mut()).for_each(|g| *g *= k);
            }
            learner.actor_opt.step(&mut learner.policy.actor.params, &g_actor);
            learner.log_std_opt.step(&mut learner.policy.log_std[..], &g_std);
            for v in &mut learner.policy.log_std {
                *v = v.clamp(-5.0, 1.0);
            }

            g_critic.iter_mut().for_each(|g| *g = 0.0);
            learner.critic.backward(&vcache, &d_v, &mut g_critic);
            clip_grad_norm(&mut g_critic, cfg.max_grad_norm as f32);
            learner.critic_opt.step(&mut learner.critic.params, &g_critic);

            stats.policy_loss += s.loss;
            stats.value_loss += value_loss;
            stats.clip_fraction += s.clip_fraction;
            stats.approx_kl += s.approx_kl;
            stats.entropy = s.entropy;
            n_steps += 1.0;
        }
    }
    stats.policy_loss /= n_steps;
    stats.value_loss /= n_steps;
    stats.clip_fraction /= n_steps;
    stats.approx_kl /= n_steps;
    Ok(stats)
}

/// One row of `learning_curve.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub update: usize,
    pub global_step: u64,
    /// Mean per-step reward of the batch, scaled to per second.
    pub mean_batch_reward: f64,
    /// Validation avg_reward of the deterministic policy, when evaluated.
    pub eval_avg_reward: Option<f64>,
}

pub struct TrainOutcome {
    /// Checkpoint with the best validation reward.
    pub best: PolicyNet,
    pub best_eval: f64,
    pub last: PolicyNet,
    pub curve: Vec<CurveRow>,
}

pub fn init_learner(input_dim: usize, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Learner {
    let policy = PolicyNet::new(input_dim, &HIDDEN, cfg.init_log_std as f32, rng);
    let critic = Mlp::init(&layer_sizes(input_dim, &HIDDEN, 1), 1.0, rng);
    Learner::new(policy, critic, cfg.lr)
}

/// Mean validation avg_reward of the deterministic policy.
pub fn validate_policy(task: &TaskConfig, tc: &TrainConfig, policy: &PolicyNet) -> Result<f64> {
    let mut agent = PolicyAgent::new(policy.clone(), task, tc.use_horizon);
    agent.frame = tc.frame;
    let seeds = harness::seeds(task, SeedStream::Validation, tc.eval_episodes);
    let res = harness::run_many(task, &agent, &seeds)?;
    Ok(res.iter().map(|r| r.summary.avg_reward).sum::<f64>() / res.len() as f64)
}

/// Train a policy on `task`. With `out_dir`, writes `learning_curve.csv`,
/// `policy.json` (best validation checkpoint) and `policy_last.json`.
pub fn train(task: &TaskConfig, tc: &TrainConfig, out_dir: Option<&Path>, progress: &mut dyn FnMut(&CurveRow, &UpdateStats)) -> Result<TrainOutcome> {
    tc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut venv = VecEnv::new(task, tc.n_envs, tc.use_horizon, tc.frame)?;
    let mut learner = init_learner(venv.obs_dim(), tc, &mut rng);
    let mut moments = RunningMoments::new(venv.obs_dim());
    if tc.obs_norm {
        // seed the statistics with the initial states so the first rollout is already normalized
        let first: Vec<f32> = (0..tc.n_envs).flat_map(|i| venv.observation(i)).map(|x| x as f32).collect();
        let finite: Vec<bool> = first.chunks(venv.obs_dim()).map(|r| r.iter().all(|x| x.is_finite())).collect();
        moments.update(&first, &finite);
        learner.policy.obs_norm = moments.to_norm();
    }
    let total = tc.total_steps();
    let mut global_step = 0u64;
    let mut curve = Vec::with_capacity(tc.n_updates);
    let mut best = learner.policy.clone();
    let mut best_eval = f64::NEG_INFINITY;
    for update in 0..tc.n_updates {
        venv.set_delta(anneal_delta(global_step, total));
        if tc.lr_anneal {
            learner.set_lr(tc.lr * (1.0 - update as f64 / tc.n_updates as f64));
        }
        let batch = collect(&learner.policy, &learner.critic, &mut venv, tc, &mut rng)?;
        global_step += batch.len() as u64;
        let stats = ppo_update(&mut learner, &batch, tc, update, &mut rng)?;
        if tc.obs_norm {
            // the batch was normalized with the old statistics; new ones apply from the next rollout
            moments.update(&batch.raw_obs, &batch.valid);
            learner.policy.obs_norm = moments.to_norm();
        }
        let evaluate = (update + 1) % tc.eval_every == 0 || update + 1 == tc.n_updates;
        let eval_avg_reward = if evaluate { Some(validate_policy(task, tc, &learner.policy)?) } else { None };
        if let Some(v) = eval_avg_reward {
            if v > best_eval {
                best_eval = v;
                best = learner.policy.clone();
            }
        }
        let row = CurveRow { update, global_step, mean_batch_reward: batch.mean_reward() / task.control_dt, eval_avg_reward };
        progress(&row, &stats);
        curve.push(row);
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        crate::io::write_learning_curve(&dir.join("learning_curve.csv"), &curve)?;
        best.save(&dir.join("policy.json"))?;
        learner.policy.save(&dir.join("policy_last.json"))?;
    }
    Ok(TrainOutcome { best, best_eval, last: learner.policy, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Morphology, TaskKind};
    use proptest::prelude::{prop, prop_assert, proptest};

    /// Advantage straight from its definition as a discounted sum of TD errors.
    fn brute_force_gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
        let t_len = rewards.len();
        (0..t_len)
            .map(|t| {
                let mut total = 0.0;
                for l in 0..t_len - t {
                    let k = t + l;
                    if (t..k).any(|j| dones[j]) {
                        break;
                    }
                    let cont = if dones[k] { 0.0 } else { 1.0 };
                    let delta = rewards[k] + gamma * values[k + 1] * cont - values[k];
                    total += (gamma * lambda).powi(l as i32) * delta;
                }
                total
            })
            .collect()
    }

    proptest! {
        #[test]
        fn gae_matches_brute_force(
            data in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, prop::bool::weighted(0.15)), 1..80),
            last in -5.0f64..5.0,
            gamma in 0.5f64..=1.0,
            lambda in 0.0f64..=1.0,
        ) {
            let r: Vec<f64> = data.iter().map(|x| x.0).collect();
            let mut v: Vec<f64> = data.iter().map(|x| x.1).collect();
            v.push(last);
            let d: Vec<bool> = data.iter().map(|x| x.2).collect();
            let (adv, ret) = gae(&r, &v, &d, gamma, lambda).unwrap();
            let oracle = brute_force_gae(&r, &v, &d, gamma, lambda);
            for t in 0..r.len() {
                prop_assert!((adv[t] - oracle[t]).abs() < 1e-10);
                prop_assert!((ret[t] - adv[t] - v[t]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gae_telescopes_without_discounting() {
        let r = [1.0, -2.0, 0.5, 3.0];
        let v = [0.3, 0.1, -0.4, 0.9, 2.0];
        let (adv, _) = gae(&r, &v, &[false; 4], 1.0, 1.0).unwrap();
        for t in 0..4 {
            let expect = r[t..].iter().sum::<f64>() + v[4] - v[t];
            assert!((adv[t] - expect).abs() < 1e-12);
        }
        let (one, _) = gae(&[2.0], &[0.5, 1.5], &[false], 0.9, 0.7).unwrap();
        assert!((one[0] - (2.0 + 0.9 * 1.5 - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn gae_rejects_misaligned_values() {
        assert!(gae(&[1.0, 2.0], &[0.0, 0.0], &[false, false], 0.9, 0.9).is_err());
    }

    /// Toy policy: scalar action, mean `theta0 * x`, log std `theta1`.
    fn toy(theta: [f64; 2], x: &[f64], a: &[f64], old: &[f64], adv: &[f64], eps: f64, ent: f64) -> (f64, [f64; 2]) {
        let mean: Vec<f64> = x.iter().map(|xi| theta[0] * xi).collect();
        let s = surrogate(&mean, &[theta[1]], a, old, adv, eps, ent);
        let g0 = s.d_mean.iter().zip(x).map(|(g, xi)| g * xi).sum();
        (s.loss, [g0, s.d_log_std[0]])
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 64;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        let adv: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        // behaviour policy slightly away from the evaluation point so some samples clip
        let old: Vec<f64> = x.iter().zip(&a).map(|(xi, ai)| gaussian_log_prob(&[*ai], &[0.5 * xi], &[-0.2])).collect();
        let theta = [0.8, -0.35];
        let (_, g) = toy(theta, &x, &a, &old, &adv, 0.2, 0.01);
        let clipped = surrogate(&x.iter().map(|xi| theta[0] * xi).collect::<Vec<_>>(), &[theta[1]], &a, &old, &adv, 0.2, 0.0).clip_fraction;
        assert!(clipped > 0.0 && clipped < 1.0, "clip fraction {clipped}");
        let h = 1e-6;
        for k in 0..2 {
            let mut p = theta;
            let mut m = theta;
            p[k] += h;
            m[k] -= h;
            let fd = (toy(p, &x, &a, &old, &adv, 0.2, 0.01).0 - toy(m, &x, &a, &old, &adv, 0.2, 0.01).0) / (2.0 * h);
            assert!((g[k] - fd).abs() <= 1e-5 * fd.abs().max(1e-3), "param {k}: analytic {} fd {fd}", g[k]);
        }
    }

    #[test]
    fn unclipped_surrogate_is_vanilla_policy_gradient() {
        let mean = [0.1, -0.3, 0.7];
        let log_std = [-0.5];
        let a = [0.4, -0.1, 0.2];
        let adv = [1.0, -0.5, 2.0];
        let old: Vec<f64> = (0..3).map(|i| gaussian_log_prob(&[a[i]], &[mean[i]], &log_std)).collect();
        let s = surrogate(&mean, &log_std, &a, &old, &adv, 0.2, 0.0);
        let var = (2.0 * log_std[0]).exp();
        for i in 0..3 {
            let pg = -adv[i] * (a[i] - mean[i]) / var / 3.0;
            assert!((s.d_mean[i] - pg).abs() < 1e-14);
        }
        assert_eq!(s.clip_fraction, 0.0);
    }

    #[test]
    fn clipped_positive_advantage_contributes_nothing() {
        let log_std = [0.0];
        let a = [1.0];
        // old policy made `a` much less likely than the current one
        let old = [gaussian_log_prob(&a, &[-1.0], &log_std)];
        let s = surrogate(&[0.9], &log_std, &a, &old, &[1.0], 0.2, 0.0);
        assert_eq!(s.d_mean, vec![0.0]);
        assert_eq!(s.d_log_std, vec![0.0]);
        assert_eq!(s.clip_fraction, 1.0);
    }

    #[test]
    fn normalized_advantages_have_zero_mean_unit_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut adv: Vec<f64> = (0..1000).map(|_| rng.random_range(-3.0..7.0)).collect();
        let mask: Vec<bool> = (0..1000).map(|i| i % 7 != 0).collect();
        normalize_advantages(&mut adv, &mask);
        let sel: Vec<f64> = adv.iter().zip(&mask).filter(|(_, m)| **m).map(|(a, _)| *a).collect();
        let n = sel.len() as f64;
        let mean = sel.iter().sum::<f64>() / n;
        let std = (sel.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-6);
        assert!((std - 1.0).abs() < 1e-6);
    }

    #[test]
    fn actor_and_critic_parameter_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = init_learner(21, &TrainConfig::default(), &mut rng);
        // the two MLPs account for the total; the 4 log std scalars come on top
        assert_eq!(l.policy.actor.param_count(), 138_244);
        assert_eq!(l.critic.param_count(), 137_473);
        assert_eq!(l.policy.actor.param_count() + l.critic.param_count(), 275_717);
        assert_eq!(l.policy.param_count(), 138_248);
    }

    fn small() -> (TaskConfig, TrainConfig) {
        let task = TaskConfig::new(TaskKind::Hover, Morphology::Quadrotor);
        let tc = TrainConfig { n_envs: 4, horizon_steps: 16, ..Default::default() };
        (task, tc)
    }

    #[test]
    fn zero_policy_fills_a_full_batch_and_is_reproducible() {
        let (task, tc) = small();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut venv = VecEnv::new(&task, tc.n_envs, false, ObservedFrame::Tracked).unwrap();
            let policy = PolicyNet::zeros(21, &HIDDEN);
            let critic = Mlp::zeros(&layer_sizes(21, &HIDDEN, 1));
            collect(&policy, &critic, &mut venv, &tc, &mut rng).unwrap()
        };
        let b = run();
        assert_eq!(b.len(), 64);
        assert_eq!(b.obs.len(), 64 * 21);
        assert_eq!(b.actions.len(), 64 * ACTION_DIM);
        assert!(b.rewards.iter().all(|r| r.is_finite()));
        assert_eq!(b, run());
    }

    #[test]
    fn timeouts_bootstrap_and_reset() {
        let (mut task, tc) = small();
        task.episode_seconds = 0.1; // 5 control steps
        let tc = TrainConfig { horizon_steps: 12, ..tc };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut venv = VecEnv::new(&task, tc.n_envs, false, ObservedFrame::Tracked).unwrap();
        let policy = PolicyNet::zeros(21, &HIDDEN);
        let mut critic = Mlp::zeros(&layer_sizes(21, &HIDDEN, 1));
        // constant critic output of 2
        let last = critic.params.len() - 1;
        critic.params[last] = 2.0;
        let b = collect(&policy, &critic, &mut venv, &tc, &mut rng).unwrap();
        for t in 0..12 {
            for i in 0..4 {
                let k = t * 4 + i;
                assert_eq!(b.dones[k], (t + 1) % 5 == 0);
                if b.dones[k] {
                    assert!((b.shaped_rewards[k] - b.rewards[k] - 0.99 * 2.0).abs() < 1e-6);
                } else {
                    assert_eq!(b.shaped_rewards[k], b.rewards[k]);
                }
            }
        }
        assert_eq!(venv.episodes_started(), 4 * 3);
    }

    #[test]
    fn random_policy_collects_less_reward_than_tuned_controller() {
        use crate::gc::{FeedforwardMode, GcGains};
        use crate::harness::{Controller, GcAgent, ReferenceSource};
        let (task, tc) = small();
        let tc = TrainConfig { n_envs: 8, horizon_steps: 100, init_log_std: 0.0, ..tc };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut venv = VecEnv::new(&task, tc.n_envs, false, ObservedFrame::Tracked).unwrap();
        let random = collect(&PolicyNet::zeros(21, &HIDDEN), &Mlp::zeros(&layer_sizes(21, &HIDDEN, 1)), &mut venv, &tc, &mut rng).unwrap();

        let mut venv = VecEnv::new(&task, tc.n_envs, false, ObservedFrame::Tracked).unwrap();
        let mut gc = GcAgent::new(GcGains::manual(), FeedforwardMode::Ff, ReferenceSource::Horizon, &task);
        let mut total = 0.0;
        for ep in &mut venv.envs {
            gc.reset(ep);
            for _ in 0..tc.horizon_steps {
                let u = gc.control(ep).unwrap();
                total += ep.step(u).unwrap().record.reward;
            }
        }
        let gc_mean = total / random.len() as f64;
        assert!(random.mean_reward() < gc_mean, "random {} gc {gc_mean}", random.mean_reward());
    }

    #[test]
    fn training_is_seed_deterministic() {
        let (task, _) = small();
        let tc = TrainConfig { n_envs: 4, horizon_steps: 8, n_updates: 2, minibatches: 2, epochs: 2, eval_every: 1, eval_episodes: 2, ..Default::default() };
        let a = train(&task, &tc, None, &mut |_, _| {}).unwrap();
        let b = train(&task, &tc, None, &mut |_, _| {}).unwrap();
        assert_eq!(a.last, b.last);
        assert_eq!(a.curve, b.curve);
        let best: Vec<f64> = a.curve.iter().filter_map(|r| r.eval_avg_reward).scan(f64::NEG_INFINITY, |m, v| {
            *m = f64::max(*m, v);
            Some(*m)
        }).collect();
        assert!(best.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { gamma: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { clip_eps: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { minibatches: 0, ..Default::default() }.validate().is_err());
    }
}
