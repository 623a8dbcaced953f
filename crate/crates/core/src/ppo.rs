//! Proximal Policy Optimization with generalized advantage estimation.
//!
//! The trainer is agnostic to what the policy observes and emits: sub-policies
//! and the domain-randomized baseline act on the arm observation directly,
//! while the blending gate acts in weight space on a parameter estimate. Both
//! plug in through [`RolloutEnv`].

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::env::{sample_impairments, EnvConfig, ImpairedArmEnv, Scenario, ACT_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{
    gaussian_entropy, gaussian_log_prob, gaussian_log_prob_grads, Adam, GaussianPolicy, Mlp, MlpGrads,
    HIDDEN,
};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub learning_rate: f64,
    pub rollout_len: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub total_steps: usize,
    /// Window of the moving-average episode reward reported in training curves.
    pub curve_window: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            learning_rate: 3e-4,
            rollout_len: 4000,
            epochs: 10,
            minibatch: 500,
            value_coef: 0.5,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            total_steps: 300_000,
            curve_window: 50,
        }
    }
}

impl PpoConfig {
    pub fn blending() -> Self {
        Self {
            total_steps: 100_000,
            ..Self::default()
        }
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return bad(format!("gamma and lambda must lie in (0, 1], got {} / {}", self.gamma, self.gae_lambda));
        }
        if !(self.clip > 0.0) {
            return bad(format!("clip must be positive, got {}", self.clip));
        }
        if self.rollout_len == 0 || self.rollout_len % horizon != 0 {
            return bad(format!(
                "rollout length {} must be a positive multiple of the horizon {horizon}",
                self.rollout_len
            ));
        }
        if self.minibatch == 0 || self.epochs == 0 {
            return bad("epochs and minibatch must be nonzero".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub force: f64,
    pub done: bool,
}

/// Episodic environment as seen by the trainer.
pub trait RolloutEnv {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    /// Begins a new episode and returns its first observation.
    fn reset(&mut self) -> Result<Vec<f64>>;
    fn step(&mut self, action: &[f64]) -> Result<Transition>;
}

/// The arm task under one impairment scenario, with fresh impairments every episode.
#[derive(Debug, Clone)]
pub struct ScenarioEnv {
    env: ImpairedArmEnv,
    scenario: Scenario,
    sampler: Rng,
}

impl ScenarioEnv {
    pub fn new(config: EnvConfig, scenario: Scenario, seed: u64) -> Self {
        let env = ImpairedArmEnv::new(config, Default::default(), rng::stream(seed, 1));
        Self {
            env,
            scenario,
            sampler: rng::stream(seed, 2),
        }
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn inner(&self) -> &ImpairedArmEnv {
        &self.env
    }

    pub fn inner_mut(&mut self) -> &mut ImpairedArmEnv {
        &mut self.env
    }

    /// Samples the next episode's impairments without resetting.
    pub fn draw_params(&mut self) -> crate::env::ParamVector {
        sample_impairments(self.scenario, self.env.config(), &mut self.sampler)
    }
}

impl RolloutEnv for ScenarioEnv {
    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn act_dim(&self) -> usize {
        ACT_DIM
    }

    fn horizon(&self) -> usize {
        self.env.config().horizon
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        let p = self.draw_params();
        Ok(self.env.reset(p).to_vec())
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        let r = self.env.step(action)?;
        Ok(Transition {
            observation: r.observation.to_vec(),
            reward: r.reward,
            force: r.force,
            done: r.done,
        })
    }
}

/// Policy, value network and their optimizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub policy: GaussianPolicy,
    pub value: Mlp,
    pub policy_opt: Adam,
    pub value_opt: Adam,
}

impl Agent {
    pub fn new(obs_dim: usize, act_dim: usize, rng: &mut Rng) -> Self {
        let policy = GaussianPolicy::new(obs_dim, act_dim, rng);
        let value = Mlp::new(&[obs_dim, HIDDEN[0], HIDDEN[1], 1], 1.0, 1.0, rng);
        Self {
            policy_opt: Adam::new(policy.num_params()),
            value_opt: Adam::new(value.num_params()),
            policy,
            value,
        }
    }

    pub fn value_of(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.value.predict(obs)?[0])
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Undiscounted reward sum of each episode completed in this rollout.
    pub episode_rewards: Vec<f64>,
    /// Cumulative contact force of each completed episode.
    pub episode_forces: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.observations.iter().chain(&self.actions).flatten().all(|v| v.is_finite())
            && self
                .log_probs
                .iter()
                .chain(&self.rewards)
                .chain(&self.values)
                .all(|v| v.is_finite())
    }
}

/// Rolls `n_steps` (whole episodes) with the stochastic policy.
pub fn collect_rollout(
    env: &mut dyn RolloutEnv,
    agent: &Agent,
    n_steps: usize,
    rng: &mut Rng,
) -> Result<RolloutBuffer> {
    let horizon = env.horizon();
    if n_steps == 0 || n_steps % horizon != 0 {
        return Err(Error::InvalidConfig(format!(
            "rollout of {n_steps} steps is not a multiple of the horizon {horizon}"
        )));
    }
    let mut buf = RolloutBuffer::default();
    let (mut ep_reward, mut ep_force) = (0.0, 0.0);
    let mut obs = env.reset()?;
    for _ in 0..n_steps {
        let (action, logp) = agent.policy.sample(&obs, rng)?;
        let value = agent.value_of(&obs)?;
        let tr = env.step(&action)?;
        ep_reward += tr.reward;
        ep_force += tr.force;
        buf.observations.push(std::mem::replace(&mut obs, tr.observation));
        buf.actions.push(action);
        buf.log_probs.push(logp);
        buf.rewards.push(tr.reward);
        buf.values.push(value);
        buf.dones.push(tr.done);
        if tr.done {
            buf.episode_rewards.push(ep_reward);
            buf.episode_forces.push(ep_force);
            ep_reward = 0.0;
            ep_force = 0.0;
            if buf.len() < n_steps {
                obs = env.reset()?;
            }
        }
    }
    if !buf.is_finite() {
        return Err(Error::NonFinite("rollout buffer".into()));
    }
    Ok(buf)
}

/// Generalized advantage estimation. A step flagged `done` is terminal and
/// bootstraps from zero; otherwise the next value (or `last_value` after the
/// final step) is used.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    for len in [values.len(), dones.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, actual: len });
        }
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let delta = rewards[t] + gamma * next_value * not_done - values[t];
        next_adv = delta + gamma * lambda * not_done * next_adv;
        adv[t] = next_adv;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.len() < 2 {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-12);
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

impl RolloutBuffer {
    pub fn finish(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        let last_value = 0.0;
        let (mut adv, ret) = compute_gae(&self.rewards, &self.values, &self.dones, last_value, gamma, lambda)?;
        normalize_advantages(&mut adv);
        self.advantages = adv;
        self.returns = ret;
        Ok(())
    }
}

/// Per-sample clipped surrogate objective `min(rho A, clip(rho, 1-eps, 1+eps) A)`.
pub fn clipped_objective(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Gradients of the policy loss over one minibatch.
#[derive(Debug, Clone)]
pub struct PolicyGradient {
    pub net: MlpGrads,
    pub log_std: Vec<f64>,
    pub loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

impl PolicyGradient {
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.net.flat();
        v.extend_from_slice(&self.log_std);
        v
    }
}

/// Loss and gradient of `-mean(clipped objective) - entropy_coef * entropy`.
pub fn policy_loss_gradient(
    policy: &GaussianPolicy,
    buf: &RolloutBuffer,
    idx: &[usize],
    clip: f64,
    entropy_coef: f64,
) -> Result<PolicyGradient> {
    let b = idx.len() as f64;
    let mut grads = MlpGrads::zeros_like(&policy.net);
    let mut g_log_std = vec![0.0; policy.log_std.len()];
    let (mut loss, mut clipped, mut kl) = (0.0, 0usize, 0.0);
    let mut dmean_out = vec![0.0; policy.action_dim()];
    for &i in idx {
        let (mean, cache) = policy.net.forward(&buf.observations[i])?;
        let action = &buf.actions[i];
        let logp = gaussian_log_prob(&mean, &policy.log_std, action);
        let old = buf.log_probs[i];
        let ratio = (logp - old).exp();
        let a = buf.advantages[i];
        loss -= clipped_objective(ratio, a, clip);
        kl += old - logp;
        let outside = (ratio - 1.0).abs() > clip;
        if outside {
            clipped += 1;
        }
        // The unclipped branch is active unless the ratio left the trust
        // region in the direction the advantage rewards.
        let active = !((a > 0.0 && ratio > 1.0 + clip) || (a < 0.0 && ratio < 1.0 - clip));
        if active {
            let coef = -ratio * a / b;
            let (dm, dl) = gaussian_log_prob_grads(&mean, &policy.log_std, action);
            for (o, d) in dmean_out.iter_mut().zip(&dm) {
                *o = coef * d;
            }
            policy.net.backward_into(&cache, &dmean_out, &mut grads)?;
            for (g, d) in g_log_std.iter_mut().zip(&dl) {
                *g += coef * d;
            }
        }
    }
    loss /= b;
    if entropy_coef != 0.0 {
        loss -= entropy_coef * gaussian_entropy(&policy.log_std);
        g_log_std.iter_mut().for_each(|g| *g -= entropy_coef);
    }
    Ok(PolicyGradient {
        net: grads,
        log_std: g_log_std,
        loss,
        clip_fraction: clipped as f64 / b,
        approx_kl: kl / b,
    })
}

/// Loss `mean((V - R)^2)` and its gradient.
pub fn value_loss_gradient(value: &Mlp, buf: &RolloutBuffer, idx: &[usize]) -> Result<(f64, MlpGrads)> {
    let b = idx.len() as f64;
    let mut grads = MlpGrads::zeros_like(value);
    let mut loss = 0.0;
    for &i in idx {
        let (v, cache) = value.forward(&buf.observations[i])?;
        let err = v[0] - buf.returns[i];
        loss += err * err;
        value.backward_into(&cache, &[2.0 * err / b], &mut grads)?;
    }
    Ok((loss / b, grads))
}

fn clip_by_norm(net: &mut MlpGrads, extra: &mut [f64], max_norm: f64) {
    let norm = (net.sq_norm() + extra.iter().map(|v| v * v).sum::<f64>()).sqrt();
    if norm > max_norm {
        let c = max_norm / norm;
        net.scale(c);
        extra.iter_mut().for_each(|v| *v *= c);
    }
}

/// Combined objective `policy loss + value_coef * value loss` on the given samples.
pub fn combined_loss(agent: &Agent, buf: &RolloutBuffer, idx: &[usize], config: &PpoConfig) -> Result<f64> {
    let mut policy_loss = 0.0;
    let mut value_loss = 0.0;
    for &i in idx {
        let logp = agent.policy.log_prob(&buf.observations[i], &buf.actions[i])?;
        let ratio = (logp - buf.log_probs[i]).exp();
        policy_loss -= clipped_objective(ratio, buf.advantages[i], config.clip);
        let v = agent.value_of(&buf.observations[i])?;
        value_loss += (v - buf.returns[i]).powi(2);
    }
    let b = idx.len() as f64;
    Ok(policy_loss / b - config.entropy_coef * gaussian_entropy(&agent.policy.log_std)
        + config.value_coef * value_loss / b)
}

/// Runs `epochs` passes of shuffled minibatch updates over a finished buffer.
pub fn ppo_update(agent: &mut Agent, buf: &RolloutBuffer, config: &PpoConfig, rng: &mut Rng) -> Result<UpdateStats> {
    if buf.advantages.len() != buf.len() || buf.returns.len() != buf.len() {
        return Err(Error::InvalidConfig("advantages have not been computed".into()));
    }
    let mut order: Vec<usize> = (0..buf.len()).collect();
    let mut stats = UpdateStats::default();
    let mut batches = 0usize;
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for idx in order.chunks(config.minibatch.min(buf.len())) {
            let mut pg = policy_loss_gradient(&agent.policy, buf, idx, config.clip, config.entropy_coef)?;
            let (vloss, mut vg) = value_loss_gradient(&agent.value, buf, idx)?;
            if !(pg.loss.is_finite() && vloss.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "PPO loss (policy {}, value {}, kl {})",
                    pg.loss, vloss, pg.approx_kl
                )));
            }
            vg.scale(config.value_coef);
            clip_by_norm(&mut pg.net, &mut pg.log_std, config.max_grad_norm);
            clip_by_norm(&mut vg, &mut [], config.max_grad_norm);

            let lr = config.learning_rate;
            let policy = &mut agent.policy;
            agent
                .policy_opt
                .step_mlp(&mut policy.net, &pg.net, Some((&mut policy.log_std, &pg.log_std)), lr);
            policy.clamp_log_std();
            agent.value_opt.step_mlp(&mut agent.value, &vg, None, lr);

            stats.policy_loss += pg.loss;
            stats.value_loss += vloss;
            stats.clip_fraction += pg.clip_fraction;
            stats.approx_kl += pg.approx_kl;
            batches += 1;
        }
    }
    let n = batches.max(1) as f64;
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.clip_fraction /= n;
    stats.approx_kl /= n;
    stats.entropy = gaussian_entropy(&agent.policy.log_std);
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub seed: u64,
    pub timestep: usize,
    pub avg_reward: f64,
}

/// Moving-average episode reward against environment steps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainCurve {
    pub points: Vec<CurvePoint>,
}

impl TrainCurve {
    pub fn last(&self) -> Option<f64> {
        self.points.last().map(|p| p.avg_reward)
    }

    pub fn best(&self) -> Option<f64> {
        self.points.iter().map(|p| p.avg_reward).reduce(f64::max)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for p in &self.points {
            wr.serialize(p)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let points = rd.deserialize().collect::<std::result::Result<Vec<CurvePoint>, _>>()?;
        Ok(Self { points })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Agent at the end of training.
    pub agent: Agent,
    /// Policy snapshot with the highest moving-average reward.
    pub best_policy: GaussianPolicy,
    pub best_avg_reward: f64,
    pub curve: TrainCurve,
    pub last_stats: UpdateStats,
}

/// Alternates rollout collection and PPO updates until the step budget is spent.
pub fn train(env: &mut dyn RolloutEnv, config: &PpoConfig, seed: u64) -> Result<TrainOutcome> {
    train_with_hook(env, config, seed, |_, _| {})
}

/// [`train`] with a callback invoked after every update with the step count
/// and the latest statistics.
pub fn train_with_hook(
    env: &mut dyn RolloutEnv,
    config: &PpoConfig,
    seed: u64,
    mut hook: impl FnMut(usize, &UpdateStats),
) -> Result<TrainOutcome> {
    config.validate(env.horizon())?;
    let mut init_rng = rng::stream(seed, 10);
    let mut agent = Agent::new(env.obs_dim(), env.act_dim(), &mut init_rng);
    let mut act_rng = rng::stream(seed, 11);
    let mut update_rng = rng::stream(seed, 12);
    let mut window: VecDeque<f64> = VecDeque::with_capacity(config.curve_window);
    let mut curve = TrainCurve::default();
    let mut best_policy = agent.policy.clone();
    let mut best_avg = f64::NEG_INFINITY;
    let mut last_stats = UpdateStats::default();
    let mut steps = 0;
    while steps < config.total_steps {
        let mut buf = collect_rollout(env, &agent, config.rollout_len, &mut act_rng)?;
        steps += buf.len();
        for r in &buf.episode_rewards {
            if window.len() == config.curve_window {
                window.pop_front();
            }
            window.push_back(*r);
        }
        let avg = window.iter().sum::<f64>() / window.len().max(1) as f64;
        curve.points.push(CurvePoint {
            seed,
            timestep: steps,
            avg_reward: avg,
        });
        // Snapshot the policy that generated the best window so far.
        if avg > best_avg {
            best_avg = avg;
            best_policy = agent.policy.clone();
        }
        buf.finish(config.gamma, config.gae_lambda)?;
        last_stats = ppo_update(&mut agent, &buf, config, &mut update_rng)?;
        hook(steps, &last_stats);
    }
    Ok(TrainOutcome {
        agent,
        best_policy,
        best_avg_reward: best_avg,
        curve,
        last_stats,
    })
}
