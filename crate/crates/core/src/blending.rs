//! Blending gate over frozen sub-policies.
//!
//! The gate sees nothing but the (normalized) parameter estimate and emits one
//! real weight per sub-policy. The environment action is
//! `(1/N) * sum_i w_i * pi_i(s)` where `pi_i(s)` is sub-policy `i`'s mean
//! action on the full observation.

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, ParamBounds, ParamVector, Scenario, ACT_DIM, N_PARAMS, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{gaussian_sample, GaussianPolicy};
use crate::ppo::{self, PpoConfig, RolloutEnv, ScenarioEnv, TrainCurve, Transition};
use crate::rng::{self, Rng};
use crate::sysid::{estimate_records, EstimateRecord, Estimator, EstimatorKind, SysidConfig};

/// Ordered, frozen sub-policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubPolicySet {
    names: Vec<String>,
    policies: Vec<GaussianPolicy>,
}

impl SubPolicySet {
    pub fn new(entries: Vec<(String, GaussianPolicy)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidConfig("blending needs at least one sub-policy".into()));
        }
        for (name, p) in &entries {
            if p.input_dim() != OBS_DIM || p.action_dim() != ACT_DIM {
                return Err(Error::InvalidConfig(format!(
                    "sub-policy `{name}` maps {} -> {}, expected {OBS_DIM} -> {ACT_DIM}",
                    p.input_dim(),
                    p.action_dim()
                )));
            }
        }
        let (names, policies) = entries.into_iter().unzip();
        Ok(Self { names, policies })
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn policies(&self) -> &[GaussianPolicy] {
        &self.policies
    }

    /// Deterministic mean action of every sub-policy, in set order.
    pub fn actions(&self, obs: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.policies.iter().map(|p| p.mean(obs)).collect()
    }
}

/// `(1/N) * sum_i w_i a_i` without the action clamp.
pub fn blend_action_unclamped(weights: &[f64], sub_actions: &[Vec<f64>]) -> Result<Vec<f64>> {
    if weights.len() != sub_actions.len() || sub_actions.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: sub_actions.len(),
            actual: weights.len(),
        });
    }
    let dim = sub_actions[0].len();
    let n = sub_actions.len() as f64;
    let mut out = vec![0.0; dim];
    for (w, a) in weights.iter().zip(sub_actions) {
        if a.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: a.len(),
            });
        }
        for (o, ai) in out.iter_mut().zip(a) {
            *o += w * ai;
        }
    }
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

/// Weighted mean action clamped to the robot's `[-1, 1]` command range.
pub fn blend_action(weights: &[f64], sub_actions: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut a = blend_action_unclamped(weights, sub_actions)?;
    a.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    Ok(a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlendStep {
    pub action: Vec<f64>,
    pub weights: Vec<f64>,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendPolicy {
    /// Maps the normalized estimate to a Gaussian over blend weights.
    pub gate: GaussianPolicy,
    pub subs: SubPolicySet,
    pub bounds: ParamBounds,
}

impl BlendPolicy {
    pub fn new(subs: SubPolicySet, bounds: ParamBounds, rng: &mut Rng) -> Self {
        Self {
            gate: GaussianPolicy::new(N_PARAMS, subs.len(), rng),
            subs,
            bounds,
        }
    }

    pub fn gate_input(&self, estimate: &ParamVector) -> [f64; N_PARAMS] {
        self.bounds.normalize(&estimate.to_array())
    }

    pub fn mean_weights(&self, estimate: &ParamVector) -> Result<Vec<f64>> {
        self.gate.mean(&self.gate_input(estimate))
    }

    /// Samples weights from the gate and blends the sub-policies' mean actions.
    pub fn blend_step(&self, obs: &[f64], estimate: &ParamVector, rng: &mut Rng) -> Result<BlendStep> {
        let mean = self.mean_weights(estimate)?;
        let (weights, log_prob) = gaussian_sample(&mean, &self.gate.log_std, rng);
        let action = blend_action(&weights, &self.subs.actions(obs)?)?;
        Ok(BlendStep {
            action,
            weights,
            log_prob,
        })
    }

    /// Action under the gate's mean weights.
    pub fn act(&self, obs: &[f64], estimate: &ParamVector) -> Result<Vec<f64>> {
        blend_action(&self.mean_weights(estimate)?, &self.subs.actions(obs)?)
    }
}

/// The arm task seen from the gate: observations are the normalized
/// parameter estimate, actions are blend weights.
pub struct BlendEnv<'a> {
    env: ScenarioEnv,
    subs: &'a SubPolicySet,
    pub estimator: Estimator,
    sysid: SysidConfig,
    bounds: ParamBounds,
    estimate: ParamVector,
    arm_obs: Vec<f64>,
    id_rng: Rng,
    episode: usize,
    pub trace: Vec<EstimateRecord>,
}

impl<'a> BlendEnv<'a> {
    pub fn new(
        env_config: EnvConfig,
        scenario: Scenario,
        subs: &'a SubPolicySet,
        estimator: Estimator,
        sysid: SysidConfig,
        seed: u64,
    ) -> Self {
        let bounds = env_config.bounds;
        Self {
            env: ScenarioEnv::new(env_config, scenario, seed),
            subs,
            estimator,
            sysid,
            bounds,
            estimate: bounds.midpoint(),
            arm_obs: vec![0.0; OBS_DIM],
            id_rng: rng::stream(seed, 3),
            episode: 0,
            trace: Vec::new(),
        }
    }

    pub fn estimate(&self) -> &ParamVector {
        &self.estimate
    }

    pub fn arm_observation(&self) -> &[f64] {
        &self.arm_obs
    }

    pub fn true_params(&self) -> &ParamVector {
        self.env.inner().params()
    }

    fn gate_obs(&self) -> Vec<f64> {
        self.bounds.normalize(&self.estimate.to_array()).to_vec()
    }
}

impl RolloutEnv for BlendEnv<'_> {
    fn obs_dim(&self) -> usize {
        N_PARAMS
    }

    fn act_dim(&self) -> usize {
        self.subs.len()
    }

    fn horizon(&self) -> usize {
        self.env.horizon()
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        let truth = self.env.draw_params();
        let cfg = self.env.inner().config().clone();
        self.estimate = self.estimator.identify(&truth, &cfg, &self.sysid, true, &mut self.id_rng)?;
        self.trace.extend(estimate_records(self.episode, &self.estimate, &truth));
        self.episode += 1;
        self.arm_obs = self.env.inner_mut().reset(truth).to_vec();
        Ok(self.gate_obs())
    }

    fn step(&mut self, weights: &[f64]) -> Result<Transition> {
        let action = blend_action(weights, &self.subs.actions(&self.arm_obs)?)?;
        let tr = self.env.step(&action)?;
        self.arm_obs = tr.observation;
        Ok(Transition {
            observation: self.gate_obs(),
            reward: tr.reward,
            force: tr.force,
            done: tr.done,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BlendOutcome {
    /// Gate with the best moving-average reward.
    pub policy: BlendPolicy,
    pub final_policy: BlendPolicy,
    pub best_avg_reward: f64,
    pub curve: TrainCurve,
    pub estimator: Estimator,
    pub trace: Vec<EstimateRecord>,
}

/// Trains the gate with PPO while the estimator re-identifies every new
/// system at the episode boundary.
pub fn train_blend(
    subs: SubPolicySet,
    kind: EstimatorKind,
    scenario: Scenario,
    env_config: &EnvConfig,
    ppo_config: &PpoConfig,
    sysid: &SysidConfig,
    seed: u64,
) -> Result<BlendOutcome> {
    let estimator = Estimator::new(kind, env_config.bounds, sysid, seed);
    let (outcome, estimator, trace) = {
        let mut env = BlendEnv::new(env_config.clone(), scenario, &subs, estimator, sysid.clone(), seed);
        let outcome = ppo::train(&mut env, ppo_config, seed)?;
        (outcome, env.estimator, env.trace)
    };
    let bounds = env_config.bounds;
    let final_policy = BlendPolicy {
        gate: outcome.agent.policy,
        subs: subs.clone(),
        bounds,
    };
    Ok(BlendOutcome {
        policy: BlendPolicy {
            gate: outcome.best_policy,
            subs,
            bounds,
        },
        final_policy,
        best_avg_reward: outcome.best_avg_reward,
        curve: outcome.curve,
        estimator,
        trace,
    })
}
