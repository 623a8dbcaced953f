use serde::{Deserialize, Serialize};

use crate::blending::BlendPolicy;
use crate::env::{sample_impairments, EnvConfig, ImpairedArmEnv, Scenario, Vec2, ACT_DIM};
use crate::error::{Error, Result};
use crate::nn::GaussianPolicy;
use crate::rng::{self, mix};
use crate::sysid::{Estimator, SysidConfig};

use super::Method;

/// Summary statistics of one (method, scenario) cell. Quartiles use the
/// nearest-rank definition; `stdev` is the sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub stdev: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Value at rank `ceil(p * n)` of the sorted sample.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

impl Summary {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("cannot summarize an empty sample".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stdev = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            mean,
            stdev,
            min: sorted[0],
            q1: nearest_rank(&sorted, 0.25),
            median: nearest_rank(&sorted, 0.5),
            q3: nearest_rank(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub scenario: Scenario,
    pub seed: u64,
    /// Cumulative contact force of each episode.
    pub forces: Vec<f64>,
    pub summary: Summary,
}

impl EvalReport {
    pub fn new(method: String, scenario: Scenario, seed: u64, forces: Vec<f64>) -> Result<Self> {
        let summary = Summary::from_values(&forces)?;
        Ok(Self {
            method,
            scenario,
            seed,
            forces,
            summary,
        })
    }

    pub fn is_consistent(&self) -> bool {
        Summary::from_values(&self.forces).map(|s| s == self.summary).unwrap_or(false)
    }
}

/// Inverse-kinematics tracker that servos the robot onto the observed target.
/// A non-learning reference controller.
#[derive(Debug, Clone)]
pub struct ScriptedTracker {
    config: EnvConfig,
}

impl ScriptedTracker {
    pub fn new(config: EnvConfig) -> Self {
        Self { config }
    }

    /// Joint angles placing the effector at `p`, picking the elbow branch
    /// closest to `current`; unreachable points are projected onto the workspace.
    pub fn inverse_kinematics(&self, p: Vec2, current: Vec2) -> Vec2 {
        let [l1, l2] = self.config.robot_links;
        let dx = p[0] - self.config.robot_base[0];
        let dy = p[1] - self.config.robot_base[1];
        let r2 = dx * dx + dy * dy;
        let c2 = ((r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
        let mut best = current;
        let mut best_cost = f64::INFINITY;
        for sign in [1.0, -1.0] {
            let q2 = sign * c2.acos();
            let q1 = dy.atan2(dx) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
            let cand = [current[0] + wrap(q1 - current[0]), current[1] + wrap(q2 - current[1])];
            let cost = (cand[0] - current[0]).powi(2) + (cand[1] - current[1]).powi(2);
            if cost < best_cost {
                best_cost = cost;
                best = cand;
            }
        }
        best
    }

    pub fn act(&self, obs: &[f64]) -> Vec<f64> {
        let current = [obs[4], obs[5]];
        let target = [obs[8], obs[9]];
        let q = self.inverse_kinematics(target, current);
        let scale = self.config.dt * self.config.max_joint_speed;
        (0..ACT_DIM)
            .map(|i| ((q[i] - current[i]) / scale).clamp(-1.0, 1.0))
            .collect()
    }
}

fn wrap(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI
}

/// Anything that can drive the robot during evaluation.
pub enum Controller {
    Policy(GaussianPolicy),
    Blend {
        policy: BlendPolicy,
        estimator: Estimator,
        sysid: SysidConfig,
    },
    Zero,
    Scripted(ScriptedTracker),
}

/// Runs `n_episodes` fresh episodes of `scenario` and records each episode's
/// cumulative force. Policies act with their mean; blending methods run
/// their estimator on every new system (without learning from its truth).
/// Episode `i` draws its impairments and noise from streams keyed by
/// `(seed, i)`, so different methods face identical humans.
pub fn evaluate(
    controller: &mut Controller,
    method: &Method,
    scenario: Scenario,
    env_config: &EnvConfig,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n_episodes == 0 {
        return Err(Error::InvalidConfig("evaluation needs at least one episode".into()));
    }
    if let Controller::Blend { estimator, .. } = controller {
        estimator.set_learning(false);
    }
    let mut forces = Vec::with_capacity(n_episodes);
    for ep in 0..n_episodes {
        let key = mix(seed, ep as u64);
        let params = sample_impairments(scenario, env_config, &mut rng::stream(key, 0));
        let mut env = ImpairedArmEnv::new(env_config.clone(), params, rng::stream(key, 1));
        let estimate = match controller {
            Controller::Blend { estimator, sysid, .. } => {
                Some(estimator.identify(&params, env_config, sysid, false, &mut rng::stream(key, 2))?)
            }
            _ => None,
        };
        let mut obs = env.observation().to_vec();
        while !env.is_done() {
            let action = match controller {
                Controller::Policy(p) => p.mean(&obs)?,
                Controller::Blend { policy, .. } => policy.act(&obs, estimate.as_ref().expect("estimate"))?,
                Controller::Zero => vec![0.0; ACT_DIM],
                Controller::Scripted(s) => s.act(&obs),
            };
            obs = env.step(&action)?.observation.to_vec();
        }
        forces.push(env.state().accumulated_force);
    }
    EvalReport::new(method.to_string(), scenario, seed, forces)
}
