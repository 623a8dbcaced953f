//! Planar impaired-arm assistance task.
//!
//! A scripted two-link human arm tracks a sinusoidal joint trajectory while a
//! two-link robot arm, commanded in joint velocity, tries to keep its end
//! effector on an itch target at the middle of the human forearm. The human's
//! controller is degraded by three impairments (command noise, weakness and a
//! reduced joint range) collected in a [`ParamVector`] that stays fixed for an
//! episode.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const N_PARAMS: usize = 4;
pub const OBS_DIM: usize = 14;
pub const ACT_DIM: usize = 2;

pub type Vec2 = [f64; 2];

/// Impairment magnitudes for one simulated human.
///
/// Flattened order is `[noise_std[0], noise_std[1], weakness, range_limit]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    /// Standard deviation of the additive joint-velocity noise, rad/s per joint.
    pub noise_std: Vec2,
    /// Gain multiplier on the human's joint command; 1 is full strength.
    pub weakness: f64,
    /// Multiplier on the nominal joint limits; 1 is the full range.
    pub range_limit: f64,
}

impl ParamVector {
    pub const fn neutral() -> Self {
        Self {
            noise_std: [0.0, 0.0],
            weakness: 1.0,
            range_limit: 1.0,
        }
    }

    pub fn to_array(&self) -> [f64; N_PARAMS] {
        [
            self.noise_std[0],
            self.noise_std[1],
            self.weakness,
            self.range_limit,
        ]
    }

    pub fn from_array(a: [f64; N_PARAMS]) -> Self {
        Self {
            noise_std: [a[0], a[1]],
            weakness: a[2],
            range_limit: a[3],
        }
    }

    pub fn from_slice(s: &[f64]) -> Result<Self> {
        let a: [f64; N_PARAMS] = s.try_into().map_err(|_| Error::DimensionMismatch {
            expected: N_PARAMS,
            actual: s.len(),
        })?;
        Ok(Self::from_array(a))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

impl Default for ParamVector {
    fn default() -> Self {
        Self::neutral()
    }
}

/// Axis-aligned box bounding the admissible parameter space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub lo: ParamVector,
    pub hi: ParamVector,
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            lo: ParamVector {
                noise_std: [0.0, 0.0],
                weakness: 0.25,
                range_limit: 0.5,
            },
            hi: ParamVector {
                noise_std: [0.35, 0.35],
                weakness: 1.0,
                range_limit: 1.0,
            },
        }
    }
}

impl ParamBounds {
    pub fn new(lo: ParamVector, hi: ParamVector) -> Result<Self> {
        let (l, h) = (lo.to_array(), hi.to_array());
        if l.iter().zip(&h).any(|(a, b)| !(a <= b)) {
            return Err(Error::InvalidConfig(format!(
                "parameter bounds must satisfy lo <= hi, got {l:?} / {h:?}"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo_array(&self) -> [f64; N_PARAMS] {
        self.lo.to_array()
    }

    pub fn hi_array(&self) -> [f64; N_PARAMS] {
        self.hi.to_array()
    }

    pub fn widths(&self) -> [f64; N_PARAMS] {
        let (l, h) = (self.lo_array(), self.hi_array());
        std::array::from_fn(|i| h[i] - l[i])
    }

    pub fn midpoint(&self) -> ParamVector {
        let (l, h) = (self.lo_array(), self.hi_array());
        ParamVector::from_array(std::array::from_fn(|i| 0.5 * (l[i] + h[i])))
    }

    pub fn clip(&self, p: &ParamVector) -> ParamVector {
        ParamVector::from_array(self.clip_array(p.to_array()))
    }

    pub fn clip_array(&self, a: [f64; N_PARAMS]) -> [f64; N_PARAMS] {
        let (l, h) = (self.lo_array(), self.hi_array());
        std::array::from_fn(|i| a[i].clamp(l[i], h[i]))
    }

    pub fn contains(&self, p: &ParamVector) -> bool {
        let (l, h, a) = (self.lo_array(), self.hi_array(), p.to_array());
        (0..N_PARAMS).all(|i| a[i] >= l[i] && a[i] <= h[i])
    }

    /// Maps a parameter vector onto `[-1, 1]^N` (degenerate axes map to 0).
    pub fn normalize(&self, a: &[f64; N_PARAMS]) -> [f64; N_PARAMS] {
        let (l, w) = (self.lo_array(), self.widths());
        std::array::from_fn(|i| {
            if w[i] > 0.0 {
                2.0 * (a[i] - l[i]) / w[i] - 1.0
            } else {
                0.0
            }
        })
    }

    pub fn sample_uniform(&self, rng: &mut Rng) -> ParamVector {
        let (l, w) = (self.lo_array(), self.widths());
        ParamVector::from_array(std::array::from_fn(|i| l[i] + w[i] * rng.random::<f64>()))
    }
}

/// Distributions used to draw impairments for each training/evaluation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImpairmentConfig {
    /// Involuntary-movement noise std, rad/s (5 degrees).
    pub involuntary_noise_std: f64,
    pub weakness_mean: f64,
    pub weakness_std: f64,
    pub range_mean: f64,
    pub range_std: f64,
    /// Upper end of the uniform noise-std range used for domain randomization (10 degrees).
    pub dr_noise_max: f64,
    pub dr_weakness: Vec2,
    pub dr_range: Vec2,
}

impl Default for ImpairmentConfig {
    fn default() -> Self {
        Self {
            involuntary_noise_std: 5f64.to_radians(),
            weakness_mean: 0.66,
            weakness_std: 0.2,
            range_mean: 0.75,
            range_std: 0.1,
            dr_noise_max: 10f64.to_radians(),
            dr_weakness: [0.25, 1.0],
            dr_range: [0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub dt: f64,
    pub horizon: usize,
    pub human_links: Vec2,
    pub human_base: Vec2,
    pub robot_links: Vec2,
    pub robot_base: Vec2,
    pub robot_initial_angles: Vec2,
    /// Proportional gain of the human joint controller, 1/s.
    pub human_gain: f64,
    /// Nominal (unimpaired) symmetric human joint limit, rad.
    pub human_joint_limit: f64,
    pub human_amplitude: Vec2,
    pub human_frequency: f64,
    /// Joint speed clamp for both arms, rad/s. Robot actions in [-1, 1] scale to it.
    pub max_joint_speed: f64,
    pub contact_radius: f64,
    pub contact_stiffness: f64,
    pub w_distance: f64,
    pub w_action: f64,
    pub w_force: f64,
    pub bounds: ParamBounds,
    pub impairments: ImpairmentConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            horizon: 200,
            human_links: [0.5, 0.4],
            human_base: [0.0, 0.0],
            robot_links: [0.5, 0.4],
            robot_base: [1.2, 0.0],
            robot_initial_angles: [FRAC_PI_2, FRAC_PI_2],
            human_gain: 2.0,
            human_joint_limit: FRAC_PI_2,
            human_amplitude: [0.6, 0.4],
            human_frequency: 0.5,
            max_joint_speed: 2.0,
            contact_radius: 0.05,
            contact_stiffness: 100.0,
            w_distance: -1.0,
            w_action: -0.01,
            w_force: 1.0,
            bounds: ParamBounds::default(),
            impairments: ImpairmentConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("human_links[0]", self.human_links[0]),
            ("human_links[1]", self.human_links[1]),
            ("robot_links[0]", self.robot_links[0]),
            ("robot_links[1]", self.robot_links[1]),
            ("human_gain", self.human_gain),
            ("human_joint_limit", self.human_joint_limit),
            ("max_joint_speed", self.max_joint_speed),
            ("contact_radius", self.contact_radius),
            ("contact_stiffness", self.contact_stiffness),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be nonzero".into()));
        }
        ParamBounds::new(self.bounds.lo, self.bounds.hi)?;
        Ok(())
    }

    pub fn human_target_angles(&self, time: f64) -> Vec2 {
        let s = (self.human_frequency * time).sin();
        [self.human_amplitude[0] * s, self.human_amplitude[1] * s]
    }

    /// Largest possible distance between robot effector and target.
    pub fn max_separation(&self) -> f64 {
        let dx = self.robot_base[0] - self.human_base[0];
        let dy = self.robot_base[1] - self.human_base[1];
        dx.hypot(dy)
            + self.human_links[0]
            + 0.5 * self.human_links[1]
            + self.robot_links[0]
            + self.robot_links[1]
    }

    /// Closed interval containing every per-step reward.
    pub fn reward_bounds(&self) -> (f64, f64) {
        let max_action_sq = ACT_DIM as f64;
        let lo = self.w_distance.min(0.0) * self.max_separation()
            + self.w_action.min(0.0) * max_action_sq;
        let hi = self.w_force.max(0.0) * self.contact_stiffness * self.contact_radius
            + self.w_action.max(0.0) * max_action_sq
            + self.w_distance.max(0.0) * self.max_separation();
        (lo, hi)
    }

    pub fn reward(&self, distance: f64, action: &[f64], force: f64) -> f64 {
        reward(distance, action, force, self.w_distance, self.w_action, self.w_force)
    }

    pub fn contact_force(&self, effector: Vec2, target: Vec2) -> f64 {
        contact_force(effector, target, self.contact_radius, self.contact_stiffness)
    }

    pub fn target_position(&self, human_angles: Vec2) -> Vec2 {
        target_position(human_angles, self.human_links, self.human_base)
    }

    pub fn robot_effector(&self, robot_angles: Vec2) -> Vec2 {
        forward_kinematics(robot_angles, self.robot_links, self.robot_base)
    }
}

/// End-effector position of a planar two-link arm.
pub fn forward_kinematics(angles: Vec2, lengths: Vec2, base: Vec2) -> Vec2 {
    let (s1, c1) = angles[0].sin_cos();
    let (s12, c12) = (angles[0] + angles[1]).sin_cos();
    [
        base[0] + lengths[0] * c1 + lengths[1] * c12,
        base[1] + lengths[0] * s1 + lengths[1] * s12,
    ]
}

/// The itch target sits halfway along the human forearm.
pub fn target_position(angles: Vec2, lengths: Vec2, base: Vec2) -> Vec2 {
    forward_kinematics(angles, [lengths[0], 0.5 * lengths[1]], base)
}

/// Penalty-spring contact proxy: `stiffness * max(0, radius - distance)`.
pub fn contact_force(effector: Vec2, target: Vec2, radius: f64, stiffness: f64) -> f64 {
    let d = (effector[0] - target[0]).hypot(effector[1] - target[1]);
    stiffness * (radius - d).max(0.0)
}

pub fn reward(
    distance: f64,
    action: &[f64],
    force: f64,
    w_distance: f64,
    w_action: f64,
    w_force: f64,
) -> f64 {
    let action_sq: f64 = action.iter().map(|a| a * a).sum();
    w_distance * distance + w_action * action_sq + w_force * force
}

/// Degrades a human joint-velocity command: scales it by the weakness gain,
/// adds zero-mean Gaussian noise and clamps to the joint speed limit.
pub fn apply_impairments(command: Vec2, params: &ParamVector, max_speed: f64, rng: &mut Rng) -> Vec2 {
    std::array::from_fn(|i| {
        let z: f64 = StandardNormal.sample(rng);
        (params.weakness * command[i] + params.noise_std[i] * z).clamp(-max_speed, max_speed)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// No impairment at all.
    Nominal,
    Involuntary,
    Weak,
    Limited,
    Combined,
    /// Uniform domain-randomization ranges.
    Dr,
}

impl Scenario {
    pub const EVALUATION: [Scenario; 4] = [
        Scenario::Combined,
        Scenario::Involuntary,
        Scenario::Limited,
        Scenario::Weak,
    ];
    pub const SINGLE_IMPAIRMENTS: [Scenario; 3] =
        [Scenario::Involuntary, Scenario::Weak, Scenario::Limited];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Nominal => "nominal",
            Scenario::Involuntary => "involuntary",
            Scenario::Weak => "weak",
            Scenario::Limited => "limited",
            Scenario::Combined => "combined",
            Scenario::Dr => "dr",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "nominal" | "none" => Scenario::Nominal,
            "involuntary" => Scenario::Involuntary,
            "weak" | "weakness" => Scenario::Weak,
            "limited" | "limit" => Scenario::Limited,
            "combined" => Scenario::Combined,
            "dr" => Scenario::Dr,
            other => return Err(Error::UnknownScenario(other.to_string())),
        })
    }
}

fn clipped_normal(mean: f64, std: f64, lo: f64, hi: f64, rng: &mut Rng) -> f64 {
    let v = if std > 0.0 {
        Normal::new(mean, std).expect("finite std").sample(rng)
    } else {
        mean
    };
    v.clamp(lo, hi)
}

fn uniform(range: Vec2, rng: &mut Rng) -> f64 {
    range[0] + (range[1] - range[0]) * rng.random::<f64>()
}

/// Draws the impairment vector for one episode of `scenario`.
pub fn sample_impairments(scenario: Scenario, config: &EnvConfig, rng: &mut Rng) -> ParamVector {
    let imp = &config.impairments;
    let b = &config.bounds;
    let mut p = ParamVector::neutral();
    let noise = || [imp.involuntary_noise_std; 2];
    let weak = |rng: &mut Rng| {
        clipped_normal(imp.weakness_mean, imp.weakness_std, b.lo.weakness, b.hi.weakness, rng)
    };
    let range = |rng: &mut Rng| {
        clipped_normal(imp.range_mean, imp.range_std, b.lo.range_limit, b.hi.range_limit, rng)
    };
    match scenario {
        Scenario::Nominal => {}
        Scenario::Involuntary => p.noise_std = noise(),
        Scenario::Weak => p.weakness = weak(rng),
        Scenario::Limited => p.range_limit = range(rng),
        Scenario::Combined => {
            p.noise_std = noise();
            p.weakness = weak(rng);
            p.range_limit = range(rng);
        }
        Scenario::Dr => {
            p.noise_std = [
                uniform([0.0, imp.dr_noise_max], rng),
                uniform([0.0, imp.dr_noise_max], rng),
            ];
            p.weakness = uniform(imp.dr_weakness, rng);
            p.range_limit = uniform(imp.dr_range, rng);
        }
    }
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub human_angles: Vec2,
    pub human_velocities: Vec2,
    pub robot_angles: Vec2,
    pub robot_velocities: Vec2,
    pub step: usize,
    /// Sum of per-step contact forces so far.
    pub accumulated_force: f64,
    pub params: ParamVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: [f64; OBS_DIM],
    pub reward: f64,
    pub force: f64,
    pub distance: f64,
    pub done: bool,
}

/// One simulated human/robot pair. Owns its noise stream; not shared across workers.
#[derive(Debug, Clone)]
pub struct ImpairedArmEnv {
    config: EnvConfig,
    state: EnvState,
    rng: Rng,
}

impl ImpairedArmEnv {
    pub fn new(config: EnvConfig, params: ParamVector, rng: Rng) -> Self {
        let state = Self::initial_state(&config, params);
        Self { config, state, rng }
    }

    fn initial_state(config: &EnvConfig, params: ParamVector) -> EnvState {
        EnvState {
            human_angles: [0.0, 0.0],
            human_velocities: [0.0, 0.0],
            robot_angles: config.robot_initial_angles,
            robot_velocities: [0.0, 0.0],
            step: 0,
            accumulated_force: 0.0,
            params,
        }
    }

    /// Starts a new episode with `params`, keeping the noise stream.
    pub fn reset(&mut self, params: ParamVector) -> [f64; OBS_DIM] {
        self.state = Self::initial_state(&self.config, params);
        self.observation()
    }

    pub fn reseed(&mut self, rng: Rng) {
        self.rng = rng;
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn params(&self) -> &ParamVector {
        &self.state.params
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.config.horizon
    }

    pub fn observation(&self) -> [f64; OBS_DIM] {
        let s = &self.state;
        let target = self.config.target_position(s.human_angles);
        let effector = self.config.robot_effector(s.robot_angles);
        [
            s.human_angles[0],
            s.human_angles[1],
            s.human_velocities[0],
            s.human_velocities[1],
            s.robot_angles[0],
            s.robot_angles[1],
            s.robot_velocities[0],
            s.robot_velocities[1],
            target[0],
            target[1],
            effector[0],
            effector[1],
            target[0] - effector[0],
            target[1] - effector[1],
        ]
    }

    pub fn step(&mut self, robot_action: &[f64]) -> Result<StepResult> {
        if robot_action.len() != ACT_DIM {
            return Err(Error::DimensionMismatch {
                expected: ACT_DIM,
                actual: robot_action.len(),
            });
        }
        if self.is_done() {
            return Err(Error::EpisodeFinished(self.state.step));
        }
        let cfg = &self.config;
        let s = &mut self.state;
        let vmax = cfg.max_joint_speed;
        let action: Vec2 = std::array::from_fn(|i| {
            let a = robot_action[i];
            if a.is_nan() {
                0.0
            } else {
                a.clamp(-1.0, 1.0)
            }
        });

        let desired = cfg.human_target_angles((s.step + 1) as f64 * cfg.dt);
        let command: Vec2 = std::array::from_fn(|i| {
            (cfg.human_gain * (desired[i] - s.human_angles[i])).clamp(-vmax, vmax)
        });
        let human_vel = apply_impairments(command, &s.params, vmax, &mut self.rng);
        let limit = s.params.range_limit * cfg.human_joint_limit;
        for i in 0..2 {
            let prev = s.human_angles[i];
            let next = (prev + cfg.dt * human_vel[i]).clamp(-limit, limit);
            s.human_angles[i] = next;
            s.human_velocities[i] = (next - prev) / cfg.dt;
        }

        for i in 0..2 {
            s.robot_velocities[i] = action[i] * vmax;
            s.robot_angles[i] += cfg.dt * s.robot_velocities[i];
        }

        let target = cfg.target_position(s.human_angles);
        let effector = cfg.robot_effector(s.robot_angles);
        let distance = (effector[0] - target[0]).hypot(effector[1] - target[1]);
        let force = cfg.contact_force(effector, target);
        let reward = cfg.reward(distance, &action, force);
        s.accumulated_force += force;
        s.step += 1;
        let done = s.step >= cfg.horizon;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            force,
            distance,
            done,
        })
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    use super::*;
    use crate::rng::stream;

    const L: Vec2 = [0.5, 0.4];
    const O: Vec2 = [0.0, 0.0];

    fn close(a: Vec2, b: Vec2, tol: f64) -> bool {
        (a[0] - b[0]).abs() <= tol && (a[1] - b[1]).abs() <= tol
    }

    #[test]
    fn forward_kinematics_golden_values() {
        assert!(close(forward_kinematics([0.0, 0.0], L, O), [0.9, 0.0], 1e-12));
        assert!(close(forward_kinematics([FRAC_PI_2, 0.0], L, O), [0.0, 0.9], 1e-12));
        assert!(close(forward_kinematics([FRAC_PI_2, -FRAC_PI_2], L, O), [0.4, 0.5], 1e-12));
    }

    #[test]
    fn target_position_golden_values() {
        assert!(close(target_position([0.0, 0.0], L, O), [0.7, 0.0], 1e-12));
        assert!(close(target_position([FRAC_PI_2, 0.0], L, O), [0.0, 0.7], 1e-12));
        assert!(close(target_position([FRAC_PI_2, -FRAC_PI_2], L, O), [0.2, 0.5], 1e-12));
    }

    #[test]
    fn impairments_identity_and_scaling() {
        let mut rng = stream(1, 0);
        let out = apply_impairments([0.3, -0.1], &ParamVector::neutral(), 2.0, &mut rng);
        assert_eq!(out, [0.3, -0.1]);
        let weak = ParamVector {
            weakness: 0.25,
            ..ParamVector::neutral()
        };
        assert_eq!(apply_impairments([1.0, 1.0], &weak, 2.0, &mut rng), [0.25, 0.25]);
        assert_eq!(apply_impairments([5.0, -5.0], &ParamVector::neutral(), 2.0, &mut rng), [2.0, -2.0]);
    }

    #[test]
    fn impairment_noise_matches_sampling_distribution() {
        let mut rng = stream(7, 3);
        let p = ParamVector {
            noise_std: [0.0873, 0.0873],
            ..ParamVector::neutral()
        };
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| apply_impairments([0.0, 0.0], &p, 2.0, &mut rng)[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.002, "mean {mean}");
        assert!((var.sqrt() / 0.0873 - 1.0).abs() < 0.05, "std {}", var.sqrt());
    }

    #[test]
    fn contact_force_examples() {
        let t = [0.0, 0.0];
        assert_eq!(contact_force([0.05, 0.0], t, 0.05, 100.0), 0.0);
        assert!((contact_force([0.03, 0.0], t, 0.05, 100.0) - 2.0).abs() < 1e-12);
        assert_eq!(contact_force([0.0, 0.2], t, 0.05, 100.0), 0.0);
    }

    #[test]
    fn reward_examples() {
        let c = EnvConfig::default();
        assert!((c.reward(0.1, &[0.0, 0.0], 0.0) + 0.1).abs() < 1e-12);
        assert!((c.reward(0.0, &[1.0, 1.0], 5.0) - 4.98).abs() < 1e-12);
        assert!((c.reward(0.5, &[0.0, 0.0], 0.0) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn first_step_matches_hand_euler_update() {
        let cfg = EnvConfig::default();
        let mut env = ImpairedArmEnv::new(cfg.clone(), ParamVector::neutral(), stream(0, 0));
        let r = env.step(&[0.0, 0.0]).unwrap();
        // theta*(0.1) = A sin(0.05); command = 2 * theta*; theta = 0.1 * command.
        let s = (0.5f64 * 0.1).sin();
        let expected = [0.1 * 2.0 * 0.6 * s, 0.1 * 2.0 * 0.4 * s];
        let st = env.state();
        assert!(close(st.human_angles, expected, 1e-15));
        assert!(close(st.human_velocities, [expected[0] / 0.1, expected[1] / 0.1], 1e-12));
        assert_eq!(st.robot_angles, cfg.robot_initial_angles);
        let target = target_position(expected, L, O);
        let eff = forward_kinematics(cfg.robot_initial_angles, L, cfg.robot_base);
        let d = (target[0] - eff[0]).hypot(target[1] - eff[1]);
        assert!((r.distance - d).abs() < 1e-12);
        assert!((r.reward + d).abs() < 1e-12);
        assert_eq!(r.force, 0.0);
        assert_eq!(r.observation[8], target[0]);
        assert!(!r.done);
    }

    #[test]
    fn weakness_scales_first_step_displacement() {
        let cfg = EnvConfig::default();
        let weak = ParamVector {
            weakness: 0.25,
            ..ParamVector::neutral()
        };
        let mut a = ImpairedArmEnv::new(cfg.clone(), weak, stream(0, 0));
        let mut b = ImpairedArmEnv::new(cfg, ParamVector::neutral(), stream(0, 0));
        a.step(&[0.0, 0.0]).unwrap();
        b.step(&[0.0, 0.0]).unwrap();
        for i in 0..2 {
            let ratio = a.state().human_angles[i] / b.state().human_angles[i];
            assert!((ratio - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn range_limit_clamps_every_step() {
        let cfg = EnvConfig::default();
        let p = ParamVector {
            noise_std: [0.35, 0.35],
            weakness: 1.0,
            range_limit: 0.5,
        };
        let mut env = ImpairedArmEnv::new(cfg, p, stream(4, 0));
        let mut rng = stream(4, 1);
        while !env.is_done() {
            let a = [rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0];
            env.step(&a).unwrap();
            for th in env.state().human_angles {
                assert!(th.abs() <= FRAC_PI_4 + 1e-15);
            }
        }
    }

    #[test]
    fn stepping_finished_episode_is_an_error() {
        let cfg = EnvConfig {
            horizon: 3,
            ..EnvConfig::default()
        };
        let mut env = ImpairedArmEnv::new(cfg, ParamVector::neutral(), stream(0, 0));
        for i in 0..3 {
            let r = env.step(&[0.0, 0.0]).unwrap();
            assert_eq!(r.done, i == 2);
        }
        assert!(matches!(env.step(&[0.0, 0.0]), Err(Error::EpisodeFinished(3))));
        assert!(matches!(env.step(&[0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn scenario_samples() {
        let mut cfg = EnvConfig::default();
        let mut rng = stream(0, 0);
        let inv = sample_impairments(Scenario::Involuntary, &cfg, &mut rng);
        assert!((inv.noise_std[0] - 0.0873).abs() < 1e-4);
        assert_eq!(inv.noise_std[0], inv.noise_std[1]);
        assert_eq!((inv.weakness, inv.range_limit), (1.0, 1.0));

        cfg.impairments.weakness_std = 0.0;
        let w = sample_impairments(Scenario::Weak, &cfg, &mut rng);
        assert_eq!(w.weakness, 0.66);
        assert_eq!(w.noise_std, [0.0, 0.0]);
        assert_eq!(w.range_limit, 1.0);
        assert_eq!(sample_impairments(Scenario::Nominal, &cfg, &mut rng), ParamVector::neutral());
        assert!("sideways".parse::<Scenario>().is_err());
    }

    #[test]
    fn dr_samples_are_uniform_within_bounds() {
        let cfg = EnvConfig::default();
        let mut rng = stream(11, 0);
        let n = 100_000;
        let mut sum = [0.0; N_PARAMS];
        let mut lo = [f64::INFINITY; N_PARAMS];
        let mut hi = [f64::NEG_INFINITY; N_PARAMS];
        for _ in 0..n {
            let p = sample_impairments(Scenario::Dr, &cfg, &mut rng).to_array();
            for i in 0..N_PARAMS {
                sum[i] += p[i];
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        let ranges = [
            [0.0, 10f64.to_radians()],
            [0.0, 10f64.to_radians()],
            [0.25, 1.0],
            [0.5, 1.0],
        ];
        for i in 0..N_PARAMS {
            let [a, b] = ranges[i];
            assert!(lo[i] >= a && hi[i] <= b);
            let mid = 0.5 * (a + b);
            assert!((sum[i] / n as f64 - mid).abs() <= 0.01 * mid, "param {i}");
        }
    }

    #[test]
    fn combined_samples_respect_bounds() {
        let cfg = EnvConfig::default();
        let mut rng = stream(5, 0);
        for _ in 0..10_000 {
            let p = sample_impairments(Scenario::Combined, &cfg, &mut rng);
            assert!(cfg.bounds.contains(&p));
        }
    }

    #[test]
    fn config_round_trips_through_json_with_overrides() {
        let cfg: EnvConfig = serde_json::from_str(r#"{"horizon": 50, "contact_radius": 0.1}"#).unwrap();
        assert_eq!(cfg.horizon, 50);
        assert_eq!(cfg.contact_radius, 0.1);
        assert_eq!(cfg.dt, 0.1);
        let back: EnvConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!((EnvConfig::default().horizon as f64 * EnvConfig::default().dt - 20.0).abs() < 1e-12);
    }
}
