//! Policy blending with concurrent system identification.
//!
//! Per-impairment sub-policies are trained with PPO on a planar impaired-arm
//! assistance task. A blending gate that observes only an estimated
//! impairment vector then learns how to weight the frozen sub-policies'
//! actions, while a pluggable estimator (UKF, search parameter model, or the
//! true parameters) keeps that estimate current. A domain-randomized policy
//! serves as the baseline.

pub mod blending;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod ppo;
pub mod rng;
pub mod sysid;

pub use error::{Error, Result};
