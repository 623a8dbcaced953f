//! Experiment orchestration: training pipelines for every method, evaluation,
//! reporting and the on-disk layout they share.
//!
//! Output directory layout (all paths relative to `--out`):
//!
//! ```text
//! sub/<impairment>/seed-<s>/   policy.json value.json curve.csv summary.json
//! dr/seed-<s>/                 policy.json value.json curve.csv summary.json
//! blend/<sysid>/seed-<s>/      gate.json bundle.json estimator.json curve.csv estimates.csv summary.json
//! eval/<method>/<scenario>/    report.json raw.csv
//! report/                      table.csv box.csv raw.csv
//! ```
//!
//! Every command also writes a `manifest.json` next to its outputs.

pub mod cli;
pub mod eval;
pub mod pipeline;
pub mod report;
pub mod selftest;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, Scenario};
use crate::error::{Error, Result};
use crate::ppo::PpoConfig;
use crate::sysid::{EstimatorKind, SysidConfig};

pub use eval::{evaluate, Controller, EvalReport, ScriptedTracker, Summary};
pub use report::{report, Comparison};

/// A trained (or scripted) controller family that can be evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Domain-randomized single policy.
    Dr,
    /// Blending gate fed by the given estimator.
    Blend(EstimatorKind),
    /// One sub-policy on its own.
    Sub(Scenario),
    /// Robot that never moves.
    Zero,
    /// Inverse-kinematics tracker.
    Scripted,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Dr => f.write_str("dr"),
            Method::Blend(k) => write!(f, "{k}"),
            Method::Sub(s) => write!(f, "sub:{s}"),
            Method::Zero => f.write_str("zero"),
            Method::Scripted => f.write_str("scripted"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(name) = s.strip_prefix("sub:") {
            let scenario: Scenario = name.parse()?;
            if !Scenario::SINGLE_IMPAIRMENTS.contains(&scenario) {
                return Err(Error::UnknownMethod(s.to_string()));
            }
            return Ok(Method::Sub(scenario));
        }
        match s {
            "dr" => Ok(Method::Dr),
            "zero" => Ok(Method::Zero),
            "scripted" => Ok(Method::Scripted),
            other => other
                .parse::<EstimatorKind>()
                .map(Method::Blend)
                .map_err(|_| Error::UnknownMethod(other.to_string())),
        }
    }
}

/// Everything a pipeline run depends on. Loaded from JSON; absent fields take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub sub_ppo: PpoConfig,
    pub dr_ppo: PpoConfig,
    pub blend_ppo: PpoConfig,
    pub sysid: SysidConfig,
    /// Training seeds.
    pub seeds: Vec<u64>,
    pub eval_seed: u64,
    pub eval_episodes: usize,
}

/// Seed used for all 100-episode evaluations unless overridden.
pub const DEFAULT_EVAL_SEED: u64 = 2022;

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            sub_ppo: PpoConfig::default(),
            dr_ppo: PpoConfig::default(),
            blend_ppo: PpoConfig::blending(),
            sysid: SysidConfig::default(),
            seeds: vec![0, 1, 2],
            eval_seed: DEFAULT_EVAL_SEED,
            eval_episodes: 100,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        for p in [&self.sub_ppo, &self.dr_ppo, &self.blend_ppo] {
            p.validate(self.env.horizon)?;
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seed list must be nonempty".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::InvalidConfig("eval_episodes must be nonzero".into()));
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        pipeline::sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}
