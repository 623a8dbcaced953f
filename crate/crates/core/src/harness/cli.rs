//! Command-line front end.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::env::Scenario;
use crate::error::Result;
use crate::sysid::EstimatorKind;

use super::pipeline::{self, Layout};
use super::{selftest, ExperimentConfig, Method};

#[derive(Debug, Parser)]
#[command(name = "blendsysid", about = "Policy blending with system identification on an impaired-arm task")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Overrides the training seed list (train-*) or the evaluation seed (eval).
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON experiment configuration; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one sub-policy.
    TrainSub {
        #[arg(long)]
        impairment: Scenario,
        #[command(flatten)]
        common: Common,
    },
    /// Train the domain-randomized baseline.
    TrainDr {
        #[command(flatten)]
        common: Common,
    },
    /// Train the blending gate on top of the trained sub-policies.
    TrainBlend {
        #[arg(long)]
        sysid: EstimatorKind,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a method on a scenario.
    Eval {
        #[arg(long)]
        method: Method,
        #[arg(long)]
        scenario: Scenario,
        #[command(flatten)]
        common: Common,
    },
    /// Merge all evaluations into comparison CSVs.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Every stage in order: sub-policies, DR, blends, evaluations, report.
    All {
        #[command(flatten)]
        common: Common,
    },
    /// Run the oracle checks.
    Selftest {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    match &common.config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

/// Executes a parsed command, returning the lines to print.
pub fn execute(command: Command) -> Result<Vec<String>> {
    let mut lines = Vec::new();
    match command {
        Command::TrainSub { impairment, common } => {
            let cfg = load_config(&common)?;
            let sel = pipeline::train_sub(&Layout::new(&common.out), &cfg, impairment, common.seed)?;
            lines.push(format!("sub {impairment}: seed {} best avg reward {:.4}", sel.seed, sel.best_avg_reward));
        }
        Command::TrainDr { common } => {
            let cfg = load_config(&common)?;
            let sel = pipeline::train_dr(&Layout::new(&common.out), &cfg, common.seed)?;
            lines.push(format!("dr: seed {} best avg reward {:.4}", sel.seed, sel.best_avg_reward));
        }
        Command::TrainBlend { sysid, common } => {
            let cfg = load_config(&common)?;
            let sel = pipeline::train_blend(&Layout::new(&common.out), &cfg, sysid, common.seed)?;
            lines.push(format!("blend {sysid}: seed {} best avg reward {:.4}", sel.seed, sel.best_avg_reward));
        }
        Command::Eval { method, scenario, common } => {
            let cfg = load_config(&common)?;
            let r = pipeline::eval(&Layout::new(&common.out), &cfg, method, scenario, common.seed)?;
            lines.push(format!(
                "{method} on {scenario}: mean {:.4} stdev {:.4} over {} episodes",
                r.summary.mean,
                r.summary.stdev,
                r.forces.len()
            ));
        }
        Command::Report { common } => {
            let cfg = load_config(&common)?;
            let c = pipeline::report_command(&Layout::new(&common.out), &cfg)?;
            lines.push("method,scenario,mean,stdev".to_string());
            lines.extend(c.table.iter().map(|r| format!("{},{},{:.4},{:.4}", r.method, r.scenario, r.mean, r.stdev)));
        }
        Command::All { common } => {
            let cfg = load_config(&common)?;
            let c = pipeline::run_all(&Layout::new(&common.out), &cfg, |stage| eprintln!("[{stage}]"))?;
            lines.extend(c.table.iter().map(|r| format!("{},{},{:.4},{:.4}", r.method, r.scenario, r.mean, r.stdev)));
        }
        Command::Selftest { common } => {
            load_config(&common)?;
            let checks = selftest::run();
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                lines.push(format!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
            }
            if failed > 0 {
                return Err(crate::Error::InvalidConfig(format!("{failed} selftest check(s) failed: {}", lines.join("; "))));
            }
        }
    }
    Ok(lines)
}

/// Parses `argv`, runs the command and returns the process exit code.
/// Usage errors exit with 2, runtime failures with 1.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
