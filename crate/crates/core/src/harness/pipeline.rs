use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blending::{self, BlendPolicy, SubPolicySet};
use crate::env::Scenario;
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, GaussianPolicy};
use crate::ppo::{self, ScenarioEnv, TrainCurve, TrainOutcome};
use crate::sysid::{Estimator, EstimatorKind};

use super::eval::{evaluate, Controller, EvalReport, ScriptedTracker};
use super::report::{self, write_rows, Comparison, RawRow};
use super::{ExperimentConfig, Method};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Paths of every artifact under an output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn sub_dir(&self, impairment: Scenario) -> PathBuf {
        self.root.join("sub").join(impairment.as_str())
    }

    pub fn dr_dir(&self) -> PathBuf {
        self.root.join("dr")
    }

    pub fn blend_dir(&self, kind: EstimatorKind) -> PathBuf {
        self.root.join("blend").join(kind.as_str())
    }

    pub fn seed_dir(dir: &Path, seed: u64) -> PathBuf {
        dir.join(format!("seed-{seed}"))
    }

    pub fn eval_dir(&self, method: Method, scenario: Scenario) -> PathBuf {
        self.root
            .join("eval")
            .join(method.to_string().replace(':', "-"))
            .join(scenario.as_str())
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

/// Provenance written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub git_describe: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub wall_clock_secs: f64,
    pub started_unix: u64,
}

pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path.to_path_buf()));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Times a command and writes `manifest.json` into `dir` once it succeeds.
pub fn with_manifest<T>(
    dir: &Path,
    command: &str,
    config: &ExperimentConfig,
    seed: Option<u64>,
    body: impl FnOnce() -> Result<T>,
) -> Result<T> {
    let started_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let t = Instant::now();
    let out = body()?;
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            command: command.to_string(),
            git_describe: git_describe(),
            config_hash: config.hash(),
            seed,
            wall_clock_secs: t.elapsed().as_secs_f64(),
            started_unix,
        },
    )?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub best_avg_reward: f64,
    pub final_avg_reward: f64,
    pub policy_sha256: String,
}

/// Which seed's checkpoint later stages load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub seed: u64,
    pub best_avg_reward: f64,
    pub policy_sha256: String,
}

fn seeds_for(config: &ExperimentConfig, seed: Option<u64>) -> Vec<u64> {
    seed.map(|s| vec![s]).unwrap_or_else(|| config.seeds.clone())
}

fn save_policy_run(dir: &Path, seed: u64, outcome: &TrainOutcome) -> Result<SeedSummary> {
    fs::create_dir_all(dir)?;
    let policy_path = dir.join("policy.json");
    Checkpoint::from_policy(&outcome.best_policy, None).save(&policy_path)?;
    Checkpoint::from_policy(&outcome.agent.policy, Some(&outcome.agent.policy_opt)).save(&dir.join("final_policy.json"))?;
    Checkpoint::from_mlp(&outcome.agent.value, Some(&outcome.agent.value_opt)).save(&dir.join("value.json"))?;
    outcome.curve.write_csv(File::create(dir.join("curve.csv"))?)?;
    let summary = SeedSummary {
        seed,
        best_avg_reward: outcome.best_avg_reward,
        final_avg_reward: outcome.curve.last().unwrap_or(f64::NAN),
        policy_sha256: file_sha256(&policy_path)?,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Collects the per-seed summaries and curves under `dir`, writes the merged
/// `curve.csv` and picks the seed with the best moving-average reward.
fn select_best(dir: &Path, seeds: &[u64]) -> Result<Selection> {
    let mut merged = TrainCurve::default();
    let mut best: Option<SeedSummary> = None;
    for &seed in seeds {
        let sd = Layout::seed_dir(dir, seed);
        let s: SeedSummary = read_json(&sd.join("summary.json"))?;
        merged
            .points
            .extend(TrainCurve::read_csv(File::open(sd.join("curve.csv"))?)?.points);
        if best.as_ref().is_none_or(|b| s.best_avg_reward > b.best_avg_reward) {
            best = Some(s);
        }
    }
    merged.write_csv(File::create(dir.join("curve.csv"))?)?;
    let best = best.ok_or_else(|| Error::InvalidConfig("no seeds".into()))?;
    let sel = Selection {
        seed: best.seed,
        best_avg_reward: best.best_avg_reward,
        policy_sha256: best.policy_sha256,
    };
    write_json(&dir.join("selection.json"), &sel)?;
    Ok(sel)
}

fn train_policy(
    dir: &Path,
    config: &ExperimentConfig,
    scenario: Scenario,
    ppo_cfg: &ppo::PpoConfig,
    seed: Option<u64>,
) -> Result<Selection> {
    for s in seeds_for(config, seed) {
        let mut env = ScenarioEnv::new(config.env.clone(), scenario, s);
        let outcome = ppo::train(&mut env, ppo_cfg, s)?;
        save_policy_run(&Layout::seed_dir(dir, s), s, &outcome)?;
    }
    select_best(dir, &available_seeds(dir, config, seed))
}

/// Seeds with a finished run: the requested ones plus any configured seed
/// already present on disk.
fn available_seeds(dir: &Path, config: &ExperimentConfig, seed: Option<u64>) -> Vec<u64> {
    let mut seeds: Vec<u64> = config
        .seeds
        .iter()
        .copied()
        .chain(seed)
        .filter(|s| Layout::seed_dir(dir, *s).join("summary.json").exists())
        .collect();
    seeds.sort_unstable();
    seeds.dedup();
    seeds
}

/// Trains the sub-policy for one impairment on every configured seed.
pub fn train_sub(layout: &Layout, config: &ExperimentConfig, impairment: Scenario, seed: Option<u64>) -> Result<Selection> {
    if !Scenario::SINGLE_IMPAIRMENTS.contains(&impairment) {
        return Err(Error::UnknownScenario(format!("{impairment} is not a single impairment")));
    }
    let dir = layout.sub_dir(impairment);
    with_manifest(&dir, &format!("train-sub --impairment {impairment}"), config, seed, || {
        train_policy(&dir, config, impairment, &config.sub_ppo, seed)
    })
}

/// Trains the domain-randomized baseline.
pub fn train_dr(layout: &Layout, config: &ExperimentConfig, seed: Option<u64>) -> Result<Selection> {
    let dir = layout.dr_dir();
    with_manifest(&dir, "train-dr", config, seed, || {
        train_policy(&dir, config, Scenario::Dr, &config.dr_ppo, seed)
    })
}

/// Loads the selected checkpoint of a trained policy directory.
pub fn load_selected_policy(dir: &Path) -> Result<GaussianPolicy> {
    let sel: Selection = read_json(&dir.join("selection.json"))?;
    Checkpoint::load(&Layout::seed_dir(dir, sel.seed).join("policy.json"))?.to_policy()
}

/// The three selected sub-policies in canonical order.
pub fn load_sub_policies(layout: &Layout) -> Result<SubPolicySet> {
    let entries = Scenario::SINGLE_IMPAIRMENTS
        .iter()
        .map(|s| Ok((s.to_string(), load_selected_policy(&layout.sub_dir(*s))?)))
        .collect::<Result<Vec<_>>>()?;
    SubPolicySet::new(entries)
}

/// Everything needed to run a trained blending method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendBundle {
    pub policy: BlendPolicy,
    pub estimator: Estimator,
}

/// Trains the blending gate on combined impairments with the given estimator.
pub fn train_blend(layout: &Layout, config: &ExperimentConfig, kind: EstimatorKind, seed: Option<u64>) -> Result<Selection> {
    let dir = layout.blend_dir(kind);
    let subs = load_sub_policies(layout)?;
    with_manifest(&dir, &format!("train-blend --sysid {kind}"), config, seed, || {
        for s in seeds_for(config, seed) {
            let out = blending::train_blend(
                subs.clone(),
                kind,
                Scenario::Combined,
                &config.env,
                &config.blend_ppo,
                &config.sysid,
                s,
            )?;
            let sd = Layout::seed_dir(&dir, s);
            fs::create_dir_all(&sd)?;
            let policy_path = sd.join("policy.json");
            Checkpoint::from_policy(&out.policy.gate, None).save(&policy_path)?;
            write_json(&sd.join("estimator.json"), &out.estimator)?;
            write_json(
                &sd.join("bundle.json"),
                &BlendBundle {
                    policy: out.policy.clone(),
                    estimator: out.estimator.clone(),
                },
            )?;
            out.curve.write_csv(File::create(sd.join("curve.csv"))?)?;
            write_rows(&out.trace, File::create(sd.join("estimates.csv"))?)?;
            write_json(
                &sd.join("summary.json"),
                &SeedSummary {
                    seed: s,
                    best_avg_reward: out.best_avg_reward,
                    final_avg_reward: out.curve.last().unwrap_or(f64::NAN),
                    policy_sha256: file_sha256(&policy_path)?,
                },
            )?;
        }
        select_best(&dir, &available_seeds(&dir, config, seed))
    })
}

pub fn load_blend_bundle(layout: &Layout, kind: EstimatorKind) -> Result<BlendBundle> {
    let dir = layout.blend_dir(kind);
    let sel: Selection = read_json(&dir.join("selection.json"))?;
    read_json(&Layout::seed_dir(&dir, sel.seed).join("bundle.json"))
}

/// Builds the controller for `method` from the artifacts under `layout`.
pub fn load_controller(layout: &Layout, config: &ExperimentConfig, method: Method) -> Result<Controller> {
    Ok(match method {
        Method::Dr => Controller::Policy(load_selected_policy(&layout.dr_dir())?),
        Method::Sub(s) => Controller::Policy(load_selected_policy(&layout.sub_dir(s))?),
        Method::Blend(kind) => {
            let b = load_blend_bundle(layout, kind)?;
            Controller::Blend {
                policy: b.policy,
                estimator: b.estimator,
                sysid: config.sysid.clone(),
            }
        }
        Method::Zero => Controller::Zero,
        Method::Scripted => Controller::Scripted(ScriptedTracker::new(config.env.clone())),
    })
}

/// Evaluates one (method, scenario) cell and writes `report.json` and `raw.csv`.
pub fn eval(
    layout: &Layout,
    config: &ExperimentConfig,
    method: Method,
    scenario: Scenario,
    seed: Option<u64>,
) -> Result<EvalReport> {
    let seed = seed.unwrap_or(config.eval_seed);
    let mut controller = load_controller(layout, config, method)?;
    let dir = layout.eval_dir(method, scenario);
    with_manifest(&dir, &format!("eval --method {method} --scenario {scenario}"), config, Some(seed), || {
        let rep = evaluate(&mut controller, &method, scenario, &config.env, config.eval_episodes, seed)?;
        write_json(&dir.join("report.json"), &rep)?;
        let raw: Vec<RawRow> = rep
            .forces
            .iter()
            .enumerate()
            .map(|(episode, &force)| RawRow {
                method: rep.method.clone(),
                scenario,
                episode,
                force,
            })
            .collect();
        write_rows(&raw, File::create(dir.join("raw.csv"))?)?;
        Ok(rep)
    })
}

/// Gathers every `eval/*/*/report.json` under the root.
pub fn collect_reports(layout: &Layout) -> Result<Vec<EvalReport>> {
    let eval_root = layout.root.join("eval");
    let mut paths = Vec::new();
    if eval_root.is_dir() {
        for m in fs::read_dir(&eval_root)? {
            let m = m?.path();
            if !m.is_dir() {
                continue;
            }
            for s in fs::read_dir(&m)? {
                let p = s?.path().join("report.json");
                if p.is_file() {
                    paths.push(p);
                }
            }
        }
    }
    paths.sort();
    paths.iter().map(|p| read_json(p)).collect()
}

/// Writes the comparison CSVs from all finished evaluations.
pub fn report_command(layout: &Layout, config: &ExperimentConfig) -> Result<Comparison> {
    let dir = layout.report_dir();
    with_manifest(&dir, "report", config, None, || {
        let reports = collect_reports(layout)?;
        let c = report::report(&reports)?;
        c.write_dir(&dir)?;
        Ok(c)
    })
}

/// The methods compared in the final table.
pub const COMPARED_METHODS: [Method; 4] = [
    Method::Dr,
    Method::Blend(EstimatorKind::Ukf),
    Method::Blend(EstimatorKind::Spm),
    Method::Blend(EstimatorKind::Perfect),
];

/// Every training, evaluation and reporting stage in order.
pub fn run_all(layout: &Layout, config: &ExperimentConfig, mut progress: impl FnMut(&str)) -> Result<Comparison> {
    for imp in Scenario::SINGLE_IMPAIRMENTS {
        progress(&format!("train-sub {imp}"));
        train_sub(layout, config, imp, None)?;
    }
    progress("train-dr");
    train_dr(layout, config, None)?;
    for kind in EstimatorKind::ALL {
        progress(&format!("train-blend {kind}"));
        train_blend(layout, config, kind, None)?;
    }
    for method in COMPARED_METHODS {
        for scenario in Scenario::EVALUATION {
            progress(&format!("eval {method} {scenario}"));
            eval(layout, config, method, scenario, None)?;
        }
    }
    progress("report");
    report_command(layout, config)
}
