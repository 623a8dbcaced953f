use std::path::Path;

use blendsysid_core::env::{EnvConfig, Scenario};
use blendsysid_core::harness::pipeline::{self, Layout};
use blendsysid_core::harness::report::{read_rows, write_rows, RawRow, TableRow};
use blendsysid_core::harness::*;
use blendsysid_core::nn::GaussianPolicy;
use blendsysid_core::ppo::PpoConfig;
use blendsysid_core::rng::stream;
use blendsysid_core::sysid::EstimatorKind;

fn tiny_ppo() -> PpoConfig {
    PpoConfig {
        total_steps: 800,
        rollout_len: 400,
        minibatch: 200,
        epochs: 2,
        curve_window: 4,
        ..PpoConfig::default()
    }
}

fn tiny_config() -> ExperimentConfig {
    ExperimentConfig {
        sub_ppo: tiny_ppo(),
        dr_ppo: tiny_ppo(),
        blend_ppo: tiny_ppo(),
        seeds: vec![0, 1],
        eval_episodes: 6,
        ..ExperimentConfig::default()
    }
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn zero_action_controller_applies_no_force_anywhere() {
    let cfg = EnvConfig::default();
    for s in [Scenario::Nominal, Scenario::Combined, Scenario::Involuntary, Scenario::Weak, Scenario::Limited, Scenario::Dr] {
        let r = evaluate(&mut Controller::Zero, &Method::Zero, s, &cfg, 10, 1).unwrap();
        assert!(r.forces.iter().all(|f| *f == 0.0));
        assert_eq!(r.summary.mean, 0.0);
    }
}

#[test]
fn scripted_tracker_makes_contact_without_impairment() {
    let cfg = EnvConfig::default();
    let mut c = Controller::Scripted(ScriptedTracker::new(cfg.clone()));
    let r = evaluate(&mut c, &Method::Scripted, Scenario::Nominal, &cfg, 10, 2).unwrap();
    assert!(r.summary.mean > 0.0);
    assert!(r.forces.iter().all(|f| *f > 0.0));
}

#[test]
fn evaluation_statistics_are_self_consistent_and_seeded() {
    let cfg = EnvConfig::default();
    let policy = GaussianPolicy::new(14, 2, &mut stream(3, 0));
    let run = |seed| {
        let mut c = Controller::Policy(policy.clone());
        evaluate(&mut c, &Method::Dr, Scenario::Combined, &cfg, 20, seed).unwrap()
    };
    let mut scripted = Controller::Scripted(ScriptedTracker::new(cfg.clone()));
    let a = evaluate(&mut scripted, &Method::Scripted, Scenario::Combined, &cfg, 20, 5).unwrap();
    let b = evaluate(&mut scripted, &Method::Scripted, Scenario::Combined, &cfg, 20, 5).unwrap();
    let c = evaluate(&mut scripted, &Method::Scripted, Scenario::Combined, &cfg, 20, 6).unwrap();
    assert!(a.is_consistent());
    assert_eq!(a, b);
    assert_ne!(a.forces, c.forces);
    assert_eq!(run(4), run(4));
    assert_eq!(run(4).forces.len(), 20);
}

#[test]
fn csv_rows_round_trip_exactly() {
    let cfg = EnvConfig::default();
    let mut scripted = Controller::Scripted(ScriptedTracker::new(cfg.clone()));
    let r1 = evaluate(&mut scripted, &Method::Scripted, Scenario::Weak, &cfg, 7, 8).unwrap();
    let r2 = evaluate(&mut Controller::Zero, &Method::Zero, Scenario::Combined, &cfg, 7, 8).unwrap();
    let c = report(&[r1, r2]).unwrap();
    let mut buf = Vec::new();
    write_rows(&c.table, &mut buf).unwrap();
    assert!(buf.starts_with(b"method,scenario,mean,stdev\n"));
    assert_eq!(read_rows::<TableRow, _>(buf.as_slice()).unwrap(), c.table);
    let mut buf = Vec::new();
    write_rows(&c.raw, &mut buf).unwrap();
    assert_eq!(read_rows::<RawRow, _>(buf.as_slice()).unwrap(), c.raw);
    let dir = tempfile::tempdir().unwrap();
    c.write_dir(dir.path()).unwrap();
    assert_eq!(Comparison::read_dir(dir.path()).unwrap(), c);
    let boxes = String::from_utf8(read(&dir.path().join("box.csv"))).unwrap();
    assert!(boxes.starts_with("method,scenario,min,q1,median,q3,max\n"));
    assert_eq!(c.table[0].scenario, Scenario::Combined);
}

#[test]
fn quartiles_use_nearest_rank() {
    let s = Summary::from_values(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
    assert_eq!((s.q1, s.median, s.q3), (2.0, 4.0, 6.0));
    let s = Summary::from_values(&[10.0]).unwrap();
    assert_eq!((s.min, s.q1, s.median, s.q3, s.max, s.stdev), (10.0, 10.0, 10.0, 10.0, 10.0, 0.0));
}

#[test]
fn eval_without_checkpoints_reports_missing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    let err = pipeline::eval(&layout, &tiny_config(), Method::Dr, Scenario::Combined, None).unwrap_err();
    assert!(err.to_string().contains("missing checkpoint"));
    let err = pipeline::train_blend(&layout, &tiny_config(), EstimatorKind::Ukf, None).unwrap_err();
    assert!(err.to_string().contains("missing checkpoint"));
}

fn cli(args: &[&str]) -> i32 {
    cli::run(std::iter::once("blendsysid").chain(args.iter().copied()))
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(cli(&["selftest"]), 0);
    assert_eq!(cli(&["train-dr", "--bogus"]), 2);
    assert_eq!(cli(&["train-sub", "--impairment", "sideways"]), 2);
    assert_eq!(cli(&["eval", "--method", "ukf", "--scenario", "combined", "--out", out]), 1);
    assert_eq!(cli(&["eval", "--method", "kalman", "--scenario", "combined"]), 2);
    assert_eq!(cli(&["train-dr", "--config", "/nonexistent.json", "--out", out]), 1);
    assert_eq!(cli(&["report", "--out", out]), 1);
}

fn run_tiny_pipeline(root: &Path, cfg_path: &Path) {
    let out = root.to_str().unwrap();
    let c = cfg_path.to_str().unwrap();
    for imp in ["involuntary", "weak", "limited"] {
        assert_eq!(cli(&["train-sub", "--impairment", imp, "--config", c, "--out", out]), 0);
    }
    assert_eq!(cli(&["train-dr", "--config", c, "--out", out]), 0);
    assert_eq!(cli(&["train-blend", "--sysid", "ukf", "--config", c, "--out", out]), 0);
    assert_eq!(cli(&["train-blend", "--sysid", "spm", "--config", c, "--out", out, "--seed", "0"]), 0);
    for m in ["dr", "ukf", "spm"] {
        assert_eq!(cli(&["eval", "--method", m, "--scenario", "combined", "--config", c, "--out", out]), 0);
    }
    assert_eq!(cli(&["eval", "--method", "sub:weak", "--scenario", "weak", "--config", c, "--out", out]), 0);
    assert_eq!(cli(&["report", "--config", c, "--out", out]), 0);
}

const DETERMINISTIC_FILES: &[&str] = &[
    "sub/weak/curve.csv",
    "sub/weak/seed-1/policy.json",
    "dr/curve.csv",
    "blend/ukf/curve.csv",
    "blend/ukf/seed-0/estimates.csv",
    "blend/spm/seed-0/estimates.csv",
    "blend/spm/seed-0/bundle.json",
    "eval/ukf/combined/raw.csv",
    "eval/spm/combined/raw.csv",
    "eval/sub-weak/weak/raw.csv",
    "report/table.csv",
    "report/box.csv",
    "report/raw.csv",
];

#[test]
fn cli_pipeline_produces_all_outputs_and_is_reproducible() {
    let cfg_dir = tempfile::tempdir().unwrap();
    let cfg_path = cfg_dir.path().join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string(&tiny_config()).unwrap()).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_tiny_pipeline(a.path(), &cfg_path);
    run_tiny_pipeline(b.path(), &cfg_path);
    for f in DETERMINISTIC_FILES {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
    let table = Comparison::read_dir(&a.path().join("report")).unwrap();
    assert_eq!(table.table.len(), 4);
    assert_eq!(table.raw.len(), 4 * 6);
    let manifest: pipeline::Manifest =
        serde_json::from_slice(&read(&a.path().join("eval/ukf/combined/manifest.json"))).unwrap();
    assert_eq!(manifest.seed, Some(DEFAULT_EVAL_SEED));
    assert_eq!(manifest.config_hash, tiny_config().hash());
    let curve = String::from_utf8(read(&a.path().join("dr/curve.csv"))).unwrap();
    assert!(curve.starts_with("seed,timestep,avg_reward\n"));
    assert_eq!(curve.lines().count(), 1 + 2 * 2);
    let trace = String::from_utf8(read(&a.path().join("blend/spm/seed-0/estimates.csv"))).unwrap();
    assert!(trace.starts_with("episode,param_index,estimate,true\n"));
}

#[test]
fn evaluation_does_not_modify_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    let cfg = tiny_config();
    for imp in Scenario::SINGLE_IMPAIRMENTS {
        pipeline::train_sub(&layout, &cfg, imp, Some(0)).unwrap();
    }
    pipeline::train_blend(&layout, &cfg, EstimatorKind::Spm, Some(0)).unwrap();
    let bundle_path = Layout::seed_dir(&layout.blend_dir(EstimatorKind::Spm), 0).join("bundle.json");
    let sub_path = Layout::seed_dir(&layout.sub_dir(Scenario::Weak), 0).join("policy.json");
    let before = (pipeline::file_sha256(&bundle_path).unwrap(), pipeline::file_sha256(&sub_path).unwrap());
    let mut controller = pipeline::load_controller(&layout, &cfg, Method::Blend(EstimatorKind::Spm)).unwrap();
    let policy_before = match &controller {
        Controller::Blend { policy, .. } => policy.clone(),
        _ => unreachable!(),
    };
    evaluate(&mut controller, &Method::Blend(EstimatorKind::Spm), Scenario::Combined, &cfg.env, 5, 0).unwrap();
    match &controller {
        Controller::Blend { policy, .. } => assert_eq!(policy, &policy_before),
        _ => unreachable!(),
    }
    pipeline::eval(&layout, &cfg, Method::Blend(EstimatorKind::Spm), Scenario::Weak, None).unwrap();
    let after = (pipeline::file_sha256(&bundle_path).unwrap(), pipeline::file_sha256(&sub_path).unwrap());
    assert_eq!(before, after);
}

#[test]
fn config_file_partial_override() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    std::fs::write(&p, r#"{"eval_episodes": 3, "seeds": [5]}"#).unwrap();
    let cfg = ExperimentConfig::load(&p).unwrap();
    assert_eq!((cfg.eval_episodes, cfg.seeds.clone()), (3, vec![5]));
    assert_eq!(cfg.sub_ppo, PpoConfig::default());
    std::fs::write(&p, r#"{"seeds": []}"#).unwrap();
    assert!(ExperimentConfig::load(&p).is_err());
}
