use blendsysid_core::blending::*;
use blendsysid_core::env::{EnvConfig, ParamVector, Scenario};
use blendsysid_core::nn::{Checkpoint, GaussianPolicy};
use blendsysid_core::ppo::{PpoConfig, RolloutEnv};
use blendsysid_core::rng::{stream, Rng};
use blendsysid_core::sysid::{Estimator, EstimatorKind, SysidConfig};
use rand::Rng as _;
use sha2::{Digest, Sha256};

fn random_actions(n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn subs(seed: u64) -> SubPolicySet {
    let mut rng = stream(seed, 0);
    SubPolicySet::new(
        ["involuntary", "weak", "limited"]
            .iter()
            .map(|n| (n.to_string(), GaussianPolicy::new(14, 2, &mut rng)))
            .collect(),
    )
    .unwrap()
}

fn hash(p: &GaussianPolicy) -> Vec<u8> {
    Sha256::digest(Checkpoint::from_policy(p, None).to_json().unwrap().as_bytes()).to_vec()
}

#[test]
fn equal_unit_weights_give_the_mean_action() {
    let mut rng = stream(300, 0);
    for _ in 0..100 {
        let a = random_actions(3, &mut rng);
        let b = blend_action(&[1.0; 3], &a).unwrap();
        for d in 0..2 {
            let mean = (a[0][d] + a[1][d] + a[2][d]) / 3.0;
            assert!((b[d] - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn unclamped_blend_is_linear_in_the_weights() {
    let mut rng = stream(301, 0);
    for _ in 0..100 {
        let a = random_actions(3, &mut rng);
        let w: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let c = rng.random_range(-3.0..3.0);
        let bw = blend_action_unclamped(&w, &a).unwrap();
        let bv = blend_action_unclamped(&v, &a).unwrap();
        let scaled: Vec<f64> = w.iter().map(|x| c * x).collect();
        let sum: Vec<f64> = w.iter().zip(&v).map(|(x, y)| x + y).collect();
        let bs = blend_action_unclamped(&scaled, &a).unwrap();
        let bsum = blend_action_unclamped(&sum, &a).unwrap();
        for d in 0..2 {
            assert!((bs[d] - c * bw[d]).abs() < 1e-12);
            assert!((bsum[d] - bw[d] - bv[d]).abs() < 1e-12);
        }
    }
}

#[test]
fn null_weights_give_zero_and_large_weights_saturate() {
    let mut rng = stream(302, 0);
    let a = random_actions(3, &mut rng);
    assert_eq!(blend_action(&[0.0; 3], &a).unwrap(), vec![0.0, 0.0]);
    let big = blend_action(&[1e6, 1e6, 1e6], &a).unwrap();
    assert!(big.iter().all(|v| v.abs() <= 1.0));
}

#[test]
fn permuting_weights_and_policies_together_is_invariant() {
    let mut rng = stream(303, 0);
    let a = random_actions(3, &mut rng);
    let w = [0.3, -1.2, 2.0];
    let b = blend_action(&w, &a).unwrap();
    let a2 = vec![a[2].clone(), a[0].clone(), a[1].clone()];
    let b2 = blend_action(&[w[2], w[0], w[1]], &a2).unwrap();
    for d in 0..2 {
        assert!((b[d] - b2[d]).abs() < 1e-15);
    }
}

#[test]
fn single_sub_policy_with_unit_weight_is_that_policy() {
    let mut rng = stream(304, 0);
    let p = GaussianPolicy::new(14, 2, &mut rng);
    let set = SubPolicySet::new(vec![("only".into(), p.clone())]).unwrap();
    let bounds = EnvConfig::default().bounds;
    for _ in 0..20 {
        let obs: Vec<f64> = (0..14).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = blend_action(&[1.0], &set.actions(&obs).unwrap()).unwrap();
        let want = p.mean(&obs).unwrap();
        for d in 0..2 {
            assert!((a[d] - want[d].clamp(-1.0, 1.0)).abs() < 1e-15);
        }
    }
    let blend = BlendPolicy::new(set, bounds, &mut rng);
    assert_eq!(blend.gate.input_dim(), 4);
    assert_eq!(blend.gate.action_dim(), 1);
}

#[test]
fn gate_sees_only_the_estimate() {
    let mut rng = stream(305, 0);
    let bounds = EnvConfig::default().bounds;
    let blend = BlendPolicy::new(subs(1), bounds, &mut rng);
    assert_eq!(blend.gate.input_dim(), 4);
    let estimate = ParamVector {
        noise_std: [0.1, 0.05],
        weakness: 0.6,
        range_limit: 0.8,
    };
    let clean: Vec<f64> = vec![0.0; 14];
    for _ in 0..50 {
        let garbage: Vec<f64> = (0..14).map(|_| rng.random_range(-1e3..1e3)).collect();
        let s1 = blend.blend_step(&clean, &estimate, &mut stream(7, 7)).unwrap();
        let s2 = blend.blend_step(&garbage, &estimate, &mut stream(7, 7)).unwrap();
        assert_eq!(s1.weights, s2.weights);
        assert_eq!(s1.log_prob, s2.log_prob);
    }
    let w1 = blend.mean_weights(&estimate).unwrap();
    let other = ParamVector {
        weakness: 0.3,
        ..estimate
    };
    assert_ne!(w1, blend.mean_weights(&other).unwrap());
    assert_eq!(blend.gate_input(&bounds.lo), [-1.0; 4]);
    assert_eq!(blend.gate_input(&bounds.hi), [1.0; 4]);
}

#[test]
fn blend_env_observation_is_the_normalized_estimate() {
    let cfg = EnvConfig::default();
    let set = subs(2);
    let est = Estimator::new(EstimatorKind::Perfect, cfg.bounds, &SysidConfig::default(), 0);
    let mut env = BlendEnv::new(cfg.clone(), Scenario::Combined, &set, est, SysidConfig::default(), 5);
    assert_eq!((env.obs_dim(), env.act_dim()), (4, 3));
    let obs = env.reset().unwrap();
    let truth = *env.true_params();
    assert_eq!(obs, cfg.bounds.normalize(&truth.to_array()).to_vec());
    for _ in 0..cfg.horizon {
        let tr = env.step(&[0.5, 1.0, -0.2]).unwrap();
        assert_eq!(tr.observation, obs);
    }
    assert_eq!(env.trace.len(), 4);
    assert!(env.trace.iter().all(|r| r.estimate == r.truth));
}

#[test]
fn training_the_gate_leaves_sub_policies_frozen_and_is_deterministic() {
    let cfg = EnvConfig::default();
    let set = subs(3);
    let before: Vec<Vec<u8>> = set.policies().iter().map(hash).collect();
    let ppo = PpoConfig {
        total_steps: 800,
        rollout_len: 400,
        minibatch: 100,
        epochs: 2,
        ..PpoConfig::default()
    };
    let sysid = SysidConfig::default();
    let run = |seed| train_blend(set.clone(), EstimatorKind::Ukf, Scenario::Combined, &cfg, &ppo, &sysid, seed).unwrap();
    let a = run(0);
    let b = run(0);
    let after: Vec<Vec<u8>> = a.policy.subs.policies().iter().map(hash).collect();
    assert_eq!(before, after);
    assert_eq!(set.policies().iter().map(hash).collect::<Vec<_>>(), before);
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.policy, b.policy);
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.trace.len(), 4 * 4);
    assert_ne!(a.final_policy.gate, GaussianPolicy::new(4, 3, &mut stream(0, 10)));
}

#[test]
fn dr_and_blend_state_spaces_differ() {
    let mut rng = stream(306, 0);
    let dr = GaussianPolicy::new(14, 2, &mut rng);
    let blend = BlendPolicy::new(subs(4), EnvConfig::default().bounds, &mut rng);
    assert_eq!(dr.input_dim(), 14);
    assert_eq!(blend.gate.input_dim(), 4);
    assert!(dr.mean(&[0.0; 4]).is_err());
}
