//! Fast oracle checks run by the `selftest` subcommand.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::blending::blend_action;
use crate::env::{forward_kinematics, target_position, EnvConfig, Scenario};
use crate::nn::{Activation, Mlp};
use crate::rng;
use crate::sysid::{spm_loss, SpmBatch, Ukf, UkfScaling};

use super::eval::{evaluate, Controller, Summary};
use super::Method;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, worst: f64, tol: f64) -> Check {
    Check {
        name,
        passed: worst.is_finite() && worst < tol,
        detail: format!("worst {worst:.3e} (tol {tol:.0e})"),
    }
}

fn kinematics() -> Check {
    use std::f64::consts::FRAC_PI_2;
    let (l, o) = ([0.5, 0.4], [0.0, 0.0]);
    let cases = [
        (forward_kinematics([0.0, 0.0], l, o), [0.9, 0.0]),
        (forward_kinematics([FRAC_PI_2, 0.0], l, o), [0.0, 0.9]),
        (forward_kinematics([FRAC_PI_2, -FRAC_PI_2], l, o), [0.4, 0.5]),
        (target_position([0.0, 0.0], l, o), [0.7, 0.0]),
        (target_position([FRAC_PI_2, 0.0], l, o), [0.0, 0.7]),
        (target_position([FRAC_PI_2, -FRAC_PI_2], l, o), [0.2, 0.5]),
    ];
    let worst = cases
        .iter()
        .flat_map(|(a, b)| [(a[0] - b[0]).abs(), (a[1] - b[1]).abs()])
        .fold(0.0, f64::max);
    check("kinematics golden values", worst, 1e-12)
}

fn random_spd(n: usize, r: &mut rng::Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * 0.1
}

fn ukf_vs_kalman() -> Check {
    let mut r = rng::stream(7, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = r.random_range(1..=4);
        let (p, q, rr) = (random_spd(n, &mut r), random_spd(n, &mut r) * 0.01, random_spd(n, &mut r));
        let x = DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0));
        let z = DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0));
        let mut f = Ukf::new(x.clone(), p.clone(), q.clone(), rr.clone(), UkfScaling::default());
        if f.step(&z).is_err() {
            return check("ukf matches kalman", f64::INFINITY, 1e-8);
        }
        let pp = &p + &q;
        let k = &pp * (&pp + &rr).try_inverse().expect("spd");
        let xk = &x + &k * (&z - &x);
        let pk = (DMatrix::identity(n, n) - &k) * &pp;
        worst = worst.max((&f.mean - xk).amax()).max((&f.cov - pk).amax());
    }
    check("ukf matches kalman", worst, 1e-8)
}

fn mlp_gradients() -> Check {
    let mut r = rng::stream(8, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let net = Mlp::new(&[3, 5, 4, 2], 1.0, 1.0, &mut r);
        let x: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..2).map(|_| r.random_range(-1.0..1.0)).collect();
        let f = |m: &Mlp| -> f64 { m.predict(&x).expect("dims").iter().zip(&w).map(|(a, b)| a * b).sum() };
        let (_, cache) = net.forward(&x).expect("dims");
        let g = net.backward(&cache, &w).expect("fresh cache").flat();
        let theta = net.flat_params();
        let h = 1e-5;
        for i in 0..theta.len() {
            let mut m = net.clone();
            let mut t = theta.clone();
            t[i] += h;
            m.set_flat_params(&t).expect("len");
            let fp = f(&m);
            t[i] -= 2.0 * h;
            m.set_flat_params(&t).expect("len");
            let fd = (fp - f(&m)) / (2.0 * h);
            worst = worst.max((fd - g[i]).abs() / (fd.abs() + g[i].abs()).max(1e-6));
        }
    }
    check("mlp gradient vs finite differences", worst, 1e-4)
}

fn blend_identities() -> Check {
    let acts = vec![vec![0.3, -0.6], vec![0.9, 0.0], vec![-0.3, 0.6]];
    let mean = blend_action(&[1.0; 3], &acts).expect("shapes");
    let single = blend_action(&[3.0, 0.0, 0.0], &acts).expect("shapes");
    let null = blend_action(&[0.0; 3], &acts).expect("shapes");
    let worst = [
        (mean[0] - 0.3).abs(),
        mean[1].abs(),
        (single[0] - 0.3).abs(),
        (single[1] + 0.6).abs(),
        null[0].abs(),
        null[1].abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    check("blend identities", worst, 1e-12)
}

fn bce_uniform() -> Check {
    let classifier = Mlp::from_layers(vec![crate::nn::Layer::zeros(6, 4, Activation::Linear)]).expect("layer");
    let mut batch = SpmBatch::default();
    let mut r = rng::stream(9, 0);
    for _ in 0..8 {
        batch.inputs.push((0..6).map(|_| r.random_range(-1.0..1.0)).collect());
        batch.labels.push(std::array::from_fn(|_| f64::from(r.random_range(0..2u8))));
    }
    let (loss, _) = spm_loss(&classifier, &batch).expect("batch");
    check("spm bce at uniform prediction", (loss - std::f64::consts::LN_2).abs(), 1e-9)
}

fn quartiles() -> Check {
    let s = Summary::from_values(&[3.0, 1.0, 5.0, 2.0, 4.0]).expect("nonempty");
    check(
        "nearest-rank quartiles",
        [(s.q1 - 2.0).abs(), (s.median - 3.0).abs(), (s.q3 - 4.0).abs()]
            .into_iter()
            .fold(0.0, f64::max),
        1e-15,
    )
}

fn zero_action_force() -> Check {
    let cfg = EnvConfig::default();
    let worst = Scenario::EVALUATION
        .iter()
        .map(|&s| {
            evaluate(&mut Controller::Zero, &Method::Zero, s, &cfg, 5, 0)
                .map(|r| r.forces.iter().fold(0.0, |a: f64, f| a.max(f.abs())))
                .unwrap_or(f64::INFINITY)
        })
        .fold(0.0, f64::max);
    check("zero action applies no force", worst, 1e-300)
}

pub fn run() -> Vec<Check> {
    vec![
        kinematics(),
        ukf_vs_kalman(),
        mlp_gradients(),
        blend_identities(),
        bce_uniform(),
        quartiles(),
        zero_action_force(),
    ]
}
