use blendsysid_core::env::{EnvConfig, ParamBounds, ParamVector, N_PARAMS};
use blendsysid_core::nn::{Adam, Mlp};
use blendsysid_core::rng::{stream, Rng};
use blendsysid_core::sysid::*;
use blendsysid_core::Error;
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

fn random_spd(n: usize, rng: &mut Rng, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * floor
}

fn kalman(x: &DVector<f64>, p: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.len();
    let pp = p + q;
    let s = &pp + r;
    let k = &pp * s.try_inverse().unwrap();
    (x + &k * (z - x), (DMatrix::identity(n, n) - &k) * pp)
}

#[test]
fn ukf_tracks_kalman_over_sequences() {
    let mut rng = stream(400, 0);
    for _ in 0..30 {
        let n = rng.random_range(1..=6);
        let p = random_spd(n, &mut rng, 0.1);
        let q = random_spd(n, &mut rng, 0.01) * 1e-3;
        let r = random_spd(n, &mut rng, 0.05);
        let x0 = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let mut ukf = Ukf::new(x0.clone(), p.clone(), q.clone(), r.clone(), UkfScaling::default());
        let (mut x, mut pk) = (x0, p);
        for _ in 0..20 {
            let z = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            ukf.step(&z).unwrap();
            (x, pk) = kalman(&x, &pk, &q, &r, &z);
            assert!((&ukf.mean - &x).amax() < 1e-8);
            assert!((&ukf.cov - &pk).amax() < 1e-8);
        }
    }
}

#[test]
fn covariance_stays_spd_for_ten_thousand_steps() {
    let cfg = SysidConfig::default();
    let bounds = EnvConfig::default().bounds;
    let mut est = UkfEstimator::new(bounds, &cfg);
    let truth = ParamVector {
        noise_std: [0.1, 0.2],
        weakness: 0.7,
        range_limit: 0.6,
    };
    let mut rng = stream(401, 0);
    for k in 0..10_000 {
        let m = measure_params(&truth, &cfg.measurement_std, &mut rng);
        est.step(&m).unwrap();
        if k % 500 == 0 {
            assert!(est.filter.cov.clone().cholesky().is_some());
            let c = &est.filter.cov;
            assert!((c - c.transpose()).amax() < 1e-15);
        }
    }
    let eig = est.filter.cov.clone().symmetric_eigen().eigenvalues;
    assert!(eig.iter().all(|e| *e > 0.0));
    assert!(bounds.contains(&est.current()));
}

#[test]
fn estimates_converge_on_fixed_parameters() {
    let cfg = SysidConfig::default();
    let bounds = EnvConfig::default().bounds;
    let mut rng = stream(402, 0);
    for _ in 0..20 {
        let truth = bounds.sample_uniform(&mut rng);
        let mut est = UkfEstimator::new(bounds, &cfg);
        for _ in 0..50 {
            est.step(&measure_params(&truth, &cfg.measurement_std, &mut rng)).unwrap();
        }
        let (e, t) = (est.current().to_array(), truth.to_array());
        assert!((e[0] - t[0]).abs() < 0.02 && (e[1] - t[1]).abs() < 0.02);
        assert!((e[2] - t[2]).abs() < 0.05 && (e[3] - t[3]).abs() < 0.05);
    }
}

#[test]
fn posterior_variance_shrinks_like_one_over_n() {
    // Scalar closed form without process noise: 1/P_n = 1/P_0 + n/R.
    let (p0, r) = (0.5, 0.04);
    let mut ukf = Ukf::new(
        DVector::from_element(1, 0.0),
        DMatrix::from_element(1, 1, p0),
        DMatrix::zeros(1, 1),
        DMatrix::from_element(1, 1, r),
        UkfScaling::default(),
    );
    for n in 1..=100 {
        ukf.step(&DVector::from_element(1, 0.3)).unwrap();
        let want = 1.0 / (1.0 / p0 + n as f64 / r);
        assert!((ukf.cov[(0, 0)] - want).abs() < 1e-12);
    }
}

#[test]
fn identify_dispatches_on_the_estimator_kind() {
    let env = EnvConfig::default();
    let cfg = SysidConfig::default();
    let truth = ParamVector {
        noise_std: [0.05, 0.3],
        weakness: 0.4,
        range_limit: 0.9,
    };
    for kind in EstimatorKind::ALL {
        let mut e = Estimator::new(kind, env.bounds, &cfg, 0);
        let est = e.identify(&truth, &env, &cfg, true, &mut stream(403, 0)).unwrap();
        assert!(env.bounds.contains(&est));
        assert_eq!(e.current(), est);
        if kind == EstimatorKind::Perfect {
            assert_eq!(est, truth);
        }
    }
    let mut u = Estimator::new(EstimatorKind::Ukf, env.bounds, &cfg, 0);
    let r = u.estimate(EstimateContext::Truth(&truth), &mut stream(0, 0));
    assert!(matches!(r, Err(Error::ContextMismatch(_))));
}

#[test]
fn measurement_mean_and_spread() {
    let truth = ParamVector {
        noise_std: [0.1, 0.1],
        weakness: 0.5,
        range_limit: 0.5,
    };
    let std = [0.02, 0.02, 0.05, 0.05];
    let mut rng = stream(404, 0);
    let n = 50_000;
    let mut sum = [0.0; N_PARAMS];
    let mut sq = [0.0; N_PARAMS];
    for _ in 0..n {
        let m = measure_params(&truth, &std, &mut rng);
        for i in 0..N_PARAMS {
            sum[i] += m.z[i];
            sq[i] += m.z[i] * m.z[i];
        }
    }
    let t = truth.to_array();
    for i in 0..N_PARAMS {
        let mean = sum[i] / n as f64;
        let sd = (sq[i] / n as f64 - mean * mean).sqrt();
        assert!((mean - t[i]).abs() < 4.0 * std[i] / (n as f64).sqrt());
        assert!((sd - std[i]).abs() < 0.02 * std[i]);
    }
}

fn oracle_search(bounds: &ParamBounds, truth: &ParamVector, eta: f64, iters: usize) -> (ParamVector, usize) {
    let mut g = bounds.midpoint();
    let tol: Vec<f64> = bounds.widths().iter().map(|w| eta * w / 2.0).collect();
    let mut first_inside = None;
    for k in 0..iters {
        let inside = g.to_array().iter().zip(truth.to_array()).zip(&tol).all(|((a, b), t)| (a - b).abs() <= *t);
        if inside && first_inside.is_none() {
            first_inside = Some(k);
        }
        g = spm_search_update(&g, &spm_labels(&g, truth), bounds, eta);
    }
    (g, first_inside.unwrap_or(usize::MAX))
}

#[test]
fn oracle_search_converges_and_stays_close() {
    let bounds = EnvConfig::default().bounds;
    let mut rng = stream(405, 0);
    for _ in 0..200 {
        let truth = bounds.sample_uniform(&mut rng);
        let (g, k) = oracle_search(&bounds, &truth, 0.3, 50);
        assert!(k <= 50);
        for ((a, b), w) in g.to_array().iter().zip(truth.to_array()).zip(bounds.widths()) {
            assert!((a - b).abs() <= 0.15 * w + 1e-12);
        }
    }
}

fn synthetic_window(truth: &ParamVector, bounds: &ParamBounds, len: usize, rng: &mut Rng) -> Vec<f64> {
    let n = bounds.normalize(&truth.to_array());
    (0..len).map(|k| n[k % N_PARAMS] + 0.01 * rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn classifier_learns_a_separable_problem() {
    let bounds = EnvConfig::default().bounds;
    let mut rng = stream(406, 0);
    let window_len = 16;
    let mut net = Mlp::new(&[window_len + N_PARAMS, 32, 32, N_PARAMS], 1.0, 0.01, &mut rng);
    let mut adam = Adam::new(net.num_params());
    let mut losses = Vec::new();
    for _ in 0..300 {
        let mut batch = SpmBatch::default();
        for _ in 0..64 {
            let truth = bounds.sample_uniform(&mut rng);
            let guess = bounds.sample_uniform(&mut rng);
            let w = synthetic_window(&truth, &bounds, window_len, &mut rng);
            batch.push(&w, &guess, &truth, &bounds);
        }
        losses.push(spm_train_step(&mut net, &mut adam, &batch, 3e-3).unwrap());
    }
    assert!(losses[290..].iter().sum::<f64>() < 0.5 * losses[..10].iter().sum::<f64>());
    let (mut right, mut total) = (0, 0);
    while total < 2000 {
        let truth = bounds.sample_uniform(&mut rng);
        let guess = bounds.sample_uniform(&mut rng);
        let nt = bounds.normalize(&truth.to_array());
        let ng = bounds.normalize(&guess.to_array());
        let w = synthetic_window(&truth, &bounds, window_len, &mut rng);
        let p = spm_predict(&net, &w, &guess, &bounds).unwrap();
        for i in 0..N_PARAMS {
            if (nt[i] - ng[i]).abs() < 0.1 {
                continue;
            }
            right += usize::from((p[i] > 0.5) == (ng[i] > nt[i]));
            total += 1;
        }
    }
    assert!(right as f64 / total as f64 > 0.9, "{right}/{total}");
}

#[test]
fn fifo_buffer_is_bounded_and_learning_can_be_disabled() {
    let env = EnvConfig::default();
    let cfg = SysidConfig {
        spm_buffer: 3,
        spm_train_steps: 1,
        spm_guesses_per_window: 2,
        ..SysidConfig::default()
    };
    let mut rng = stream(407, 0);
    let mut spm = SpmEstimator::new(env.bounds, &cfg, &mut rng);
    let truth = env.bounds.midpoint();
    let window = probe_window(&env, &truth, cfg.spm_window, stream(1, 1)).unwrap();
    assert_eq!(window.len(), cfg.spm_window * WINDOW_STEP_DIM);
    assert_eq!(spm_input(&window, &truth, &env.bounds).len(), 164);
    for _ in 0..5 {
        assert!(spm.learn(&window, &truth, &mut rng).unwrap().is_some());
    }
    assert_eq!(spm.buffered_windows(), 3);
    let frozen = spm.classifier.clone();
    spm.learning = false;
    assert!(spm.learn(&window, &truth, &mut rng).unwrap().is_none());
    assert_eq!(spm.classifier, frozen);
}

#[test]
fn estimate_trace_rows() {
    let e = ParamVector {
        noise_std: [0.1, 0.2],
        weakness: 0.3,
        range_limit: 0.4,
    };
    let rows = estimate_records(7, &e, &ParamVector::neutral());
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[2].estimate, 0.3);
    assert_eq!(rows[3].truth, 1.0);
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).unwrap();
    }
    let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
    assert!(text.starts_with("episode,param_index,estimate,true\n"));
}
