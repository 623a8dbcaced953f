//! Parameter estimators feeding the blending gate.
//!
//! * [`Ukf`]: unscented Kalman filter over noisy direct measurements of the
//!   impairment vector (identity dynamics and measurement model).
//! * [`SpmEstimator`]: a search parameter model. A classifier predicts, from a
//!   short observation/action window and a candidate guess, whether each
//!   guessed parameter is above the true one; the guess is pushed against
//!   those probabilities until the classifier is undecided.
//! * [`Estimator::Perfect`]: hands the true parameters through.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, ImpairedArmEnv, ParamBounds, ParamVector, ACT_DIM, N_PARAMS, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{Adam, Mlp, HIDDEN};
use crate::rng::{self, Rng};

/// Length of one window step: observation followed by the robot action.
pub const WINDOW_STEP_DIM: usize = OBS_DIM + ACT_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UkfScaling {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UkfScaling {
    fn default() -> Self {
        Self {
            alpha: 1e-1,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPoints {
    pub points: Vec<DVector<f64>>,
    pub mean_weights: Vec<f64>,
    pub cov_weights: Vec<f64>,
}

/// Scaled unscented sigma points `mean, mean +- cols(chol((n + lambda) cov))`.
pub fn sigma_points(mean: &DVector<f64>, cov: &DMatrix<f64>, s: UkfScaling) -> Result<SigmaPoints> {
    let n = mean.len();
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: cov.nrows(),
        });
    }
    let nf = n as f64;
    let lambda = s.alpha * s.alpha * (nf + s.kappa) - nf;
    let scaled = cov * (nf + lambda);
    let chol = scaled.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(mean.clone());
    for i in 0..n {
        points.push(mean + l.column(i));
    }
    for i in 0..n {
        points.push(mean - l.column(i));
    }
    let w0m = lambda / (nf + lambda);
    let wi = 1.0 / (2.0 * (nf + lambda));
    let mut mean_weights = vec![wi; 2 * n + 1];
    let mut cov_weights = vec![wi; 2 * n + 1];
    mean_weights[0] = w0m;
    cov_weights[0] = w0m + (1.0 - s.alpha * s.alpha + s.beta);
    Ok(SigmaPoints {
        points,
        mean_weights,
        cov_weights,
    })
}

/// Unscented Kalman filter with identity process and measurement models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ukf {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub process_noise: DMatrix<f64>,
    pub measurement_noise: DMatrix<f64>,
    pub scaling: UkfScaling,
    /// Optional box the posterior mean is clipped into.
    pub bounds: Option<(DVector<f64>, DVector<f64>)>,
}

impl Ukf {
    pub fn new(
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        process_noise: DMatrix<f64>,
        measurement_noise: DMatrix<f64>,
        scaling: UkfScaling,
    ) -> Self {
        Self {
            mean,
            cov,
            process_noise,
            measurement_noise,
            scaling,
            bounds: None,
        }
    }

    pub fn with_bounds(mut self, lo: DVector<f64>, hi: DVector<f64>) -> Self {
        self.bounds = Some((lo, hi));
        self
    }

    pub fn predict(&mut self) {
        self.cov += &self.process_noise;
    }

    pub fn update(&mut self, z: &DVector<f64>) -> Result<()> {
        let n = self.mean.len();
        if z.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: z.len(),
            });
        }
        let sp = sigma_points(&self.mean, &self.cov, self.scaling)?;
        let x_hat = weighted_mean(&sp.points, &sp.mean_weights);
        // Measurement model is the identity, so the propagated points are the sigma points.
        let z_points = &sp.points;
        let z_hat = weighted_mean(z_points, &sp.mean_weights);
        let mut pzz = self.measurement_noise.clone();
        let mut pxz = DMatrix::zeros(n, n);
        for ((x, zp), w) in sp.points.iter().zip(z_points).zip(&sp.cov_weights) {
            let dz = zp - &z_hat;
            let dx = x - &x_hat;
            pzz += *w * &dz * dz.transpose();
            pxz += *w * &dx * dz.transpose();
        }
        let pzz_inv = pzz.clone().cholesky().ok_or(Error::NotPositiveDefinite)?.inverse();
        let gain = &pxz * pzz_inv;
        self.mean = &x_hat + &gain * (z - &z_hat);
        let cov = &self.cov - &gain * pzz * gain.transpose();
        self.cov = 0.5 * (&cov + cov.transpose());
        if self.cov.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        if let Some((lo, hi)) = &self.bounds {
            for i in 0..n {
                self.mean[i] = self.mean[i].clamp(lo[i], hi[i]);
            }
        }
        Ok(())
    }

    pub fn step(&mut self, z: &DVector<f64>) -> Result<()> {
        self.predict();
        self.update(z)
    }
}

fn weighted_mean(points: &[DVector<f64>], weights: &[f64]) -> DVector<f64> {
    let mut m = DVector::zeros(points[0].len());
    for (p, w) in points.iter().zip(weights) {
        m += *w * p;
    }
    m
}

/// Noisy direct reading of the impairment vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub z: [f64; N_PARAMS],
}

/// `z = truth + eps`, `eps ~ N(0, diag(std^2))`.
pub fn measure_params(truth: &ParamVector, std: &[f64; N_PARAMS], rng: &mut Rng) -> Measurement {
    let t = truth.to_array();
    Measurement {
        z: std::array::from_fn(|i| {
            let e: f64 = StandardNormal.sample(rng);
            t[i] + std[i] * e
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SysidConfig {
    pub process_noise: f64,
    /// Measurement noise standard deviations, one per parameter.
    pub measurement_std: [f64; N_PARAMS],
    pub scaling: UkfScaling,
    /// Measurements assimilated each time a new system is identified.
    pub measurements_per_episode: usize,
    pub spm_step_size: f64,
    pub spm_window: usize,
    pub spm_buffer: usize,
    pub spm_search_iters: usize,
    pub spm_train_steps: usize,
    pub spm_guesses_per_window: usize,
    pub spm_learning_rate: f64,
}

impl Default for SysidConfig {
    fn default() -> Self {
        Self {
            process_noise: 1e-6,
            measurement_std: [0.02, 0.02, 0.05, 0.05],
            scaling: UkfScaling::default(),
            measurements_per_episode: 1,
            spm_step_size: 0.3,
            spm_window: 10,
            spm_buffer: 200,
            spm_search_iters: 20,
            spm_train_steps: 4,
            spm_guesses_per_window: 8,
            spm_learning_rate: 1e-3,
        }
    }
}

/// UKF wrapped around the parameter vector, with a broad prior over the bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UkfEstimator {
    pub filter: Ukf,
    pub bounds: ParamBounds,
}

impl UkfEstimator {
    pub fn new(bounds: ParamBounds, config: &SysidConfig) -> Self {
        let (mean, cov) = Self::prior(&bounds);
        let q = DMatrix::identity(N_PARAMS, N_PARAMS) * config.process_noise;
        let r = DMatrix::from_diagonal(&DVector::from_iterator(
            N_PARAMS,
            config.measurement_std.iter().map(|s| s * s),
        ));
        let filter = Ukf::new(mean, cov, q, r, config.scaling).with_bounds(
            DVector::from_row_slice(&bounds.lo_array()),
            DVector::from_row_slice(&bounds.hi_array()),
        );
        Self { filter, bounds }
    }

    /// Midpoint mean; standard deviation of half the bound width.
    fn prior(bounds: &ParamBounds) -> (DVector<f64>, DMatrix<f64>) {
        let mean = DVector::from_row_slice(&bounds.midpoint().to_array());
        let var = DVector::from_iterator(N_PARAMS, bounds.widths().iter().map(|w| (0.5 * w).powi(2).max(1e-12)));
        (mean, DMatrix::from_diagonal(&var))
    }

    pub fn reset(&mut self) {
        let (m, c) = Self::prior(&self.bounds);
        self.filter.mean = m;
        self.filter.cov = c;
    }

    pub fn step(&mut self, m: &Measurement) -> Result<ParamVector> {
        self.filter.step(&DVector::from_row_slice(&m.z))?;
        Ok(self.current())
    }

    pub fn current(&self) -> ParamVector {
        ParamVector::from_slice(self.filter.mean.as_slice()).expect("parameter dimension")
    }
}

/// Classifier input: flattened window followed by the guess, normalized to `[-1, 1]`.
pub fn spm_input(window: &[f64], guess: &ParamVector, bounds: &ParamBounds) -> Vec<f64> {
    let mut x = Vec::with_capacity(window.len() + N_PARAMS);
    x.extend_from_slice(window);
    x.extend_from_slice(&bounds.normalize(&guess.to_array()));
    x
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Per-parameter probability that the guess exceeds the truth.
pub fn spm_predict(classifier: &Mlp, window: &[f64], guess: &ParamVector, bounds: &ParamBounds) -> Result<[f64; N_PARAMS]> {
    let logits = classifier.predict(&spm_input(window, guess, bounds))?;
    if logits.len() != N_PARAMS {
        return Err(Error::DimensionMismatch {
            expected: N_PARAMS,
            actual: logits.len(),
        });
    }
    Ok(std::array::from_fn(|i| sigmoid(logits[i])))
}

/// `1` if guess > truth, `0` if below, `0.5` within `1e-9`.
pub fn spm_labels(guess: &ParamVector, truth: &ParamVector) -> [f64; N_PARAMS] {
    let (g, t) = (guess.to_array(), truth.to_array());
    std::array::from_fn(|i| {
        let d = g[i] - t[i];
        if d.abs() <= 1e-9 {
            0.5
        } else if d > 0.0 {
            1.0
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpmBatch {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<[f64; N_PARAMS]>,
}

impl SpmBatch {
    pub fn push(&mut self, window: &[f64], guess: &ParamVector, truth: &ParamVector, bounds: &ParamBounds) {
        self.inputs.push(spm_input(window, guess, bounds));
        self.labels.push(spm_labels(guess, truth));
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Mean per-parameter binary cross-entropy and its gradient for one batch.
pub fn spm_loss(classifier: &Mlp, batch: &SpmBatch) -> Result<(f64, crate::nn::MlpGrads)> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty SPM batch".into()));
    }
    let scale = 1.0 / (batch.len() * N_PARAMS) as f64;
    let mut grads = crate::nn::MlpGrads::zeros_like(classifier);
    let mut loss = 0.0;
    for (x, y) in batch.inputs.iter().zip(&batch.labels) {
        let (logits, cache) = classifier.forward(x)?;
        let mut g = [0.0; N_PARAMS];
        for i in 0..N_PARAMS {
            let l = logits[i];
            loss += y[i] * softplus(-l) + (1.0 - y[i]) * softplus(l);
            g[i] = (sigmoid(l) - y[i]) * scale;
        }
        classifier.backward_into(&cache, &g, &mut grads)?;
    }
    Ok((loss * scale, grads))
}

/// One Adam step on the batch; returns the loss before the step.
pub fn spm_train_step(classifier: &mut Mlp, adam: &mut Adam, batch: &SpmBatch, lr: f64) -> Result<f64> {
    let (loss, grads) = spm_loss(classifier, batch)?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite("SPM classifier loss".into()));
    }
    adam.step_mlp(classifier, &grads, None, lr);
    Ok(loss)
}

/// Moves each guessed parameter against the classifier's verdict:
/// `g + eta (0.5 - p) (hi - lo)`, clipped to the bounds.
pub fn spm_search_update(guess: &ParamVector, probs: &[f64; N_PARAMS], bounds: &ParamBounds, eta: f64) -> ParamVector {
    let (g, w) = (guess.to_array(), bounds.widths());
    let next = std::array::from_fn(|i| g[i] + eta * (0.5 - probs[i]) * w[i]);
    ParamVector::from_array(bounds.clip_array(next))
}

/// Flattened `(observation, action)` window of a probe run on the given
/// system with the robot held still.
pub fn probe_window(config: &EnvConfig, params: &ParamVector, len: usize, rng: Rng) -> Result<Vec<f64>> {
    let mut env = ImpairedArmEnv::new(config.clone(), *params, rng);
    let action = [0.0; ACT_DIM];
    let mut window = Vec::with_capacity(len * WINDOW_STEP_DIM);
    for _ in 0..len.min(config.horizon) {
        let r = env.step(&action)?;
        window.extend_from_slice(&r.observation);
        window.extend_from_slice(&action);
    }
    Ok(window)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LabeledWindow {
    window: Vec<f64>,
    truth: ParamVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpmEstimator {
    pub classifier: Mlp,
    optimizer: Adam,
    pub guess: ParamVector,
    pub bounds: ParamBounds,
    pub step_size: f64,
    pub window_len: usize,
    buffer: VecDeque<LabeledWindow>,
    buffer_cap: usize,
    train_steps: usize,
    guesses_per_window: usize,
    learning_rate: f64,
    /// When false, labeled windows are ignored (evaluation on a "real" system).
    pub learning: bool,
}

impl SpmEstimator {
    pub fn new(bounds: ParamBounds, config: &SysidConfig, rng: &mut Rng) -> Self {
        let input = config.spm_window * WINDOW_STEP_DIM + N_PARAMS;
        let classifier = Mlp::new(&[input, HIDDEN[0], HIDDEN[1], N_PARAMS], 1.0, 0.01, rng);
        Self::with_classifier(classifier, bounds, config)
    }

    pub fn with_classifier(classifier: Mlp, bounds: ParamBounds, config: &SysidConfig) -> Self {
        Self {
            optimizer: Adam::new(classifier.num_params()),
            classifier,
            guess: bounds.midpoint(),
            bounds,
            step_size: config.spm_step_size,
            window_len: config.spm_window,
            buffer: VecDeque::new(),
            buffer_cap: config.spm_buffer,
            train_steps: config.spm_train_steps,
            guesses_per_window: config.spm_guesses_per_window,
            learning_rate: config.spm_learning_rate,
            learning: true,
        }
    }

    pub fn reset(&mut self) {
        self.guess = self.bounds.midpoint();
    }

    pub fn buffered_windows(&self) -> usize {
        self.buffer.len()
    }

    /// Stores a labeled window and retrains the classifier on the FIFO buffer
    /// with freshly drawn guesses.
    pub fn learn(&mut self, window: &[f64], truth: &ParamVector, rng: &mut Rng) -> Result<Option<f64>> {
        if !self.learning {
            return Ok(None);
        }
        if self.buffer.len() == self.buffer_cap {
            self.buffer.pop_front();
        }
        self.buffer.push_back(LabeledWindow {
            window: window.to_vec(),
            truth: *truth,
        });
        let mut last = None;
        for _ in 0..self.train_steps {
            let mut batch = SpmBatch::default();
            for lw in &self.buffer {
                for _ in 0..self.guesses_per_window {
                    let g = self.bounds.sample_uniform(rng);
                    batch.push(&lw.window, &g, &lw.truth, &self.bounds);
                }
            }
            last = Some(spm_train_step(&mut self.classifier, &mut self.optimizer, &batch, self.learning_rate)?);
        }
        Ok(last)
    }

    /// One predict-and-move iteration of the guess search.
    pub fn search_step(&mut self, window: &[f64]) -> Result<ParamVector> {
        let p = spm_predict(&self.classifier, window, &self.guess, &self.bounds)?;
        self.guess = spm_search_update(&self.guess, &p, &self.bounds, self.step_size);
        Ok(self.guess)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Ukf,
    Spm,
    Perfect,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::Ukf, EstimatorKind::Spm, EstimatorKind::Perfect];

    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Ukf => "ukf",
            EstimatorKind::Spm => "spm",
            EstimatorKind::Perfect => "perfect",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ukf" => Ok(EstimatorKind::Ukf),
            "spm" => Ok(EstimatorKind::Spm),
            "perfect" => Ok(EstimatorKind::Perfect),
            other => Err(Error::UnknownEstimator(other.to_string())),
        }
    }
}

/// What an estimator is allowed to see for one refinement.
#[derive(Debug, Clone, Copy)]
pub enum EstimateContext<'a> {
    Measurement(&'a Measurement),
    /// Trajectory window, with the generating parameters when they are known (simulation).
    Window {
        window: &'a [f64],
        truth: Option<&'a ParamVector>,
    },
    Truth(&'a ParamVector),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Estimator {
    Ukf(UkfEstimator),
    Spm(Box<SpmEstimator>),
    Perfect { last: ParamVector },
}

impl Estimator {
    pub fn new(kind: EstimatorKind, bounds: ParamBounds, config: &SysidConfig, seed: u64) -> Self {
        match kind {
            EstimatorKind::Ukf => Estimator::Ukf(UkfEstimator::new(bounds, config)),
            EstimatorKind::Spm => {
                let mut rng = rng::stream(seed, 30);
                Estimator::Spm(Box::new(SpmEstimator::new(bounds, config, &mut rng)))
            }
            EstimatorKind::Perfect => Estimator::Perfect {
                last: bounds.midpoint(),
            },
        }
    }

    pub fn kind(&self) -> EstimatorKind {
        match self {
            Estimator::Ukf(_) => EstimatorKind::Ukf,
            Estimator::Spm(_) => EstimatorKind::Spm,
            Estimator::Perfect { .. } => EstimatorKind::Perfect,
        }
    }

    pub fn current(&self) -> ParamVector {
        match self {
            Estimator::Ukf(u) => u.current(),
            Estimator::Spm(s) => s.guess,
            Estimator::Perfect { last } => *last,
        }
    }

    /// Forgets the identified system, keeping learned models.
    pub fn reset(&mut self) {
        match self {
            Estimator::Ukf(u) => u.reset(),
            Estimator::Spm(s) => s.reset(),
            Estimator::Perfect { .. } => {}
        }
    }

    /// Single refinement from `ctx`; returns the updated estimate.
    pub fn estimate(&mut self, ctx: EstimateContext<'_>, rng: &mut Rng) -> Result<ParamVector> {
        match (self, ctx) {
            (Estimator::Ukf(u), EstimateContext::Measurement(m)) => u.step(m),
            (Estimator::Spm(s), EstimateContext::Window { window, truth }) => {
                if let Some(t) = truth {
                    s.learn(window, t, rng)?;
                }
                s.search_step(window)
            }
            (Estimator::Perfect { last }, EstimateContext::Truth(t)) => {
                *last = *t;
                Ok(*t)
            }
            (e, _) => Err(Error::ContextMismatch(e.kind().as_str())),
        }
    }

    /// Identifies a freshly drawn system before an episode on it.
    ///
    /// The UKF restarts from its prior and assimilates
    /// `measurements_per_episode` readings; the SPM restarts its guess at the
    /// bounds midpoint, optionally learns from the labeled probe window, and
    /// runs `spm_search_iters` search iterations on it.
    pub fn identify(
        &mut self,
        truth: &ParamVector,
        env_config: &EnvConfig,
        config: &SysidConfig,
        learn: bool,
        rng: &mut Rng,
    ) -> Result<ParamVector> {
        self.reset();
        match self.kind() {
            EstimatorKind::Ukf => {
                for _ in 0..config.measurements_per_episode.max(1) {
                    let m = measure_params(truth, &config.measurement_std, rng);
                    self.estimate(EstimateContext::Measurement(&m), rng)?;
                }
            }
            EstimatorKind::Spm => {
                let probe_rng = rng::stream(rng.random(), 0);
                let window = probe_window(env_config, truth, config.spm_window, probe_rng)?;
                let labeled = learn.then_some(truth);
                self.estimate(EstimateContext::Window { window: &window, truth: labeled }, rng)?;
                for _ in 1..config.spm_search_iters.max(1) {
                    self.estimate(EstimateContext::Window { window: &window, truth: None }, rng)?;
                }
            }
            EstimatorKind::Perfect => {
                self.estimate(EstimateContext::Truth(truth), rng)?;
            }
        }
        Ok(self.current())
    }

    pub fn set_learning(&mut self, on: bool) {
        if let Estimator::Spm(s) = self {
            s.learning = on;
        }
    }
}

/// One row of an estimate trace CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub episode: usize,
    pub param_index: usize,
    pub estimate: f64,
    #[serde(rename = "true")]
    pub truth: f64,
}

pub fn estimate_records(episode: usize, estimate: &ParamVector, truth: &ParamVector) -> Vec<EstimateRecord> {
    let (e, t) = (estimate.to_array(), truth.to_array());
    (0..N_PARAMS)
        .map(|i| EstimateRecord {
            episode,
            param_index: i,
            estimate: e[i],
            truth: t[i],
        })
        .collect()
}
