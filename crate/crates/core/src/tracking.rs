//! Gaussian-process tracking of the latent evolution.
//!
//! One zero-mean GP per latent dimension is fitted over the episode index
//! to the sequence of inferred posterior means. The kernel combines a
//! squared exponential, a white-noise term with fixed level `W = 0.01`, a
//! constant bias and a linear term:
//!
//! ```text
//! k(xi, xj) = c exp(-(xi - xj)^2 / (2 l^2)) + W [xi == xj] + s0 + xi xj
//! ```
//!
//! `(c, l, s0)` are re-estimated from scratch after every task by
//! maximising the log marginal likelihood with a multi-start simplex
//! search in log space. Targets are standardised per fit.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::envs::SequenceSpec;
use crate::error::{Error, Result};
use crate::latent::GaussianBelief;
use crate::parallel::{map_indexed, Execution};
use crate::rng::SeedStream;

pub const WHITE_NOISE: f64 = 0.01;
const JITTER: f64 = 1e-8;
const JITTER_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub c: f64,
    pub l: f64,
    pub sigma0_sq: f64,
    w: f64,
}

impl KernelParams {
    pub fn new(c: f64, l: f64, sigma0_sq: f64) -> Result<Self> {
        if !(c > 0.0 && l > 0.0 && sigma0_sq >= 0.0) || ![c, l, sigma0_sq].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("kernel parameters out of range: c={c}, l={l}, s0={sigma0_sq}")));
        }
        Ok(KernelParams { c, l, sigma0_sq, w: WHITE_NOISE })
    }

    pub fn white_noise(&self) -> f64 {
        self.w
    }

    fn log_vector(&self) -> [f64; 3] {
        [self.c.ln(), self.l.ln(), self.sigma0_sq.ln()]
    }

    fn from_log(v: [f64; 3]) -> Self {
        KernelParams { c: v[0].exp(), l: v[1].exp(), sigma0_sq: v[2].exp(), w: WHITE_NOISE }
    }
}

pub fn kernel_eval(p: &KernelParams, xi: f64, xj: f64) -> f64 {
    let d = xi - xj;
    let white = if xi == xj { p.w } else { 0.0 };
    p.c * (-d * d / (2.0 * p.l * p.l)).exp() + white + p.sigma0_sq + xi * xj
}

/// Dense row-major kernel matrix.
pub fn kernel_matrix(p: &KernelParams, xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel_eval(p, xs[i], xs[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// In-place lower Cholesky factor of a row-major SPD matrix.
fn cholesky_in_place(a: &mut [f64], n: usize) -> Result<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for k in j + 1..n {
            a[j * n + k] = 0.0;
        }
    }
    Ok(())
}

/// Cholesky with up to three jitter additions on failure.
fn cholesky(k: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut jitter = 0.0;
    for _ in 0..=JITTER_ATTEMPTS {
        let mut a = k.to_vec();
        for i in 0..n {
            a[i * n + i] += jitter;
        }
        if cholesky_in_place(&mut a, n).is_ok() {
            return Ok(a);
        }
        jitter += JITTER;
    }
    Err(Error::NotPositiveDefinite)
}

fn forward_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    y
}

fn backward_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Zero-mean GP log evidence of `targets` (already standardised by the
/// caller when fitting).
pub fn log_marginal_likelihood(p: &KernelParams, inputs: &[f64], targets: &[f64]) -> Result<f64> {
    lml_and_factor(p, inputs, targets).map(|(v, _, _)| v)
}

fn lml_and_factor(p: &KernelParams, inputs: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let n = inputs.len();
    if n == 0 || targets.len() != n {
        return Err(Error::invalid("GP needs matching, non-empty inputs and targets"));
    }
    let l = cholesky(&kernel_matrix(p, inputs), n)?;
    let alpha = backward_solve(&l, n, &forward_solve(&l, n, targets));
    let fit: f64 = targets.iter().zip(&alpha).map(|(y, a)| y * a).sum();
    let logdet: f64 = (0..n).map(|i| l[i * n + i].ln()).sum();
    let lml = -0.5 * fit - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    if !lml.is_finite() {
        return Err(Error::NotPositiveDefinite);
    }
    Ok((lml, l, alpha))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpConfig {
    pub restarts: usize,
    pub iterations: usize,
    /// Only the most recent `window` points are used.
    pub window: usize,
    pub c_bounds: (f64, f64),
    pub l_bounds: (f64, f64),
    pub sigma0_bounds: (f64, f64),
    pub variance_floor: f64,
    pub variance_cap: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            restarts: 8,
            iterations: 200,
            window: 100,
            c_bounds: (1e-3, 1e3),
            l_bounds: (0.1, 100.0),
            sigma0_bounds: (1e-6, 10.0),
            variance_floor: 1e-4,
            variance_cap: 1.0,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |b: (f64, f64)| b.0 > 0.0 && b.0 <= b.1;
        if self.restarts == 0 || self.window == 0 {
            return Err(Error::invalid("gp restarts and window must be positive"));
        }
        if !ok(self.c_bounds) || !ok(self.l_bounds) || !ok(self.sigma0_bounds) {
            return Err(Error::invalid("gp hyperparameter bounds must satisfy 0 < lo <= hi"));
        }
        if !(0.0 < self.variance_floor && self.variance_floor <= self.variance_cap) {
            return Err(Error::invalid("gp variance floor/cap invalid"));
        }
        Ok(())
    }

    fn log_bounds(&self) -> [(f64, f64); 3] {
        let lb = |b: (f64, f64)| (b.0.ln(), b.1.ln());
        [lb(self.c_bounds), lb(self.l_bounds), lb(self.sigma0_bounds)]
    }
}

/// Hyperparameters used when no restart produces a valid factorisation.
pub fn fallback_params() -> KernelParams {
    KernelParams { c: 1.0, l: 5.0, sigma0_sq: 1e-6, w: WHITE_NOISE }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpModel {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    target_mean: f64,
    target_std: f64,
    params: KernelParams,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    lml: f64,
    variance_floor: f64,
    variance_cap: f64,
}

/// Result of one simplex restart.
#[derive(Debug, Clone, Copy)]
pub struct RestartOutcome {
    pub start: [f64; 3],
    pub start_lml: f64,
    pub best: [f64; 3],
    pub best_lml: f64,
}

impl GpModel {
    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    pub fn num_points(&self) -> usize {
        self.inputs.len()
    }

    /// Posterior mean and clamped variance at `x`, in target units.
    pub fn predict(&self, x: f64) -> (f64, f64) {
        let n = self.inputs.len();
        let kstar: Vec<f64> = self.inputs.iter().map(|&xi| kernel_eval(&self.params, x, xi)).collect();
        let mean_std: f64 = kstar.iter().zip(&self.alpha).map(|(k, a)| k * a).sum();
        let v = forward_solve(&self.chol, n, &kstar);
        let var_std = (kernel_eval(&self.params, x, x) - v.iter().map(|x| x * x).sum::<f64>()).max(0.0);
        let mean = self.target_mean + self.target_std * mean_std;
        let var = (self.target_std * self.target_std * var_std).clamp(self.variance_floor, self.variance_cap);
        (mean, var)
    }
}

fn standardise(targets: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    (mean, std, targets.iter().map(|y| (y - mean) / std).collect())
}

fn nelder_mead(f: &dyn Fn([f64; 3]) -> f64, start: [f64; 3], bounds: &[(f64, f64); 3], iterations: usize) -> ([f64; 3], f64) {
    let clamp = |mut p: [f64; 3]| {
        for k in 0..3 {
            p[k] = p[k].clamp(bounds[k].0, bounds[k].1);
        }
        p
    };
    let start = clamp(start);
    let mut simplex: Vec<([f64; 3], f64)> = vec![(start, f(start))];
    for k in 0..3 {
        let mut p = start;
        let step = 0.5;
        p[k] = if p[k] + step <= bounds[k].1 { p[k] + step } else { p[k] - step };
        let p = clamp(p);
        simplex.push((p, f(p)));
    }
    let by_value = |a: &([f64; 3], f64), b: &([f64; 3], f64)| a.1.total_cmp(&b.1);
    for _ in 0..iterations {
        simplex.sort_by(by_value);
        let worst = simplex[3];
        let mut centroid = [0.0; 3];
        for (p, _) in &simplex[..3] {
            for k in 0..3 {
                centroid[k] += p[k] / 3.0;
            }
        }
        let along = |t: f64| {
            let mut p = [0.0; 3];
            for k in 0..3 {
                p[k] = centroid[k] + t * (worst.0[k] - centroid[k]);
            }
            clamp(p)
        };
        let reflected = along(-1.0);
        let fr = f(reflected);
        if fr < simplex[0].1 {
            let expanded = along(-2.0);
            let fe = f(expanded);
            simplex[3] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (reflected, fr);
        } else {
            let contracted = if fr < worst.1 { along(-0.5) } else { along(0.5) };
            let fc = f(contracted);
            if fc < worst.1.min(fr) {
                simplex[3] = (contracted, fc);
            } else {
                let best = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    let mut p = [0.0; 3];
                    for k in 0..3 {
                        p[k] = best[k] + 0.5 * (v.0[k] - best[k]);
                    }
                    let p = clamp(p);
                    *v = (p, f(p));
                }
            }
        }
    }
    simplex.sort_by(by_value);
    simplex[0]
}

/// Fit the kernel hyperparameters and return the model plus per-restart
/// diagnostics. Deterministic given `seed`.
pub fn gp_fit_with_diagnostics(
    inputs: &[f64],
    targets: &[f64],
    cfg: &GpConfig,
    seed: SeedStream,
) -> Result<(GpModel, Vec<RestartOutcome>)> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::invalid("gp_fit needs matching, non-empty inputs and targets"));
    }
    if inputs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("gp inputs must be strictly increasing"));
    }
    let skip = inputs.len().saturating_sub(cfg.window);
    let xs = &inputs[skip..];
    let (mean, std, ys) = standardise(&targets[skip..]);
    let bounds = cfg.log_bounds();
    let objective = |v: [f64; 3]| match log_marginal_likelihood(&KernelParams::from_log(v), xs, &ys) {
        Ok(lml) => -lml,
        Err(_) => f64::INFINITY,
    };
    let mut rng = seed.rng();
    let mut outcomes = Vec::with_capacity(cfg.restarts);
    for r in 0..cfg.restarts {
        let start = if r == 0 {
            fallback_params().log_vector()
        } else {
            let mut s = [0.0; 3];
            for k in 0..3 {
                s[k] = bounds[k].0 + (bounds[k].1 - bounds[k].0) * rng.random::<f64>();
            }
            s
        };
        let start_val = objective(start);
        let (best, best_val) = nelder_mead(&objective, start, &bounds, cfg.iterations);
        outcomes.push(RestartOutcome { start, start_lml: -start_val, best, best_lml: -best_val });
    }
    let best = outcomes
        .iter()
        .filter(|o| o.best_lml.is_finite())
        .max_by(|a, b| a.best_lml.total_cmp(&b.best_lml));
    let params = best.map(|o| KernelParams::from_log(o.best)).unwrap_or_else(fallback_params);
    let (lml, chol, alpha) = match lml_and_factor(&params, xs, &ys) {
        Ok(v) => v,
        Err(_) => lml_and_factor(&fallback_params(), xs, &ys)?,
    };
    let model = GpModel {
        inputs: xs.to_vec(),
        targets: ys,
        target_mean: mean,
        target_std: std,
        params,
        chol,
        alpha,
        lml,
        variance_floor: cfg.variance_floor,
        variance_cap: cfg.variance_cap,
    };
    Ok((model, outcomes))
}

pub fn gp_fit(inputs: &[f64], targets: &[f64], cfg: &GpConfig, seed: SeedStream) -> Result<GpModel> {
    gp_fit_with_diagnostics(inputs, targets, cfg, seed).map(|(m, _)| m)
}

pub fn gp_predict(model: &GpModel, x: f64) -> (f64, f64) {
    model.predict(x)
}

/// Online tracker: one independent GP per latent dimension.
#[derive(Debug, Clone)]
pub struct Tracker {
    dim: usize,
    cfg: GpConfig,
    seed: SeedStream,
    exec: Execution,
    inputs: Vec<f64>,
    targets: Vec<Vec<f64>>,
    last_models: Vec<GpModel>,
}

impl Tracker {
    pub fn new(dim: usize, cfg: GpConfig, seed: SeedStream) -> Result<Self> {
        cfg.validate()?;
        Ok(Tracker { dim, cfg, seed, exec: Execution::Parallel, inputs: Vec::new(), targets: vec![Vec::new(); dim], last_models: Vec::new() })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn models(&self) -> &[GpModel] {
        &self.last_models
    }

    /// Record the posterior mean observed for task `t` and predict the
    /// prior for task `t + 1`.
    pub fn track_step(&mut self, omega_hat: &[f64], t: usize) -> Result<GaussianBelief> {
        if t != self.inputs.len() {
            return Err(Error::invalid(format!("track_step expected task {}, got {t}", self.inputs.len())));
        }
        if omega_hat.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: omega_hat.len() });
        }
        if omega_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tracked posterior mean".into()));
        }
        self.inputs.push(t as f64);
        for (k, v) in omega_hat.iter().enumerate() {
            self.targets[k].push(*v);
        }
        // Every dimension gets the same restart seed, so each fit depends
        // only on that dimension's data and permuting dimensions permutes
        // the predictions.
        let seed = self.seed.index(t as u64);
        let fits = map_indexed(self.exec, self.dim, |k| gp_fit(&self.inputs, &self.targets[k], &self.cfg, seed));
        self.last_models = fits.into_iter().collect::<Result<_>>()?;
        let x = (t + 1) as f64;
        let (mean, std): (Vec<f64>, Vec<f64>) = self
            .last_models
            .iter()
            .map(|m| {
                let (mu, var) = m.predict(x);
                (mu, var.sqrt())
            })
            .unzip();
        GaussianBelief::new(mean, std)
    }
}

/// One task of a tracking evaluation: the prediction made before the
/// observation of task `task` (the initial prior for task 0).
#[derive(Debug, Clone, PartialEq)]
pub struct TrackPoint {
    pub task: usize,
    pub truth: Vec<f64>,
    pub observed: Vec<f64>,
    pub prediction: GaussianBelief,
}

impl TrackPoint {
    /// Mean absolute error of the predicted mean over dimensions.
    pub fn abs_error(&self) -> f64 {
        self.prediction.mean().iter().zip(&self.truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / self.truth.len() as f64
    }
}

/// Feed the tracker the normalised sequence, perturbed by Gaussian noise of
/// standard deviation `noise_std`, and record every one-step-ahead
/// prediction against the noiseless truth.
pub fn one_step_ahead(seq: &SequenceSpec, noise_std: f64, tasks: usize, seed: u64, cfg: &GpConfig) -> Result<Vec<TrackPoint>> {
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::invalid(format!("noise std must be finite and >= 0, got {noise_std}")));
    }
    let seeds = SeedStream::new(seed).child("track-eval");
    let mut tracker = Tracker::new(seq.dim(), cfg.clone(), seeds.child("gp"))?;
    let mut prediction = seq.initial_prior.clone();
    let mut points = Vec::with_capacity(tasks);
    for t in 0..tasks {
        let truth = seq.normalized_mean(t).0;
        let mut rng = seeds.child("noise").index(t as u64).rng();
        let observed: Vec<f64> = truth
            .iter()
            .map(|v| {
                let e: f64 = StandardNormal.sample(&mut rng);
                v + noise_std * e
            })
            .collect();
        points.push(TrackPoint { task: t, truth, observed: observed.clone(), prediction: prediction.clone() });
        prediction = tracker.track_step(&observed, t)?;
    }
    Ok(points)
}

/// Mean of [`TrackPoint::abs_error`] over the points `keep` accepts.
pub fn mean_abs_error(points: &[TrackPoint], keep: impl Fn(usize) -> bool) -> f64 {
    let errs: Vec<f64> = points.iter().filter(|p| keep(p.task)).map(TrackPoint::abs_error).collect();
    errs.iter().sum::<f64>() / errs.len() as f64
}
