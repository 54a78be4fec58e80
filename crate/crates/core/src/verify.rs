//! Independent oracles shared by the test suites and the acceptance runner.
//!
//! * central-difference gradient checks over randomized dense, recurrent,
//!   inference-loss and PPO actor-loss instances;
//! * a Monte Carlo estimate of the diagonal-Gaussian KL;
//! * a dense LU re-implementation of the GP log marginal likelihood.
//!
//! Everything here runs in `f64` and is deliberately written without
//! reusing the code paths it checks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::envs::{minigolf_step, EnvSpec, MinigolfConstants};
use crate::error::{Error, Result};
use crate::inference::{InferenceArch, InferenceLayout};
use crate::latent::GaussianBelief;
use crate::neural::{Activation, Dense, Graph, GruCell, NodeId, ParamStore};
use crate::policy::{sample_loss, ActionSample, PolicyArch, PolicyLayout, PolicySample, PpoConfig, StepEnd};
use crate::rng::SeedStream;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Absolute floor of the relative-error denominator, so coordinates whose
/// true gradient is zero are compared against rounding noise, not zero.
pub const REL_FLOOR: f64 = 1e-6;

/// Worst per-coordinate relative error `|a - n| / max(|a|, |n|, floor)`
/// between the reverse-mode gradient of `loss` and central differences.
pub fn gradient_error<F>(store: &ParamStore<f64>, loss: F) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<NodeId>,
{
    let value = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(s);
        let l = loss(&mut g)?;
        Ok(g.scalar(l))
    };
    let mut g = Graph::new(store);
    let l = loss(&mut g)?;
    let analytic = g.backward(l)?.flat();
    let base = store.flat();
    let mut work = store.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut x = base.clone();
        x[i] = base[i] + FD_STEP;
        work.set_flat(&x)?;
        let up = value(&work)?;
        x[i] = base[i] - FD_STEP;
        work.set_flat(&x)?;
        let down = value(&work)?;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}

fn uniform_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, a: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-a..a)).collect()
}

/// Per-instance errors for randomized two-layer dense stacks with tanh
/// hidden units and a weighted quadratic-plus-linear loss.
pub fn dense_suite(instances: usize, seed: u64) -> Result<Vec<f64>> {
    (0..instances)
        .map(|i| {
            let mut rng = SeedStream::new(seed).child("dense").index(i as u64).rng();
            let (n_in, n_hid, n_out) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..5));
            let mut s = ParamStore::<f64>::new();
            let l0 = Dense::init(&mut s, "l0", n_in, n_hid, Activation::Tanh, 1.5, &mut rng)?;
            let l1 = Dense::init(&mut s, "l1", n_hid, n_out, Activation::Identity, 1.5, &mut rng)?;
            randomize_biases(&mut s, &mut rng);
            let x = uniform_vec(&mut rng, n_in, 2.0);
            let c = uniform_vec(&mut rng, n_out, 1.0);
            let d = uniform_vec(&mut rng, n_out, 1.0);
            gradient_error(&s, |g| {
                let xin = g.input_f64(&x);
                let h = l0.forward(g, xin)?;
                let y = l1.forward(g, h)?;
                weighted_loss(g, y, &c, &d)
            })
        })
        .collect()
}

/// Per-instance errors for a gated recurrent cell unrolled over 10 steps,
/// with a loss touching every intermediate hidden state.
pub fn recurrent_suite(instances: usize, seed: u64) -> Result<Vec<f64>> {
    const STEPS: usize = 10;
    (0..instances)
        .map(|i| {
            let mut rng = SeedStream::new(seed).child("recurrent").index(i as u64).rng();
            let (n_in, hidden) = (rng.random_range(1..5), rng.random_range(2..7));
            let mut s = ParamStore::<f64>::new();
            let cell = GruCell::init(&mut s, "gru", n_in, hidden, &mut rng)?;
            randomize_biases(&mut s, &mut rng);
            let xs: Vec<Vec<f64>> = (0..STEPS).map(|_| uniform_vec(&mut rng, n_in, 1.5)).collect();
            let h0 = uniform_vec(&mut rng, hidden, 0.5);
            let cs: Vec<Vec<f64>> = (0..STEPS).map(|_| uniform_vec(&mut rng, hidden, 1.0)).collect();
            let d = uniform_vec(&mut rng, hidden, 1.0);
            gradient_error(&s, |g| {
                let mut h = g.input_f64(&h0);
                let mut terms = Vec::new();
                for (x, c) in xs.iter().zip(&cs) {
                    let xin = g.input_f64(x);
                    h = cell.step(g, h, xin)?;
                    let w = g.input_f64(c);
                    let p = g.mul(h, w);
                    terms.push(g.sum(p));
                }
                terms.push(weighted_loss(g, h, &d, &vec![0.0; d.len()])?);
                Ok(g.sum_scalars(&terms))
            })
        })
        .collect()
}

/// Per-instance errors of the inference-network loss on small random
/// architectures and trajectories, with distinct input and KL priors.
pub fn elbo_suite(instances: usize, seed: u64) -> Result<Vec<f64>> {
    (0..instances)
        .map(|i| {
            let mut rng = SeedStream::new(seed).child("elbo").index(i as u64).rng();
            let features = rng.random_range(2..6);
            let latent = rng.random_range(1..4);
            let arch = InferenceArch { hidden: rng.random_range(2..6), encoder: rng.random_range(2..5) };
            let mut s = ParamStore::<f64>::new();
            let layout = InferenceLayout::init(&mut s, features, latent, arch, &mut rng)?;
            randomize_biases(&mut s, &mut rng);
            let steps = rng.random_range(1..7);
            let feats: Vec<Vec<f64>> = (0..steps).map(|_| uniform_vec(&mut rng, features, 1.0)).collect();
            let input = random_belief(&mut rng, latent)?;
            let prior = random_belief(&mut rng, latent)?;
            let omega = uniform_vec(&mut rng, latent, 1.0);
            let lambda = rng.random_range(0.1..2.0);
            gradient_error(&s, |g| Ok(layout.episode_loss(g, &feats, &input, &prior, &omega, lambda)?.total))
        })
        .collect()
}

/// Per-instance errors of the clipped-surrogate actor loss. Probability
/// ratios are drawn away from the clip boundaries, where the loss has a
/// kink, and half of the instances sit in the clipped (flat) region.
pub fn ppo_actor_suite(instances: usize, seed: u64) -> Result<Vec<f64>> {
    let cfg = PpoConfig::default();
    (0..instances)
        .map(|i| {
            let mut rng = SeedStream::new(seed).child("ppo").index(i as u64).rng();
            let input = rng.random_range(2..6);
            let action = rng.random_range(1..4);
            let arch = PolicyArch { hidden: vec![rng.random_range(2..6), rng.random_range(2..6)], init_log_std: rng.random_range(-1.5..0.5) };
            let mut s = ParamStore::<f64>::new();
            let layout = PolicyLayout::init(&mut s, input, action, &arch, &mut rng)?;
            randomize_biases(&mut s, &mut rng);
            let x = uniform_vec(&mut rng, input, 1.0);
            let u = uniform_vec(&mut rng, action, 1.0);
            let current = {
                let mut g = Graph::new(&s);
                let xin = g.input_f64(&x);
                let n = layout.evaluate(&mut g, xin, &u)?;
                g.scalar(n.log_prob)
            };
            let margin = 0.02;
            let ratio = if i % 2 == 0 {
                rng.random_range(1.0 - cfg.clip + margin..1.0 + cfg.clip - margin)
            } else if rng.random::<bool>() {
                rng.random_range(0.5..1.0 - cfg.clip - margin)
            } else {
                rng.random_range(1.0 + cfg.clip + margin..1.6)
            };
            let advantage = rng.random_range(0.2..2.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            let sample = PolicySample::new(
                ActionSample { input: x.clone(), unit: u.clone(), env_action: u.clone(), log_prob: current - ratio.ln(), value: 0.0 },
                0.0,
                StepEnd::Running,
            );
            gradient_error(&s, |g| Ok(sample_loss(&layout, g, &sample, advantage, 0.0, &cfg, 1.0)?.actor))
        })
        .collect()
}

fn random_belief<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Result<GaussianBelief> {
    let mean = uniform_vec(rng, dim, 1.0);
    GaussianBelief::new(mean, (0..dim).map(|_| rng.random_range(0.1..0.6)).collect())
}

fn randomize_biases<R: Rng + ?Sized>(s: &mut ParamStore<f64>, rng: &mut R) {
    for t in s.tensors_mut() {
        if t.name.rsplit('.').next().is_some_and(|last| last.starts_with('b')) {
            for v in &mut t.data {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
}

fn weighted_loss(g: &mut Graph<'_, f64>, y: NodeId, c: &[f64], d: &[f64]) -> Result<NodeId> {
    let y2 = g.square(y);
    let cw = g.input_f64(c);
    let q = g.mul(y2, cw);
    let dw = g.input_f64(d);
    let lin = g.mul(y, dw);
    let a = g.sum(q);
    let b = g.sum(lin);
    Ok(g.add(a, b))
}

/// Monte Carlo estimate of `KL(q || p)` as `E_q[ln q - ln p]`, with its
/// standard error.
pub fn kl_monte_carlo<R: Rng + ?Sized>(q: &GaussianBelief, p: &GaussianBelief, samples: usize, rng: &mut R) -> Result<(f64, f64)> {
    if q.dim() != p.dim() || samples < 2 {
        return Err(Error::invalid("kl_monte_carlo needs equal dimensions and at least two samples"));
    }
    let log_density = |b: &GaussianBelief, x: &[f64]| -> f64 {
        x.iter()
            .zip(b.mean())
            .zip(b.std())
            .map(|((x, m), s)| -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln())
            .sum()
    };
    let draws: Vec<f64> = (0..samples)
        .map(|_| {
            let x: Vec<f64> = q
                .mean()
                .iter()
                .zip(q.std())
                .map(|(m, s)| {
                    let e: f64 = StandardNormal.sample(rng);
                    m + s * e
                })
                .collect();
            log_density(q, &x) - log_density(p, &x)
        })
        .collect();
    let n = samples as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// GP log marginal likelihood by dense LU: `-1/2 y' K^-1 y - 1/2 ln|K| -
/// n/2 ln 2 pi`, with the kernel written out independently.
pub fn dense_log_marginal_likelihood(c: f64, l: f64, sigma0_sq: f64, white: f64, inputs: &[f64], targets: &[f64]) -> Result<f64> {
    let n = inputs.len();
    if n == 0 || n != targets.len() {
        return Err(Error::invalid("dense evidence needs matching, non-empty inputs and targets"));
    }
    let k = DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (inputs[i], inputs[j]);
        c * (-(a - b).powi(2) / (2.0 * l * l)).exp() + if i == j { white } else { 0.0 } + sigma0_sq + a * b
    });
    let lu = k.clone().lu();
    let y = DVector::from_column_slice(targets);
    let alpha = lu.solve(&y).ok_or(Error::NotPositiveDefinite)?;
    let det = lu.determinant();
    if !(det > 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(-0.5 * y.dot(&alpha) - 0.5 * det.ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// A hand-evaluated noiseless stroke: `x0` metres from the hole, putter
/// speed `action` (before clipping), friction coefficient `friction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinigolfCase {
    pub x0: f64,
    pub action: f64,
    pub friction: f64,
    pub deceleration: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub next_x: f64,
    pub reward: f64,
}

/// Strokes covering misses, holes, overshoots and action clipping, with
/// hole diameter 0.10 m, ball radius 0.02135 m, putter length 1 m and
/// g = 9.81 m/s^2.
pub const MINIGOLF_CASES: &[MinigolfCase] = &[
    MinigolfCase { x0: 10.0, action: 5.0, friction: 1.0, deceleration: 7.007142857, v_min: 11.83819484, v_max: 12.14393982, next_x: 8.216106014, reward: -1.0 },
    MinigolfCase { x0: 10.0, action: 11.9, friction: 1.0, deceleration: 7.007142857, v_min: 11.83819484, v_max: 12.14393982, next_x: 2.864424057, reward: -1.0 },
    MinigolfCase { x0: 10.0, action: 10.0, friction: 1.0, deceleration: 7.007142857, v_min: 11.83819484, v_max: 12.14393982, next_x: 2.864424057, reward: -1.0 },
    MinigolfCase { x0: 0.5, action: 3.0, friction: 1.0, deceleration: 7.007142857, v_min: 2.64710084, v_max: 3.78676117, next_x: 0.0, reward: 0.0 },
    MinigolfCase { x0: 0.5, action: 4.5, friction: 1.0, deceleration: 7.007142857, v_min: 2.64710084, v_max: 3.78676117, next_x: -0.9449541284, reward: -100.0 },
    MinigolfCase { x0: 0.5, action: 1.0, friction: 1.0, deceleration: 7.007142857, v_min: 2.64710084, v_max: 3.78676117, next_x: 0.4286442406, reward: -1.0 },
    MinigolfCase { x0: 20.0, action: 10.0, friction: 0.3, deceleration: 2.102142857, v_min: 9.169826295, v_max: 9.561282947, next_x: -3.785253143, reward: -100.0 },
    MinigolfCase { x0: 20.0, action: 9.3, friction: 0.3, deceleration: 2.102142857, v_min: 9.169826295, v_max: 9.561282947, next_x: 0.0, reward: 0.0 },
    MinigolfCase { x0: 5.0, action: 4.9, friction: 0.3, deceleration: 2.102142857, v_min: 4.584913148, v_max: 5.324832943, next_x: 0.0, reward: 0.0 },
    MinigolfCase { x0: 5.0, action: 5.5, friction: 0.3, deceleration: 2.102142857, v_min: 4.584913148, v_max: 5.324832943, next_x: -2.195039076, reward: -100.0 },
    MinigolfCase { x0: 2.0, action: 1e-05, friction: 0.5, deceleration: 3.503571429, v_min: 3.743565909, v_max: 4.620249237, next_x: 2.0, reward: -1.0 },
    MinigolfCase { x0: 2.0, action: 0.0, friction: 0.5, deceleration: 3.503571429, v_min: 3.743565909, v_max: 4.620249237, next_x: 2.0, reward: -1.0 },
    MinigolfCase { x0: 2.0, action: -3.0, friction: 0.5, deceleration: 3.503571429, v_min: 3.743565909, v_max: 4.620249237, next_x: 2.0, reward: -1.0 },
    MinigolfCase { x0: 2.0, action: 3.8, friction: 0.5, deceleration: 3.503571429, v_min: 3.743565909, v_max: 4.620249237, next_x: 0.0, reward: 0.0 },
    MinigolfCase { x0: 2.0, action: 4.0, friction: 0.5, deceleration: 3.503571429, v_min: 3.743565909, v_max: 4.620249237, next_x: 0.0, reward: 0.0 },
    MinigolfCase { x0: 2.0, action: 5.0, friction: 0.5, deceleration: 3.503571429, v_min: 3.743565909, v_max: 4.620249237, next_x: -1.567787971, reward: -100.0 },
    MinigolfCase { x0: 15.0, action: 12.0, friction: 2.0, deceleration: 14.01428571, v_min: 20.50435494, v_max: 20.68238354, next_x: 11.43221203, reward: -1.0 },
    MinigolfCase { x0: 1.0, action: 5.4, friction: 2.0, deceleration: 14.01428571, v_min: 5.29420168, v_max: 5.946510635, next_x: 0.0, reward: 0.0 },
    MinigolfCase { x0: 1.0, action: 5.2, friction: 2.0, deceleration: 14.01428571, v_min: 5.29420168, v_max: 5.946510635, next_x: 0.03527013252, reward: -1.0 },
    MinigolfCase { x0: 1.0, action: 6.0, friction: 2.0, deceleration: 14.01428571, v_min: 5.29420168, v_max: 5.946510635, next_x: -0.2844036697, reward: -100.0 },
    MinigolfCase { x0: 3.0, action: 0.5, friction: 0.01, deceleration: 0.07007142857, v_min: 0.6484046356, v_max: 2.784393268, next_x: 1.216106014, reward: -1.0 },
    MinigolfCase { x0: 3.0, action: 0.9, friction: 0.01, deceleration: 0.07007142857, v_min: 0.6484046356, v_max: 2.784393268, next_x: 0.0, reward: 0.0 },
    MinigolfCase { x0: 3.0, action: 2.8, friction: 0.01, deceleration: 0.07007142857, v_min: 0.6484046356, v_max: 2.784393268, next_x: -52.94291539, reward: -100.0 },
    MinigolfCase { x0: 0.1, action: 2.8, friction: 0.05, deceleration: 0.3503571429, v_min: 0.264710084, v_max: 2.720751501, next_x: -11.08858308, reward: -100.0 },
    MinigolfCase { x0: 0.1, action: 2.75, friction: 0.05, deceleration: 0.3503571429, v_min: 0.264710084, v_max: 2.720751501, next_x: -10.69255861, reward: -100.0 },
    MinigolfCase { x0: 8.0, action: 7.0, friction: 0.65, deceleration: 4.554642857, v_min: 8.536643703, v_max: 8.955819505, next_x: 2.62087352, reward: -1.0 },
];

/// Worst relative error of the environment against [`MINIGOLF_CASES`]
/// (deceleration, speed window and next position; rewards must match
/// exactly or the error is infinite).
pub fn minigolf_table_error() -> f64 {
    let mut spec = EnvSpec::minigolf(0);
    spec.minigolf = MinigolfConstants { shot_noise_std: 0.0, ..MinigolfConstants::default() };
    let c = &spec.minigolf;
    let mut rng = SeedStream::new(0).rng();
    let rel = |got: f64, want: f64| (got - want).abs() / want.abs().max(1e-9);
    MINIGOLF_CASES
        .iter()
        .map(|case| {
            let step = minigolf_step(&[case.x0], case.action, case.friction, &[], &spec, &mut rng);
            if step.reward != case.reward || step.terminal != (case.reward != -1.0) {
                return f64::INFINITY;
            }
            let next = if case.next_x == 0.0 { step.next_state[0].abs() } else { rel(step.next_state[0], case.next_x) };
            [
                rel(c.deceleration(case.friction), case.deceleration),
                rel(c.min_speed(case.friction, case.x0), case.v_min),
                rel(c.max_speed(case.friction, case.x0), case.v_max),
                next,
            ]
            .into_iter()
            .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}
