//! Variational task inference.
//!
//! A GRU reads one transition at a time, together with the prior the
//! episode was collected under, and emits a diagonal Gaussian belief over
//! the normalised latent after every step. Training minimises, per
//! trajectory, the mean over steps of
//!
//! ```text
//! |mu_h - omega|^2 + sum_k sigma_{h,k}^2 + (lambda / H) KL(q_h || prior)
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{EnvSpec, Trajectory, Transition};
use crate::error::{check_dim, Error, Result};
use crate::latent::{kl_diag_gaussian, GaussianBelief, LatentVector};
use crate::neural::{
    clip_global_norm, to_f64, Activation, Adam, Dense, Grads, Graph, GruCell, NodeId, ParamStore, Real,
};
use crate::parallel::{map_indexed, Execution};

pub const STD_FLOOR: f64 = 1e-4;
pub const PREFIX: &str = "inference";
/// Items per gradient chunk; fixed so reductions do not depend on thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceArch {
    pub hidden: usize,
    pub encoder: usize,
}

impl Default for InferenceArch {
    fn default() -> Self {
        InferenceArch { hidden: 64, encoder: 32 }
    }
}

/// Input features of one transition: scaled state, unit action, scaled
/// reward and scaled next state.
pub fn transition_features(spec: &EnvSpec, t: &Transition) -> Vec<f64> {
    let mut f = spec.observation_features(&t.state);
    f.extend(t.action.iter().enumerate().map(|(k, a)| {
        let (lo, hi) = (spec.action_lo[k], spec.action_hi[k]);
        2.0 * (a - lo) / (hi - lo) - 1.0
    }));
    f.push(spec.reward_feature(t.reward));
    f.extend(spec.observation_features(&t.next_state));
    f
}

pub fn feature_dim(spec: &EnvSpec) -> usize {
    2 * spec.state_dim + spec.action_dim + 1
}

/// Parameter handles. The same layout drives any `ParamStore<T>` with the
/// same tensor order, e.g. an `f64` cast used for gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceLayout {
    pub encoder: Dense,
    pub cell: GruCell,
    pub mean_head: Dense,
    pub std_head: Dense,
    pub features: usize,
    pub latent: usize,
}

/// Nodes produced by one recurrent step.
#[derive(Debug, Clone, Copy)]
pub struct StepNodes {
    pub hidden: NodeId,
    pub mean: NodeId,
    pub std: NodeId,
}

/// Scalar nodes of the loss and its step-averaged terms.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: NodeId,
    pub mse: NodeId,
    pub trace: NodeId,
    pub kl: NodeId,
}

impl LossNodes {
    pub fn parts<T: Real>(&self, g: &Graph<'_, T>) -> LossParts {
        LossParts { total: g.scalar(self.total).as_f64(), mse: g.scalar(self.mse).as_f64(), trace: g.scalar(self.trace).as_f64(), kl: g.scalar(self.kl).as_f64() }
    }
}

/// Loss decomposition, each term averaged over steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossParts {
    pub total: f64,
    pub mse: f64,
    pub trace: f64,
    pub kl: f64,
}

impl LossParts {
    fn add(&mut self, o: &LossParts) {
        self.total += o.total;
        self.mse += o.mse;
        self.trace += o.trace;
        self.kl += o.kl;
    }
}

impl InferenceLayout {
    fn names() -> [String; 4] {
        [format!("{PREFIX}.enc"), format!("{PREFIX}.gru"), format!("{PREFIX}.mean"), format!("{PREFIX}.std")]
    }

    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        features: usize,
        latent: usize,
        arch: InferenceArch,
        rng: &mut R,
    ) -> Result<Self> {
        let [enc, gru, mean, std] = Self::names();
        let encoder = Dense::init(store, &enc, features + 2 * latent, arch.encoder, Activation::Tanh, 1.0, rng)?;
        let cell = GruCell::init(store, &gru, arch.encoder, arch.hidden, rng)?;
        let head_in = arch.hidden + 2 * latent;
        let mean_head = Dense::init(store, &mean, head_in, latent, Activation::Identity, 0.1, rng)?;
        let std_head = Dense::init(store, &std, head_in, latent, Activation::Identity, 0.1, rng)?;
        Ok(InferenceLayout { encoder, cell, mean_head, std_head, features, latent })
    }

    pub fn bind<T: Real>(store: &ParamStore<T>, features: usize, latent: usize, arch: InferenceArch) -> Result<Self> {
        let [enc, gru, mean, std] = Self::names();
        let encoder = Dense::bind(store, &enc, features + 2 * latent, arch.encoder, Activation::Tanh)?;
        let cell = GruCell::bind(store, &gru, arch.encoder, arch.hidden)?;
        let head_in = arch.hidden + 2 * latent;
        let mean_head = Dense::bind(store, &mean, head_in, latent, Activation::Identity)?;
        let std_head = Dense::bind(store, &std, head_in, latent, Activation::Identity)?;
        Ok(InferenceLayout { encoder, cell, mean_head, std_head, features, latent })
    }

    pub fn hidden(&self) -> usize {
        self.cell.hidden
    }

    /// One recurrent step. `prior` is the concatenation `[mean, std]`.
    /// The mean head predicts a correction to the prior mean.
    pub fn step<T: Real>(&self, g: &mut Graph<'_, T>, h: NodeId, features: NodeId, prior: NodeId) -> Result<StepNodes> {
        check_dim(self.features, g.len(features))?;
        check_dim(2 * self.latent, g.len(prior))?;
        let x = g.concat(&[features, prior]);
        let e = self.encoder.forward(g, x)?;
        let hidden = self.cell.step(g, h, e)?;
        let head_in = g.concat(&[hidden, prior]);
        let delta = self.mean_head.forward(g, head_in)?;
        let prior_mean = g.slice(prior, 0, self.latent);
        let mean = g.add(prior_mean, delta);
        let raw = self.std_head.forward(g, head_in)?;
        let sp = g.softplus(raw);
        let std = g.offset(sp, T::of(STD_FLOOR));
        Ok(StepNodes { hidden, mean, std })
    }

    /// Differentiable per-trajectory loss over precomputed features.
    /// `input` is the belief fed to the network at every step; `prior` is
    /// the task prior the KL term is measured against. They differ for
    /// later episodes of a multi-episode task.
    pub fn episode_loss<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        features: &[Vec<f64>],
        input: &GaussianBelief,
        prior: &GaussianBelief,
        omega: &[f64],
        lambda: f64,
    ) -> Result<LossNodes> {
        if features.is_empty() {
            return Err(Error::invalid("inference loss needs a non-empty trajectory"));
        }
        check_dim(self.latent, input.dim())?;
        check_dim(self.latent, prior.dim())?;
        check_dim(self.latent, omega.len())?;
        let horizon = features.len() as f64;
        let prior_vec: Vec<f64> = input.mean().iter().chain(input.std()).copied().collect();
        let prior_node = g.input_f64(&prior_vec);
        let omega_node = g.input_f64(omega);
        let prior_mean = g.input_f64(prior.mean());
        let inv_two_var: Vec<f64> = prior.std().iter().map(|s| 0.5 / (s * s)).collect();
        let inv_two_var = g.input_f64(&inv_two_var);
        let log_prior_std: f64 = prior.std().iter().map(|s| s.ln()).sum::<f64>() - 0.5 * self.latent as f64;
        let mut h = g.input(vec![T::zero(); self.hidden()]);
        let mut terms = Vec::with_capacity(features.len());
        let (mut mses, mut traces, mut kls) = (Vec::new(), Vec::new(), Vec::new());
        for f in features {
            let x = g.input_f64(f);
            let s = self.step(g, h, x, prior_node)?;
            h = s.hidden;
            let err = g.sub(s.mean, omega_node);
            let err2 = g.square(err);
            let mse = g.sum(err2);
            let var = g.square(s.std);
            let trace = g.sum(var);
            // KL(q || p) = sum_k [ln sp - ln sq + (sq^2 + (mq - mp)^2) / (2 sp^2) - 1/2]
            let log_q = g.ln(s.std);
            let neg_log_q = g.sum(log_q);
            let dm = g.sub(s.mean, prior_mean);
            let dm2 = g.square(dm);
            let quad = g.add(var, dm2);
            let weighted = g.mul(quad, inv_two_var);
            let quad_sum = g.sum(weighted);
            let kl_core = g.sub(quad_sum, neg_log_q);
            let kl = g.offset(kl_core, T::of(log_prior_std));
            let kl_w = g.scale(kl, T::of(lambda / horizon));
            terms.push(g.sum_scalars(&[mse, trace, kl_w]));
            mses.push(mse);
            traces.push(trace);
            kls.push(kl);
        }
        let mut mean_of = |xs: &[NodeId]| {
            let s = g.sum_scalars(xs);
            g.scale(s, T::of(1.0 / horizon))
        };
        Ok(LossNodes { total: mean_of(&terms), mse: mean_of(&mses), trace: mean_of(&traces), kl: mean_of(&kls) })
    }
}

/// Plain evaluation of the loss for a list of per-step beliefs.
pub fn elbo_loss(beliefs: &[GaussianBelief], omega: &LatentVector, prior: &GaussianBelief, lambda: f64, horizon: usize) -> Result<LossParts> {
    if beliefs.is_empty() || horizon == 0 {
        return Err(Error::invalid("elbo_loss needs at least one belief and H >= 1"));
    }
    let mut parts = LossParts::default();
    for b in beliefs {
        check_dim(omega.dim(), b.dim())?;
        parts.mse += b.mean().iter().zip(omega.as_slice()).map(|(m, w)| (m - w).powi(2)).sum::<f64>();
        parts.trace += b.variance().iter().sum::<f64>();
        parts.kl += kl_diag_gaussian(b, prior)?;
    }
    let n = beliefs.len() as f64;
    parts.mse /= n;
    parts.trace /= n;
    parts.kl /= n;
    parts.total = parts.mse + parts.trace + lambda / horizon as f64 * parts.kl;
    Ok(parts)
}

#[derive(Debug, Clone)]
pub struct InferenceNetwork {
    spec: EnvSpec,
    arch: InferenceArch,
    layout: InferenceLayout,
    params: ParamStore<f32>,
}

impl InferenceNetwork {
    pub fn new<R: Rng + ?Sized>(spec: &EnvSpec, arch: InferenceArch, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        let layout = InferenceLayout::init(&mut params, feature_dim(spec), spec.latent_dim(), arch, rng)?;
        Ok(InferenceNetwork { spec: spec.clone(), arch, layout, params })
    }

    /// Wrap loaded parameters, checking every tensor shape.
    pub fn from_params(spec: &EnvSpec, arch: InferenceArch, params: ParamStore<f32>) -> Result<Self> {
        let layout = InferenceLayout::bind(&params, feature_dim(spec), spec.latent_dim(), arch)?;
        Ok(InferenceNetwork { spec: spec.clone(), arch, layout, params })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn arch(&self) -> InferenceArch {
        self.arch
    }

    pub fn layout(&self) -> &InferenceLayout {
        &self.layout
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    pub fn latent_dim(&self) -> usize {
        self.layout.latent
    }

    /// Before any observation the posterior is the prior.
    pub fn posterior_init(&self, prior: &GaussianBelief) -> Result<(Vec<f32>, GaussianBelief)> {
        check_dim(self.latent_dim(), prior.dim())?;
        Ok((vec![0.0; self.layout.hidden()], prior.clone()))
    }

    pub fn posterior_step(&self, hidden: &[f32], transition: &Transition, prior: &GaussianBelief) -> Result<(Vec<f32>, GaussianBelief)> {
        check_dim(self.layout.hidden(), hidden.len())?;
        check_dim(self.latent_dim(), prior.dim())?;
        let features = transition_features(&self.spec, transition);
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("inference input".into()));
        }
        let mut g = Graph::new(&self.params);
        let h = g.input(hidden.to_vec());
        let x = g.input_f64(&features);
        let prior_vec: Vec<f64> = prior.mean().iter().chain(prior.std()).copied().collect();
        let p = g.input_f64(&prior_vec);
        let s = self.layout.step(&mut g, h, x, p)?;
        let mean = to_f64(g.value(s.mean));
        let std = to_f64(g.value(s.std));
        if mean.iter().chain(&std).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("posterior".into()));
        }
        // f32 rounding must not undercut the floor.
        let std = std.into_iter().map(|s| s.max(STD_FLOOR)).collect();
        Ok((g.value(s.hidden).to_vec(), GaussianBelief::new(mean, std)?))
    }

    /// Belief after each transition of `traj`, starting from `prior`.
    pub fn episode_beliefs(&self, traj: &Trajectory, prior: &GaussianBelief) -> Result<Vec<GaussianBelief>> {
        let (mut h, _) = self.posterior_init(prior)?;
        let mut out = Vec::with_capacity(traj.len());
        for t in &traj.transitions {
            let (h2, b) = self.posterior_step(&h, t, prior)?;
            h = h2;
            out.push(b);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceTrainConfig {
    pub lr: f64,
    /// KL weight; the likelihood precision is `H / lambda`.
    pub lambda: f64,
    pub max_grad_norm: f64,
    /// Optimiser steps per call, each on a disjoint slice of the batch.
    pub minibatches: usize,
    pub epochs: usize,
}

impl Default for InferenceTrainConfig {
    fn default() -> Self {
        InferenceTrainConfig { lr: 1e-3, lambda: 1.0, max_grad_norm: 0.5, minibatches: 1, epochs: 1 }
    }
}

impl InferenceTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lambda >= 0.0 && self.max_grad_norm > 0.0) || self.minibatches == 0 || self.epochs == 0 {
            return Err(Error::invalid("inference config needs lr > 0, lambda >= 0, max_grad_norm > 0 and positive counts"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct InferenceItem {
    pub trajectory: Trajectory,
    /// Task prior the KL term targets; the network input is
    /// `trajectory.prior_used`.
    pub prior: GaussianBelief,
    pub off_prior: bool,
}

impl InferenceItem {
    /// Item whose KL target is the same belief the network was fed.
    pub fn single(trajectory: Trajectory, off_prior: bool) -> Self {
        InferenceItem { prior: trajectory.prior_used.clone(), trajectory, off_prior }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct InferenceStats {
    pub loss: f64,
    pub mse: f64,
    pub trace: f64,
    pub kl: f64,
    pub grad_norm: f64,
    pub items: usize,
}

struct Prepared {
    features: Vec<Vec<f64>>,
    input: GaussianBelief,
    prior: GaussianBelief,
    omega: Vec<f64>,
}

fn prepare(spec: &EnvSpec, item: &InferenceItem) -> Result<Prepared> {
    let t = &item.trajectory;
    if t.is_empty() {
        return Err(Error::invalid("inference batch contains an empty trajectory"));
    }
    let omega = t.true_latent.as_ref().ok_or_else(|| Error::invalid("training trajectory lacks true latent"))?;
    Ok(Prepared {
        features: t.transitions.iter().map(|tr| transition_features(spec, tr)).collect(),
        input: t.prior_used.clone(),
        prior: item.prior.clone(),
        omega: omega.0.clone(),
    })
}

/// Accumulated gradient of the summed per-item loss over `items`.
pub fn batch_gradient<T: Real>(
    layout: &InferenceLayout,
    params: &ParamStore<T>,
    spec: &EnvSpec,
    items: &[InferenceItem],
    lambda: f64,
    exec: Execution,
) -> Result<(Grads<T>, LossParts)> {
    let prepared: Vec<Prepared> = items.iter().map(|i| prepare(spec, i)).collect::<Result<_>>()?;
    let chunks = prepared.len().div_ceil(CHUNK);
    let partial = map_indexed(exec, chunks, |c| -> Result<(Grads<T>, LossParts)> {
        let mut grads = params.zero_grads();
        let mut sum = LossParts::default();
        for p in &prepared[c * CHUNK..((c + 1) * CHUNK).min(prepared.len())] {
            let mut g = Graph::new(params);
            let nodes = layout.episode_loss(&mut g, &p.features, &p.input, &p.prior, &p.omega, lambda)?;
            sum.add(&nodes.parts(&g));
            g.backward_into(nodes.total, &mut grads)?;
        }
        Ok((grads, sum))
    });
    let mut total = params.zero_grads();
    let mut sum = LossParts::default();
    for r in partial {
        let (g, l) = r?;
        total.add_assign(&g);
        sum.add(&l);
    }
    Ok((total, sum))
}

/// Evaluate the loss decomposition of every item without gradients.
pub fn evaluate(net: &InferenceNetwork, items: &[InferenceItem], lambda: f64, exec: Execution) -> Result<Vec<LossParts>> {
    map_indexed(exec, items.len(), |i| {
        let t = &items[i].trajectory;
        let omega = t.true_latent.clone().ok_or_else(|| Error::invalid("trajectory lacks true latent"))?;
        let beliefs = net.episode_beliefs(t, &t.prior_used)?;
        elbo_loss(&beliefs, &omega, &items[i].prior, lambda, t.len())
    })
    .into_iter()
    .collect()
}

/// One or more Adam steps on the mean per-item loss. On- and off-prior
/// items carry equal weight.
pub fn train_inference(
    net: &mut InferenceNetwork,
    batch: &[InferenceItem],
    adam: &mut Adam<f32>,
    cfg: &InferenceTrainConfig,
    exec: Execution,
) -> Result<InferenceStats> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::invalid("inference batch is empty"));
    }
    let per_mb = batch.len().div_ceil(cfg.minibatches);
    let mut stats = InferenceStats { items: batch.len(), ..InferenceStats::default() };
    let mut updates = 0usize;
    for _ in 0..cfg.epochs {
        for mb in batch.chunks(per_mb) {
            let (mut grads, sum) = batch_gradient(&net.layout, &net.params, &net.spec, mb, cfg.lambda, exec)?;
            let n = mb.len() as f64;
            let loss = sum.total / n;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("inference loss {loss}")));
            }
            grads.scale(1.0 / mb.len() as f32);
            stats.grad_norm += grads.global_norm();
            clip_global_norm(&mut grads, cfg.max_grad_norm);
            adam.update(&mut net.params, &grads, cfg.lr)?;
            stats.loss += loss;
            stats.mse += sum.mse / n;
            stats.trace += sum.trace / n;
            stats.kl += sum.kl / n;
            updates += 1;
        }
    }
    let u = updates as f64;
    stats.loss /= u;
    stats.mse /= u;
    stats.trace /= u;
    stats.kl /= u;
    stats.grad_norm /= u;
    Ok(stats)
}
