//! Belief-conditioned (Bayes) and task-conditioned (Thompson) actors with
//! a critic of the same shape, generalised advantage estimation and a
//! clipped-surrogate PPO trainer.
//!
//! Actions live in a rescaled space: the actor emits a Gaussian over `u`,
//! the environment receives `u` clipped to `[-1, 1]` and mapped affinely
//! onto its bounds (see [`EnvSpec::action_from_unit`]). Log-densities are always of
//! the unclipped `u`.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::envs::{EnvSpec, Family};
use crate::error::{check_dim, Error, Result};
use crate::latent::{sample_latent, GaussianBelief, LatentVector};
use crate::neural::{clip_global_norm, Adam, Graph, Grads, Mlp, NodeId, ParamId, ParamStore, Real};
use crate::parallel::{map_indexed, Execution};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_7;
/// Samples per gradient chunk; fixed so reductions do not depend on thread count.
const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    Bayes,
    Thompson,
}

impl fmt::Display for PolicyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyMode::Bayes => "bayes",
            PolicyMode::Thompson => "thompson",
        })
    }
}

impl FromStr for PolicyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bayes" => Ok(PolicyMode::Bayes),
            "thompson" => Ok(PolicyMode::Thompson),
            _ => Err(Error::UnknownName(format!("policy mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyArch {
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
}

impl Default for PolicyArch {
    fn default() -> Self {
        PolicyArch { hidden: vec![16, 16], init_log_std: -0.5 }
    }
}

impl PolicyArch {
    /// Minigolf starts narrower: one stroke decides the episode, and
    /// wide early exploration mostly teaches the critic about misses.
    pub fn for_spec(spec: &EnvSpec) -> Self {
        let init_log_std = if spec.family == Family::Minigolf { -1.6 } else { -0.5 };
        PolicyArch { init_log_std, ..PolicyArch::default() }
    }
}

pub fn input_dim(spec: &EnvSpec, mode: PolicyMode) -> usize {
    let d = spec.latent_dim();
    spec.state_dim + if mode == PolicyMode::Bayes { 2 * d } else { d }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLayout {
    pub actor: Mlp,
    pub critic: Mlp,
    pub log_std: ParamId,
    pub input: usize,
    pub action: usize,
}

/// Differentiable outputs for one sample.
#[derive(Debug, Clone, Copy)]
pub struct PolicyNodes {
    pub mean: NodeId,
    pub log_std: NodeId,
    pub log_prob: NodeId,
    pub entropy: NodeId,
    pub value: NodeId,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

impl PolicyLayout {
    pub fn init<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, input: usize, action: usize, arch: &PolicyArch, rng: &mut R) -> Result<Self> {
        let actor = Mlp::init(store, "actor", &sizes(input, &arch.hidden, action), 0.01, rng)?;
        let log_std = store.add("actor.log_std", vec![action], vec![T::of(arch.init_log_std); action])?;
        let critic = Mlp::init(store, "critic", &sizes(input, &arch.hidden, 1), 1.0, rng)?;
        Ok(PolicyLayout { actor, critic, log_std, input, action })
    }

    pub fn bind<T: Real>(store: &ParamStore<T>, input: usize, action: usize, arch: &PolicyArch) -> Result<Self> {
        let actor = Mlp::bind(store, "actor", &sizes(input, &arch.hidden, action))?;
        let log_std = store.require("actor.log_std", &[action])?;
        let critic = Mlp::bind(store, "critic", &sizes(input, &arch.hidden, 1))?;
        Ok(PolicyLayout { actor, critic, log_std, input, action })
    }

    /// Actor distribution, log-density of `action` and entropy, plus value.
    pub fn evaluate<T: Real>(&self, g: &mut Graph<'_, T>, input: NodeId, action: &[f64]) -> Result<PolicyNodes> {
        check_dim(self.input, g.len(input))?;
        check_dim(self.action, action.len())?;
        let mean = self.actor.forward(g, input)?;
        let raw = g.param(self.log_std);
        let log_std = g.clamp(raw, T::of(LOG_STD_MIN), T::of(LOG_STD_MAX));
        let neg = g.scale(log_std, -T::one());
        let inv_std = g.exp(neg);
        let a = g.input_f64(action);
        let diff = g.sub(a, mean);
        let z = g.mul(diff, inv_std);
        let z2 = g.square(z);
        let quad = g.sum(z2);
        let half = g.scale(quad, T::of(-0.5));
        let ls_sum = g.sum(log_std);
        let lp = g.sub(half, ls_sum);
        let log_prob = g.offset(lp, T::of(-HALF_LOG_TWO_PI * self.action as f64));
        let entropy = g.offset(ls_sum, T::of((0.5 + HALF_LOG_TWO_PI) * self.action as f64));
        let value = self.critic.forward(g, input)?;
        Ok(PolicyNodes { mean, log_std, log_prob, entropy, value })
    }
}

/// Closed-form diagonal-Gaussian log-density.
pub fn gaussian_log_prob(x: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((x, m), ls)| {
            let z = (x - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LOG_TWO_PI
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub input: Vec<f64>,
    /// Unclipped normalised action.
    pub unit: Vec<f64>,
    /// Clipped action in environment units.
    pub env_action: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct PolicyBundle {
    spec: EnvSpec,
    mode: PolicyMode,
    arch: PolicyArch,
    layout: PolicyLayout,
    params: ParamStore<f32>,
}

impl PolicyBundle {
    pub fn new<R: Rng + ?Sized>(spec: &EnvSpec, mode: PolicyMode, arch: PolicyArch, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        if arch.hidden.is_empty() || arch.hidden.contains(&0) {
            return Err(Error::invalid("policy needs at least one non-empty hidden layer"));
        }
        let mut params = ParamStore::new();
        let layout = PolicyLayout::init(&mut params, input_dim(spec, mode), spec.action_dim, &arch, rng)?;
        Ok(PolicyBundle { spec: spec.clone(), mode, arch, layout, params })
    }

    pub fn from_params(spec: &EnvSpec, mode: PolicyMode, arch: PolicyArch, params: ParamStore<f32>) -> Result<Self> {
        let layout = PolicyLayout::bind(&params, input_dim(spec, mode), spec.action_dim, &arch)?;
        Ok(PolicyBundle { spec: spec.clone(), mode, arch, layout, params })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn mode(&self) -> PolicyMode {
        self.mode
    }

    pub fn arch(&self) -> &PolicyArch {
        &self.arch
    }

    pub fn layout(&self) -> &PolicyLayout {
        &self.layout
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    pub fn bayes_input(&self, state: &[f64], belief: &GaussianBelief) -> Result<Vec<f64>> {
        check_dim(self.spec.state_dim, state.len())?;
        check_dim(self.spec.latent_dim(), belief.dim())?;
        let mut x = self.spec.observation_features(state);
        x.extend_from_slice(belief.mean());
        x.extend_from_slice(belief.std());
        Ok(x)
    }

    pub fn task_input(&self, state: &[f64], omega: &LatentVector) -> Result<Vec<f64>> {
        check_dim(self.spec.state_dim, state.len())?;
        check_dim(self.spec.latent_dim(), omega.dim())?;
        let mut x = self.spec.observation_features(state);
        x.extend_from_slice(omega.as_slice());
        Ok(x)
    }

    /// Critic estimate for a prepared input.
    pub fn value(&self, input: &[f64]) -> Result<f64> {
        Ok(self.forward(input)?.2)
    }

    /// Action mean, clamped log-std and value for a prepared input.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let mut g = Graph::new(&self.params);
        let x = g.input_f64(input);
        let zero = vec![0.0; self.layout.action];
        let n = self.layout.evaluate(&mut g, x, &zero)?;
        let mean = crate::neural::to_f64(g.value(n.mean));
        let log_std = crate::neural::to_f64(g.value(n.log_std));
        let value = g.scalar(n.value).as_f64();
        if mean.iter().chain(&log_std).any(|v| !v.is_finite()) || !value.is_finite() {
            return Err(Error::NonFinite("policy output".into()));
        }
        Ok((mean, log_std, value))
    }

    /// Sample an action for a prepared input.
    pub fn act<R: Rng + ?Sized>(&self, input: Vec<f64>, rng: &mut R) -> Result<ActionSample> {
        let (mean, log_std, value) = self.forward(&input)?;
        let unit: Vec<f64> = mean
            .iter()
            .zip(&log_std)
            .map(|(m, ls)| {
                let e: f64 = StandardNormal.sample(rng);
                m + ls.exp() * e
            })
            .collect();
        let log_prob = gaussian_log_prob(&unit, &mean, &log_std);
        let env_action = self.spec.action_from_unit(&unit);
        Ok(ActionSample { input, unit, env_action, log_prob, value })
    }

    fn require_mode(&self, mode: PolicyMode) -> Result<()> {
        if self.mode != mode {
            return Err(Error::invalid(format!("policy is in {} mode, {mode} requested", self.mode)));
        }
        Ok(())
    }

    pub fn act_bayes<R: Rng + ?Sized>(&self, state: &[f64], belief: &GaussianBelief, rng: &mut R) -> Result<ActionSample> {
        self.require_mode(PolicyMode::Bayes)?;
        let x = self.bayes_input(state, belief)?;
        self.act(x, rng)
    }

    /// Draw a fresh latent from the belief and act on it.
    pub fn act_thompson<R: Rng + ?Sized>(&self, state: &[f64], belief: &GaussianBelief, rng: &mut R) -> Result<(ActionSample, LatentVector)> {
        self.require_mode(PolicyMode::Thompson)?;
        let omega = sample_latent(belief, rng);
        let x = self.task_input(state, &omega)?;
        Ok((self.act(x, rng)?, omega))
    }

    /// Multi-task acting on a known latent (training time).
    pub fn act_task<R: Rng + ?Sized>(&self, state: &[f64], omega: &LatentVector, rng: &mut R) -> Result<ActionSample> {
        self.require_mode(PolicyMode::Thompson)?;
        let x = self.task_input(state, omega)?;
        self.act(x, rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub max_grad_norm: f64,
    /// Environment steps collected per iteration.
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplier applied to rewards before advantage estimation.
    pub reward_scale: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.1,
            epochs: 4,
            minibatches: 8,
            entropy_coef: 0.0,
            value_coef: 0.5,
            gamma: 0.99,
            gae_lambda: 0.95,
            max_grad_norm: 0.5,
            batch_size: 1280,
            lr: 5e-5,
            reward_scale: 0.1,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0) || !(self.gamma > 0.0 && self.gamma <= 1.0) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::invalid("ppo needs clip > 0, 0 < gamma <= 1 and 0 <= gae_lambda <= 1"));
        }
        if self.epochs == 0 || self.minibatches == 0 || self.batch_size == 0 {
            return Err(Error::invalid("ppo epochs, minibatches and batch_size must be positive"));
        }
        if !(self.lr > 0.0 && self.max_grad_norm > 0.0 && self.reward_scale > 0.0) || self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return Err(Error::invalid("ppo rates and coefficients out of range"));
        }
        Ok(())
    }
}

/// How a step relates to the end of its episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepEnd {
    Running,
    /// The task ended; nothing follows.
    Terminal,
    /// Cut by the step limit. Carries the critic's estimate of the state
    /// reached, so a truncated episode is not mistaken for a terminal one.
    Truncated(f64),
}

impl StepEnd {
    pub fn is_done(self) -> bool {
        !matches!(self, StepEnd::Running)
    }

    /// `true` maps to `Terminal`.
    pub fn from_done(done: bool) -> Self {
        if done {
            StepEnd::Terminal
        } else {
            StepEnd::Running
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    pub input: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub end: StepEnd,
}

impl PolicySample {
    pub fn new(a: ActionSample, reward: f64, end: StepEnd) -> Self {
        PolicySample { input: a.input, action: a.unit, log_prob: a.log_prob, reward, value: a.value, end }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub samples: Vec<PolicySample>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn extend(&mut self, samples: impl IntoIterator<Item = PolicySample>) {
        self.samples.extend(samples);
    }

    /// Fill advantages and returns; the buffer must end on an episode
    /// boundary, or `bootstrap` supplies the value after the last step.
    pub fn finish(&mut self, gamma: f64, lambda: f64, reward_scale: f64, bootstrap: f64) {
        let rewards: Vec<f64> = self.samples.iter().map(|s| s.reward * reward_scale).collect();
        let values: Vec<f64> = self.samples.iter().map(|s| s.value).collect();
        let ends: Vec<StepEnd> = self.samples.iter().map(|s| s.end).collect();
        let (adv, ret) = compute_gae(&rewards, &values, &ends, bootstrap, gamma, lambda);
        self.advantages = adv;
        self.returns = ret;
    }
}

/// Generalised advantage estimation. The recursion restarts after every
/// step that ends an episode; a truncated step bootstraps from its carried
/// value, a terminal one from zero.
pub fn compute_gae(rewards: &[f64], values: &[f64], ends: &[StepEnd], bootstrap: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for h in (0..n).rev() {
        let (next_value, carry) = if let StepEnd::Truncated(v) = ends[h] {
            (v, 0.0)
        } else if ends[h] == StepEnd::Terminal {
            (0.0, 0.0)
        } else if h + 1 < n {
            (values[h + 1], running)
        } else {
            (bootstrap, 0.0)
        };
        let delta = rewards[h] + gamma * next_value - values[h];
        running = delta + gamma * lambda * carry;
        adv[h] = running;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Zero mean, unit (population) standard deviation.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return adv.iter().map(|a| a - mean).collect();
    }
    adv.iter().map(|a| (a - mean) / std).collect()
}

/// Per-sample clipped surrogate objective (to be maximised).
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Scalar nodes of the per-sample PPO loss.
#[derive(Debug, Clone, Copy)]
pub struct SampleLoss {
    pub total: NodeId,
    pub actor: NodeId,
    pub critic: NodeId,
    pub entropy: NodeId,
    pub log_prob: NodeId,
}

/// `-min(rho A, clip(rho) A) - c_e H + c_v (V - R)^2`, scaled by `weight`.
pub fn sample_loss<T: Real>(
    layout: &PolicyLayout,
    g: &mut Graph<'_, T>,
    sample: &PolicySample,
    advantage: f64,
    ret: f64,
    cfg: &PpoConfig,
    weight: f64,
) -> Result<SampleLoss> {
    let x = g.input_f64(&sample.input);
    let n = layout.evaluate(g, x, &sample.action)?;
    let shifted = g.offset(n.log_prob, T::of(-sample.log_prob));
    let ratio = g.exp(shifted);
    let unclipped = g.scale(ratio, T::of(advantage));
    let clipped_ratio = g.clamp(ratio, T::of(1.0 - cfg.clip), T::of(1.0 + cfg.clip));
    let clipped = g.scale(clipped_ratio, T::of(advantage));
    let surrogate = g.min(unclipped, clipped);
    let actor = g.scale(surrogate, -T::one());
    let ent = g.scale(n.entropy, T::of(-cfg.entropy_coef));
    let err = g.offset(n.value, T::of(-ret));
    let critic = g.square(err);
    let critic_w = g.scale(critic, T::of(cfg.value_coef));
    let sum = g.sum_scalars(&[actor, ent, critic_w]);
    let total = g.scale(sum, T::of(weight));
    Ok(SampleLoss { total, actor, critic, entropy: n.entropy, log_prob: n.log_prob })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PpoStats {
    pub actor_loss: f64,
    /// `0.5 * mean((V - R)^2)`.
    pub critic_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    pub updates: usize,
}

#[derive(Default, Clone, Copy)]
struct Acc {
    actor: f64,
    critic: f64,
    entropy: f64,
    clipped: f64,
    kl: f64,
}

impl Acc {
    fn add(&mut self, o: &Acc) {
        self.actor += o.actor;
        self.critic += o.critic;
        self.entropy += o.entropy;
        self.clipped += o.clipped;
        self.kl += o.kl;
    }
}

/// Mean-loss gradient over `idx`, computed in fixed chunks and reduced in
/// order.
pub fn minibatch_gradient<T: Real>(
    layout: &PolicyLayout,
    params: &ParamStore<T>,
    buffer: &RolloutBuffer,
    advantages: &[f64],
    idx: &[usize],
    cfg: &PpoConfig,
    exec: Execution,
) -> Result<(Grads<T>, PpoStats)> {
    let weight = 1.0 / idx.len() as f64;
    let chunks = idx.len().div_ceil(CHUNK);
    let partial = map_indexed(exec, chunks, |c| -> Result<(Grads<T>, Acc)> {
        let mut grads = params.zero_grads();
        let mut acc = Acc::default();
        for &i in &idx[c * CHUNK..((c + 1) * CHUNK).min(idx.len())] {
            let s = &buffer.samples[i];
            let mut g = Graph::new(params);
            let l = sample_loss(layout, &mut g, s, advantages[i], buffer.returns[i], cfg, weight)?;
            let log_ratio = g.scalar(l.log_prob).as_f64() - s.log_prob;
            acc.actor += g.scalar(l.actor).as_f64();
            acc.critic += 0.5 * g.scalar(l.critic).as_f64();
            acc.entropy += g.scalar(l.entropy).as_f64();
            acc.clipped += f64::from((log_ratio.exp() - 1.0).abs() > cfg.clip);
            acc.kl += log_ratio.exp() - 1.0 - log_ratio;
            g.backward_into(l.total, &mut grads)?;
        }
        Ok((grads, acc))
    });
    let mut grads = params.zero_grads();
    let mut acc = Acc::default();
    for r in partial {
        let (g, a) = r?;
        grads.add_assign(&g);
        acc.add(&a);
    }
    let stats = PpoStats {
        actor_loss: acc.actor * weight,
        critic_loss: acc.critic * weight,
        entropy: acc.entropy * weight,
        clip_fraction: acc.clipped * weight,
        approx_kl: acc.kl * weight,
        grad_norm: grads.global_norm(),
        updates: 1,
    };
    Ok((grads, stats))
}

/// Epochs of shuffled minibatch updates on a finished buffer.
pub fn ppo_update<R: Rng + ?Sized>(
    bundle: &mut PolicyBundle,
    adam: &mut Adam<f32>,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut R,
    exec: Execution,
) -> Result<PpoStats> {
    cfg.validate()?;
    if buffer.is_empty() || buffer.advantages.len() != buffer.len() || buffer.returns.len() != buffer.len() {
        return Err(Error::invalid("ppo_update needs a non-empty buffer with advantages and returns"));
    }
    let advantages = normalize_advantages(&buffer.advantages);
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    let per_mb = buffer.len().div_ceil(cfg.minibatches);
    let mut total = PpoStats::default();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(per_mb) {
            let (mut grads, s) = minibatch_gradient(&bundle.layout, &bundle.params, buffer, &advantages, idx, cfg, exec)?;
            if !(s.actor_loss.is_finite() && s.critic_loss.is_finite()) {
                return Err(Error::NonFinite(format!("ppo loss actor={} critic={}", s.actor_loss, s.critic_loss)));
            }
            clip_global_norm(&mut grads, cfg.max_grad_norm);
            adam.update(&mut bundle.params, &grads, cfg.lr)?;
            total.actor_loss += s.actor_loss;
            total.critic_loss += s.critic_loss;
            total.entropy += s.entropy;
            total.clip_fraction += s.clip_fraction;
            total.approx_kl += s.approx_kl;
            total.grad_norm += s.grad_norm;
            total.updates += 1;
        }
    }
    let u = total.updates as f64;
    total.actor_loss /= u;
    total.critic_loss /= u;
    total.entropy /= u;
    total.clip_fraction /= u;
    total.approx_kl /= u;
    total.grad_norm /= u;
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use proptest::prelude::*;

    fn bundle(mode: PolicyMode) -> PolicyBundle {
        PolicyBundle::new(&EnvSpec::minigolf(0), mode, PolicyArch::default(), &mut SeedStream::new(2).rng()).unwrap()
    }

    #[test]
    fn mode_names() {
        assert_eq!("bayes".parse::<PolicyMode>().unwrap(), PolicyMode::Bayes);
        assert_eq!(PolicyMode::Thompson.to_string(), "thompson");
        assert!("greedy".parse::<PolicyMode>().is_err());
    }

    #[test]
    fn zero_actor_has_zero_mean() {
        let mut b = bundle(PolicyMode::Bayes);
        for t in b.params_mut().tensors_mut() {
            if t.name.starts_with("actor.l") {
                t.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        for x in [0.0, 3.0, 17.0] {
            let input = b.bayes_input(&[x], &GaussianBelief::standard(1)).unwrap();
            let (mean, _, _) = b.forward(&input).unwrap();
            assert_eq!(mean, vec![0.0]);
        }
    }

    #[test]
    fn log_prob_matches_density() {
        let b = bundle(PolicyMode::Bayes);
        let mut rng = SeedStream::new(3).rng();
        let belief = GaussianBelief::new(vec![0.3], vec![0.2]).unwrap();
        for _ in 0..20 {
            let a = b.act_bayes(&[5.0], &belief, &mut rng).unwrap();
            let (mean, log_std, _) = b.forward(&a.input).unwrap();
            let s = log_std[0].exp();
            let pdf = (-(a.unit[0] - mean[0]).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
            assert!((a.log_prob - pdf.ln()).abs() < 1e-6);
            let p64 = b.params().cast::<f64>();
            let mut g = Graph::new(&p64);
            let x = g.input_f64(&a.input);
            let n = b.layout().evaluate(&mut g, x, &a.unit).unwrap();
            assert!((g.scalar(n.log_prob) - a.log_prob).abs() < 1e-5);
        }
    }

    #[test]
    fn actions_respect_bounds() {
        let mut b = bundle(PolicyMode::Bayes);
        let id = b.layout().log_std;
        b.params_mut().get_mut(id).data[0] = 2.0;
        let mut rng = SeedStream::new(4).rng();
        for _ in 0..500 {
            let a = b.act_bayes(&[1.0], &GaussianBelief::standard(1), &mut rng).unwrap();
            assert!(a.env_action[0] >= crate::envs::MINIGOLF_MIN_ACTION && a.env_action[0] <= crate::envs::MINIGOLF_MAX_ACTION);
        }
    }

    #[test]
    fn thompson_sampling_behaviour() {
        let b = bundle(PolicyMode::Thompson);
        let mut rng = SeedStream::new(5).rng();
        let wide = GaussianBelief::new(vec![0.0], vec![0.5]).unwrap();
        let (_, w1) = b.act_thompson(&[4.0], &wide, &mut rng).unwrap();
        let (_, w2) = b.act_thompson(&[4.0], &wide, &mut rng).unwrap();
        assert_ne!(w1, w2);
        let point = GaussianBelief::new(vec![0.25], vec![1e-300]).unwrap();
        let (a, w) = b.act_thompson(&[4.0], &point, &mut rng).unwrap();
        assert_eq!(w.0, vec![0.25]);
        let task = b.task_input(&[4.0], &LatentVector(vec![0.25])).unwrap();
        assert_eq!(a.input, task);
        assert_eq!(b.forward(&a.input).unwrap(), b.forward(&task).unwrap());
        assert!(b.act_bayes(&[4.0], &wide, &mut rng).is_err());
        assert!(bundle(PolicyMode::Bayes).act_task(&[4.0], &w, &mut rng).is_err());
    }

    #[test]
    fn bind_checks_shapes() {
        let b = bundle(PolicyMode::Bayes);
        assert!(PolicyBundle::from_params(b.spec(), PolicyMode::Bayes, b.arch().clone(), b.params().clone()).is_ok());
        assert!(PolicyBundle::from_params(b.spec(), PolicyMode::Thompson, b.arch().clone(), b.params().clone()).is_err());
    }

    #[test]
    fn gae_examples() {
        let (a, r) = compute_gae(&[1.0], &[0.0], &[StepEnd::Terminal], 0.0, 0.99, 0.95);
        assert_eq!((a[0], r[0]), (1.0, 1.0));
        let gamma: f64 = 0.99;
        let n = 200;
        let values: Vec<f64> = (0..n).map(|h| (1.0 - gamma.powi((n - h) as i32)) / (1.0 - gamma)).collect();
        let mut term = vec![StepEnd::Running; n];
        term[n - 1] = StepEnd::Terminal;
        let (a, _) = compute_gae(&vec![1.0; n], &values, &term, 0.0, gamma, 0.95);
        assert!(a.iter().all(|x| x.abs() < 1e-9));
        let rewards = [1.0, -2.0, 0.5, 3.0];
        let values = [0.3, 0.1, -0.4, 2.0];
        let (a, _) = compute_gae(&rewards, &values, &ends(&[false, true, false, false]), 7.0, 0.0, 0.95);
        for h in 0..4 {
            assert!((a[h] - (rewards[h] - values[h])).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_resets_at_boundaries() {
        let (a, _) = compute_gae(&[1.0, 1.0], &[0.0, 0.0], &ends(&[true, true]), 0.0, 0.9, 1.0);
        assert_eq!(a, vec![1.0, 1.0]);
        let (a, _) = compute_gae(&[1.0, 1.0], &[0.0, 0.0], &ends(&[false, true]), 0.0, 0.9, 1.0);
        assert!((a[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn gae_truncation_bootstraps_without_carry() {
        let trunc = [StepEnd::Truncated(10.0), StepEnd::Truncated(10.0)];
        let (a, r) = compute_gae(&[1.0, 1.0], &[0.0, 0.0], &trunc, 0.0, 0.9, 1.0);
        assert!((a[0] - 10.0).abs() < 1e-12 && (a[1] - 10.0).abs() < 1e-12);
        assert_eq!(a, r);
        let (a, _) = compute_gae(&[1.0, 1.0], &[0.0, 0.0], &[StepEnd::Running, StepEnd::Truncated(10.0)], 0.0, 0.9, 1.0);
        assert!((a[0] - (1.0 + 0.9 * 10.0)).abs() < 1e-12);
    }

    fn ends(done: &[bool]) -> Vec<StepEnd> {
        done.iter().map(|&d| StepEnd::from_done(d)).collect()
    }

    #[test]
    fn surrogate_example() {
        assert!((clipped_surrogate(2.0, 1.0, 0.1) - 1.1).abs() < 1e-12);
        assert!((clipped_surrogate(0.5, -1.0, 0.1) + 0.9).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn surrogate_bounded(r in 0.0f64..5.0, a in -10.0f64..10.0, c in 0.01f64..0.5) {
            prop_assert!(clipped_surrogate(r, a, c) <= (1.0 + c) * a.abs() + 1e-12);
        }

        #[test]
        fn normalized_advantages(xs in proptest::collection::vec(-100.0f64..100.0, 2..200)) {
            let spread = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - xs.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 1e-3);
            let n = normalize_advantages(&xs);
            let mean = n.iter().sum::<f64>() / n.len() as f64;
            let std = (n.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n.len() as f64).sqrt();
            prop_assert!(mean.abs() < 1e-6);
            prop_assert!((std - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn ppo_update_is_deterministic_across_execution() {
        let mut rng = SeedStream::new(8).rng();
        let b = bundle(PolicyMode::Bayes);
        let mut buf = RolloutBuffer::default();
        for i in 0..150 {
            let belief = GaussianBelief::new(vec![0.1], vec![0.3]).unwrap();
            let a = b.act_bayes(&[rng.random_range(0.0..20.0)], &belief, &mut rng).unwrap();
            buf.samples.push(PolicySample::new(a, -1.0 - (i % 3) as f64, StepEnd::from_done(i % 5 == 4)));
        }
        buf.samples.last_mut().unwrap().end = StepEnd::Truncated(-2.0);
        let cfg = PpoConfig { lr: 1e-3, ..PpoConfig::default() };
        buf.finish(cfg.gamma, cfg.gae_lambda, cfg.reward_scale, 0.0);
        let run = |exec| {
            let mut b2 = b.clone();
            let mut adam = Adam::new(b2.params(), Default::default());
            let s = ppo_update(&mut b2, &mut adam, &buf, &cfg, &mut SeedStream::new(1).rng(), exec).unwrap();
            (b2.params().flat(), s)
        };
        let (pa, sa) = run(Execution::Sequential);
        let (pb, sb) = run(Execution::Parallel);
        assert_eq!(pa, pb);
        assert_eq!(sa, sb);
        assert_eq!(sa.updates, cfg.epochs * cfg.minibatches);
        assert_ne!(pa, b.params().flat());
    }
}
