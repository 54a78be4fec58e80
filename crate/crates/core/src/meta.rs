//! Meta-training, meta-testing and regret scoring.
//!
//! Training samples a prior per task from the hyperprior and a latent from
//! that prior, rolls the policy out with a live posterior, and updates the
//! policy (on-prior data only) and the inference network (on- and
//! off-prior data). Testing walks a latent sequence, replacing the prior of
//! each task with a one-step-ahead prediction from a [`PriorProvider`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::envs::{Environment, EnvSpec, Family, SequenceSpec, Trajectory};
use crate::error::{check_dim, Error, Result};
use crate::inference::{train_inference, InferenceArch, InferenceItem, InferenceNetwork, InferenceStats, InferenceTrainConfig};
use crate::latent::{
    normalize_from_task, rescale_to_task, sample_latent, sample_prior, GaussianBelief, HyperpriorSpec, LatentVector,
};
use crate::neural::{Adam, AdamConfig};
use crate::parallel::{map_indexed, Execution};
use crate::policy::{ppo_update, PolicyArch, PolicyBundle, PolicyMode, PolicySample, PpoConfig, PpoStats, RolloutBuffer, StepEnd};
use crate::rng::SeedStream;
use crate::tracking::{GpConfig, Tracker};

/// Smallest friction handed to the Minigolf dynamics; latents sampled
/// below it are clamped.
pub const MINIGOLF_MIN_FRICTION: f64 = 1e-3;

/// Clamp a normalised latent so that its task-unit value is admissible for
/// the environment. Identity for families without constraints.
pub fn admissible_latent(spec: &EnvSpec, omega: &LatentVector) -> Result<LatentVector> {
    check_dim(spec.latent_dim(), omega.dim())?;
    if spec.family != Family::Minigolf {
        return Ok(omega.clone());
    }
    let floor = normalize_from_task(&LatentVector(vec![MINIGOLF_MIN_FRICTION]), &spec.latent_range)?.0[0];
    Ok(LatentVector(vec![omega.0[0].max(floor)]))
}

#[derive(Debug, Clone)]
pub struct Models {
    pub policy: PolicyBundle,
    pub inference: InferenceNetwork,
}

impl Models {
    pub fn new(spec: &EnvSpec, mode: PolicyMode, policy: PolicyArch, inference: InferenceArch, seed: SeedStream) -> Result<Self> {
        Ok(Models {
            policy: PolicyBundle::new(spec, mode, policy, &mut seed.child("policy-init").rng())?,
            inference: InferenceNetwork::new(spec, inference, &mut seed.child("inference-init").rng())?,
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        self.policy.spec()
    }

    pub fn mode(&self) -> PolicyMode {
        self.policy.mode()
    }
}

/// How the actor is conditioned during a rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Acting<'a> {
    /// Bayes actor on the live belief.
    Belief,
    /// Thompson actor on a fresh posterior sample every step.
    PosteriorSample,
    /// Multi-task actor on the true latent (training in Thompson mode).
    TrueTask(&'a LatentVector),
}

impl Acting<'_> {
    fn for_mode(mode: PolicyMode) -> Acting<'static> {
        match mode {
            PolicyMode::Bayes => Acting::Belief,
            PolicyMode::Thompson => Acting::PosteriorSample,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeRun {
    pub trajectory: Trajectory,
    pub samples: Vec<PolicySample>,
    /// Belief after each step.
    pub beliefs: Vec<GaussianBelief>,
}

impl EpisodeRun {
    pub fn total_reward(&self) -> f64 {
        self.trajectory.total_reward()
    }

    pub fn final_belief(&self) -> &GaussianBelief {
        self.beliefs.last().unwrap_or(&self.trajectory.prior_used)
    }
}

/// Roll out one episode. `omega` is the normalised (admissible) latent.
pub fn run_episode(models: &Models, omega: &LatentVector, prior: &GaussianBelief, acting: Acting<'_>, seeds: SeedStream) -> Result<EpisodeRun> {
    let spec = models.spec();
    let task = rescale_to_task(omega, &spec.latent_range)?;
    let mut env = Environment::new(spec.clone(), &task)?;
    let mut env_rng = seeds.child("env").rng();
    let mut act_rng = seeds.child("act").rng();
    let mut state = env.reset(&mut env_rng)?;
    let (mut hidden, mut belief) = models.inference.posterior_init(prior)?;
    let mut transitions = Vec::new();
    let mut samples = Vec::new();
    let mut beliefs = Vec::new();
    loop {
        let a = match acting {
            Acting::Belief => models.policy.act_bayes(&state, &belief, &mut act_rng)?,
            Acting::PosteriorSample => models.policy.act_thompson(&state, &belief, &mut act_rng)?.0,
            Acting::TrueTask(w) => models.policy.act_task(&state, w, &mut act_rng)?,
        };
        let t = env.step(&a.env_action, &mut env_rng)?;
        let (h2, b2) = models.inference.posterior_step(&hidden, &t, prior)?;
        hidden = h2;
        belief = b2;
        beliefs.push(belief.clone());
        let end = if !t.done {
            StepEnd::Running
        } else if t.terminal {
            StepEnd::Terminal
        } else {
            StepEnd::Truncated(models.policy.value(&policy_input(models, &t.next_state, &belief, acting)?)?)
        };
        samples.push(PolicySample::new(a, t.reward, end));
        state = t.next_state.clone();
        let done = t.done;
        transitions.push(t);
        if done {
            break;
        }
    }
    Ok(EpisodeRun { trajectory: Trajectory { transitions, prior_used: prior.clone(), true_latent: Some(omega.clone()) }, samples, beliefs })
}

/// The actor input `acting` would build at `state`; a posterior sample is
/// replaced by the posterior mean.
fn policy_input(models: &Models, state: &[f64], belief: &GaussianBelief, acting: Acting<'_>) -> Result<Vec<f64>> {
    match acting {
        Acting::Belief => models.policy.bayes_input(state, belief),
        Acting::PosteriorSample => models.policy.task_input(state, &LatentVector(belief.mean().to_vec())),
        Acting::TrueTask(w) => models.policy.task_input(state, w),
    }
}

#[derive(Debug, Clone)]
pub struct TaskRun {
    pub episodes: Vec<EpisodeRun>,
}

impl TaskRun {
    pub fn final_posterior(&self) -> &GaussianBelief {
        self.episodes.last().expect("at least one episode").final_belief()
    }

    pub fn steps(&self) -> usize {
        self.episodes.iter().map(|e| e.trajectory.len()).sum()
    }

    pub fn task_return(&self, aggregate: Aggregate) -> f64 {
        let sum: f64 = self.episodes.iter().map(EpisodeRun::total_reward).sum();
        match aggregate {
            Aggregate::Mean => sum / self.episodes.len() as f64,
            Aggregate::Sum => sum,
        }
    }
}

/// All episodes of one task; the final belief of an episode becomes the
/// prior of the next.
pub fn run_task(models: &Models, omega: &LatentVector, prior: &GaussianBelief, acting: Acting<'_>, seeds: SeedStream) -> Result<TaskRun> {
    let mut prior = prior.clone();
    let mut episodes = Vec::with_capacity(models.spec().episodes_per_task);
    for e in 0..models.spec().episodes_per_task {
        let run = run_episode(models, omega, &prior, acting, seeds.index(e as u64))?;
        prior = run.final_belief().clone();
        episodes.push(run);
    }
    Ok(TaskRun { episodes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    #[default]
    Mean,
    Sum,
}

impl FromStr for Aggregate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregate::Mean),
            "sum" => Ok(Aggregate::Sum),
            _ => Err(Error::UnknownName(format!("aggregate '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub env: EnvSpec,
    pub hyperprior: HyperpriorSpec,
    pub mode: PolicyMode,
    pub iterations: usize,
    pub ppo: PpoConfig,
    pub inference: InferenceTrainConfig,
    pub policy_arch: PolicyArch,
    pub inference_arch: InferenceArch,
    pub off_prior: bool,
    /// Tasks rolled out in parallel per collection round.
    pub tasks_per_round: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(env: EnvSpec, mode: PolicyMode, seed: u64) -> Self {
        let policy_arch = PolicyArch::for_spec(&env);
        TrainConfig {
            hyperprior: env.default_hyperprior(),
            env,
            mode,
            iterations: 500,
            ppo: PpoConfig::default(),
            inference: InferenceTrainConfig::default(),
            policy_arch,
            inference_arch: InferenceArch::default(),
            off_prior: true,
            tasks_per_round: 16,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.hyperprior.validate()?;
        check_dim(self.env.latent_dim(), self.hyperprior.dim())?;
        self.ppo.validate()?;
        self.inference.validate()?;
        if self.tasks_per_round == 0 {
            return Err(Error::invalid("tasks_per_round must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainLogRow {
    pub iteration: usize,
    pub tasks: usize,
    pub env_steps: usize,
    pub off_prior_steps: usize,
    /// Mean per-task return (mean over each task's episodes), on-prior tasks.
    pub mean_return: f64,
    pub elbo: f64,
    pub mse: f64,
    pub trace: f64,
    pub kl: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Everything gathered in one training iteration.
#[derive(Debug, Clone)]
pub struct IterationData {
    pub buffer: RolloutBuffer,
    pub inference_items: Vec<InferenceItem>,
    pub on_prior_returns: Vec<f64>,
    pub on_prior_steps: usize,
    pub off_prior_steps: usize,
}

fn train_seeds(cfg: &TrainConfig) -> SeedStream {
    SeedStream::new(cfg.seed).child("train")
}

struct TaskSample {
    prior: GaussianBelief,
    on: TaskRun,
    off: Option<(GaussianBelief, TaskRun)>,
}

fn collect_task(models: &Models, cfg: &TrainConfig, seeds: SeedStream) -> Result<TaskSample> {
    let prior = sample_prior(&cfg.hyperprior, &mut seeds.child("prior").rng());
    let omega = admissible_latent(&cfg.env, &sample_latent(&prior, &mut seeds.child("latent").rng()))?;
    let acting = match cfg.mode {
        PolicyMode::Bayes => Acting::Belief,
        PolicyMode::Thompson => Acting::TrueTask(&omega),
    };
    let on = run_task(models, &omega, &prior, acting, seeds.child("on-prior"))?;
    let off = if cfg.off_prior {
        let wrong = sample_prior(&cfg.hyperprior, &mut seeds.child("wrong-prior").rng());
        let run = run_task(models, &omega, &wrong, acting, seeds.child("off-prior"))?;
        Some((wrong, run))
    } else {
        None
    };
    Ok(TaskSample { prior, on, off })
}

/// Roll out tasks in parallel rounds until the on-prior step budget is met.
pub fn collect_iteration(models: &Models, cfg: &TrainConfig, iteration: usize, exec: Execution) -> Result<IterationData> {
    let seeds = train_seeds(cfg).child("rollout").index(iteration as u64);
    let mut data = IterationData {
        buffer: RolloutBuffer::default(),
        inference_items: Vec::new(),
        on_prior_returns: Vec::new(),
        on_prior_steps: 0,
        off_prior_steps: 0,
    };
    let mut next_task = 0usize;
    while data.on_prior_steps < cfg.ppo.batch_size {
        let round = map_indexed(exec, cfg.tasks_per_round, |j| collect_task(models, cfg, seeds.index((next_task + j) as u64)));
        next_task += cfg.tasks_per_round;
        for task in round {
            let task = task?;
            data.on_prior_steps += task.on.steps();
            data.on_prior_returns.push(task.on.task_return(Aggregate::Mean));
            for ep in task.on.episodes {
                data.buffer.extend(ep.samples);
                data.inference_items.push(InferenceItem { trajectory: ep.trajectory, prior: task.prior.clone(), off_prior: false });
            }
            if let Some((wrong, off)) = task.off {
                data.off_prior_steps += off.steps();
                for ep in off.episodes {
                    data.inference_items.push(InferenceItem { trajectory: ep.trajectory, prior: wrong.clone(), off_prior: true });
                }
            }
        }
    }
    data.buffer.finish(cfg.ppo.gamma, cfg.ppo.gae_lambda, cfg.ppo.reward_scale, 0.0);
    Ok(data)
}

/// Optimiser state carried across iterations.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub models: Models,
    pub policy_adam: Adam<f32>,
    pub inference_adam: Adam<f32>,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        let models = Models::new(&cfg.env, cfg.mode, cfg.policy_arch.clone(), cfg.inference_arch, train_seeds(cfg))?;
        Ok(TrainState {
            policy_adam: Adam::new(models.policy.params(), AdamConfig::default()),
            inference_adam: Adam::new(models.inference.params(), AdamConfig::default()),
            models,
        })
    }
}

/// One full iteration: collect, PPO on on-prior data, inference on all data.
pub fn train_iteration(state: &mut TrainState, cfg: &TrainConfig, iteration: usize, exec: Execution) -> Result<TrainLogRow> {
    let data = collect_iteration(&state.models, cfg, iteration, exec)?;
    let mut rng = train_seeds(cfg).child("ppo").index(iteration as u64).rng();
    let ppo: PpoStats = ppo_update(&mut state.models.policy, &mut state.policy_adam, &data.buffer, &cfg.ppo, &mut rng, exec)?;
    let inf: InferenceStats =
        train_inference(&mut state.models.inference, &data.inference_items, &mut state.inference_adam, &cfg.inference, exec)?;
    let tasks = data.on_prior_returns.len();
    Ok(TrainLogRow {
        iteration,
        tasks,
        env_steps: data.on_prior_steps,
        off_prior_steps: data.off_prior_steps,
        mean_return: data.on_prior_returns.iter().sum::<f64>() / tasks as f64,
        elbo: inf.loss,
        mse: inf.mse,
        trace: inf.trace,
        kl: inf.kl,
        actor_loss: ppo.actor_loss,
        critic_loss: ppo.critic_loss,
        entropy: ppo.entropy,
        clip_fraction: ppo.clip_fraction,
        approx_kl: ppo.approx_kl,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub models: Models,
    pub log: Vec<TrainLogRow>,
}

/// Training stopped by a numerical failure; `last_good` holds the models
/// from before the failing iteration.
#[derive(Debug)]
pub struct TrainAbort {
    pub error: Error,
    pub iteration: usize,
    pub last_good: Models,
    pub log: Vec<TrainLogRow>,
}

impl fmt::Display for TrainAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "training aborted at iteration {}: {}", self.iteration, self.error)
    }
}

impl std::error::Error for TrainAbort {}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(Error),
    #[error(transparent)]
    Diverged(Box<TrainAbort>),
}

/// Run `cfg.iterations` iterations, reporting each log row as it lands.
pub fn meta_train(cfg: &TrainConfig, exec: Execution, mut on_row: impl FnMut(&TrainLogRow)) -> std::result::Result<TrainOutcome, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    let mut state = TrainState::new(cfg).map_err(TrainError::Config)?;
    let mut log = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let backup = state.models.clone();
        match train_iteration(&mut state, cfg, iteration, exec) {
            Ok(row) => {
                on_row(&row);
                log.push(row);
            }
            Err(error) => return Err(TrainError::Diverged(Box::new(TrainAbort { error, iteration, last_good: backup, log }))),
        }
    }
    Ok(TrainOutcome { models: state.models, log })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorSource {
    Tracker,
    Oracle,
    Uninformative,
}

impl fmt::Display for PriorSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorSource::Tracker => "tracker",
            PriorSource::Oracle => "oracle",
            PriorSource::Uninformative => "uninformative",
        })
    }
}

/// Supplies the prior of each test task and receives the inferred
/// posterior mean once the task is finished.
pub trait PriorProvider {
    fn prior(&mut self, t: usize) -> Result<GaussianBelief>;
    fn observe(&mut self, t: usize, posterior_mean: &[f64]) -> Result<()>;
    fn source(&self) -> PriorSource;
}

/// GP prediction from all past posterior means; the sequence's initial
/// prior at `t = 0`.
pub struct TrackerPrior {
    initial: GaussianBelief,
    tracker: Tracker,
    next: Option<GaussianBelief>,
}

impl TrackerPrior {
    pub fn new(seq: &SequenceSpec, gp: GpConfig, seeds: SeedStream) -> Result<Self> {
        Ok(TrackerPrior { initial: seq.initial_prior.clone(), tracker: Tracker::new(seq.dim(), gp, seeds)?, next: None })
    }
}

impl PriorProvider for TrackerPrior {
    fn prior(&mut self, t: usize) -> Result<GaussianBelief> {
        if t == 0 {
            return Ok(self.initial.clone());
        }
        self.next.clone().ok_or_else(|| Error::invalid(format!("no prediction available for task {t}")))
    }

    fn observe(&mut self, t: usize, posterior_mean: &[f64]) -> Result<()> {
        self.next = Some(self.tracker.track_step(posterior_mean, t)?);
        Ok(())
    }

    fn source(&self) -> PriorSource {
        PriorSource::Tracker
    }
}

/// The distribution the test task is actually drawn from.
pub struct OraclePrior {
    seq: SequenceSpec,
}

impl OraclePrior {
    pub fn new(seq: &SequenceSpec) -> Self {
        OraclePrior { seq: seq.clone() }
    }
}

pub fn oracle_prior(seq: &SequenceSpec, t: usize) -> Result<GaussianBelief> {
    GaussianBelief::from_variance(seq.normalized_mean(t).0, seq.noise_variance.clone())
}

impl PriorProvider for OraclePrior {
    fn prior(&mut self, t: usize) -> Result<GaussianBelief> {
        oracle_prior(&self.seq, t)
    }

    fn observe(&mut self, _: usize, _: &[f64]) -> Result<()> {
        Ok(())
    }

    fn source(&self) -> PriorSource {
        PriorSource::Oracle
    }
}

/// Standard normal prior for every task.
pub struct UninformativePrior {
    dim: usize,
}

impl UninformativePrior {
    pub fn new(dim: usize) -> Self {
        UninformativePrior { dim }
    }
}

impl PriorProvider for UninformativePrior {
    fn prior(&mut self, _: usize) -> Result<GaussianBelief> {
        Ok(GaussianBelief::standard(self.dim))
    }

    fn observe(&mut self, _: usize, _: &[f64]) -> Result<()> {
        Ok(())
    }

    fn source(&self) -> PriorSource {
        PriorSource::Uninformative
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    pub tasks: usize,
    pub aggregate: Aggregate,
    pub gp: GpConfig,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig { tasks: 80, aggregate: Aggregate::Mean, gp: GpConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub ret: f64,
    pub steps: usize,
    pub posterior: GaussianBelief,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub task: usize,
    /// Normalised latent the task was run with.
    pub true_latent: LatentVector,
    pub prior: GaussianBelief,
    pub episodes: Vec<EpisodeRecord>,
    pub task_return: f64,
}

impl TaskRecord {
    pub fn final_posterior(&self) -> &GaussianBelief {
        &self.episodes.last().expect("at least one episode").posterior
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestRunRecord {
    pub seed: u64,
    pub sequence: SequenceSpec,
    pub mode: PolicyMode,
    pub source: PriorSource,
    pub tasks: Vec<TaskRecord>,
}

impl TestRunRecord {
    pub fn returns(&self) -> Vec<f64> {
        self.tasks.iter().map(|t| t.task_return).collect()
    }

    /// Mean task return over `range` (task indices, clipped to the run).
    pub fn mean_return(&self, range: std::ops::Range<usize>) -> f64 {
        let r = &self.tasks[range.start.min(self.tasks.len())..range.end.min(self.tasks.len())];
        r.iter().map(|t| t.task_return).sum::<f64>() / r.len() as f64
    }
}

/// Seeds of test task `t`, shared by every prior source so runs differ
/// only in the prior.
fn test_seeds(seed: u64) -> SeedStream {
    SeedStream::new(seed).child("test")
}

pub fn check_compatible(models: &Models, seq: &SequenceSpec) -> Result<()> {
    if models.spec().family != seq.name.family() {
        return Err(Error::invalid(format!(
            "sequence {} needs a {} model, got {}",
            seq.name,
            seq.name.family(),
            models.spec().family
        )));
    }
    check_dim(models.spec().latent_dim(), seq.dim())
}

/// Run `cfg.tasks` test tasks of `seq` with priors from `provider`.
pub fn meta_test_with(models: &Models, seq: &SequenceSpec, cfg: &TestConfig, seed: u64, provider: &mut dyn PriorProvider) -> Result<TestRunRecord> {
    check_compatible(models, seq)?;
    if cfg.tasks == 0 {
        return Err(Error::invalid("meta_test needs at least one task"));
    }
    let seeds = test_seeds(seed);
    let acting = Acting::for_mode(models.mode());
    let mut tasks = Vec::with_capacity(cfg.tasks);
    for t in 0..cfg.tasks {
        let prior = provider.prior(t)?;
        let omega = admissible_latent(models.spec(), &crate::envs::sample_test_task(seq, t, &mut seeds.child("task").index(t as u64).rng()))?;
        let run = run_task(models, &omega, &prior, acting, seeds.child("episodes").index(t as u64))?;
        provider.observe(t, run.final_posterior().mean())?;
        tasks.push(TaskRecord {
            task: t,
            true_latent: omega,
            prior,
            task_return: run.task_return(cfg.aggregate),
            episodes: run
                .episodes
                .iter()
                .map(|e| EpisodeRecord { ret: e.total_reward(), steps: e.trajectory.len(), posterior: e.final_belief().clone() })
                .collect(),
        });
    }
    Ok(TestRunRecord { seed, sequence: seq.clone(), mode: models.mode(), source: provider.source(), tasks })
}

pub fn meta_test(models: &Models, seq: &SequenceSpec, cfg: &TestConfig, source: PriorSource, seed: u64) -> Result<TestRunRecord> {
    match source {
        PriorSource::Tracker => {
            let mut p = TrackerPrior::new(seq, cfg.gp.clone(), test_seeds(seed).child("gp"))?;
            meta_test_with(models, seq, cfg, seed, &mut p)
        }
        PriorSource::Oracle => run_oracle(models, seq, cfg, seed),
        PriorSource::Uninformative => run_uninformative(models, seq, cfg, seed),
    }
}

pub fn run_oracle(models: &Models, seq: &SequenceSpec, cfg: &TestConfig, seed: u64) -> Result<TestRunRecord> {
    meta_test_with(models, seq, cfg, seed, &mut OraclePrior::new(seq))
}

pub fn run_uninformative(models: &Models, seq: &SequenceSpec, cfg: &TestConfig, seed: u64) -> Result<TestRunRecord> {
    meta_test_with(models, seq, cfg, seed, &mut UninformativePrior::new(seq.dim()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretCurve {
    pub oracle: Vec<f64>,
    pub agent: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl RegretCurve {
    pub fn per_task(&self) -> Vec<f64> {
        self.oracle.iter().zip(&self.agent).map(|(o, a)| o - a).collect()
    }
}

pub fn regret_from_returns(agent: &[f64], oracle: &[f64]) -> Result<RegretCurve> {
    check_dim(oracle.len(), agent.len())?;
    let mut acc = 0.0;
    let cumulative = oracle
        .iter()
        .zip(agent)
        .map(|(o, a)| {
            acc += o - a;
            acc
        })
        .collect();
    Ok(RegretCurve { oracle: oracle.to_vec(), agent: agent.to_vec(), cumulative })
}

pub fn regret(agent: &TestRunRecord, oracle: &TestRunRecord) -> Result<RegretCurve> {
    regret_from_returns(&agent.returns(), &oracle.returns())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::SequenceName;

    fn small_cfg(off_prior: bool) -> TrainConfig {
        let mut cfg = TrainConfig::new(EnvSpec::minigolf(0), PolicyMode::Bayes, 3);
        cfg.iterations = 0;
        cfg.ppo.batch_size = 64;
        cfg.tasks_per_round = 4;
        cfg.off_prior = off_prior;
        cfg
    }

    #[test]
    fn regret_examples() {
        let r = regret_from_returns(&[-3.0, -2.0], &[-1.0, -1.0]).unwrap();
        assert_eq!(r.cumulative, vec![2.0, 3.0]);
        let same = regret_from_returns(&[-1.0, -4.0], &[-1.0, -4.0]).unwrap();
        assert!(same.cumulative.iter().all(|&x| x == 0.0));
        assert!(regret_from_returns(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_iterations_returns_initial_models() {
        let cfg = small_cfg(true);
        let out = meta_train(&cfg, Execution::Sequential, |_| {}).unwrap();
        assert!(out.log.is_empty());
        let fresh = TrainState::new(&cfg).unwrap();
        assert_eq!(out.models.policy.params().flat(), fresh.models.policy.params().flat());
        assert_eq!(out.models.inference.params().flat(), fresh.models.inference.params().flat());
    }

    #[test]
    fn off_prior_does_not_touch_policy_data() {
        let with = small_cfg(true);
        let without = small_cfg(false);
        let models = TrainState::new(&with).unwrap().models;
        let a = collect_iteration(&models, &with, 0, Execution::Parallel).unwrap();
        let b = collect_iteration(&models, &without, 0, Execution::Parallel).unwrap();
        assert_eq!(a.buffer, b.buffer);
        assert!(a.off_prior_steps > 0 && b.off_prior_steps == 0);
        let on: Vec<_> = a.inference_items.iter().filter(|i| !i.off_prior).map(|i| i.trajectory.clone()).collect();
        let base: Vec<_> = b.inference_items.iter().map(|i| i.trajectory.clone()).collect();
        assert_eq!(on, base);
        assert!(a.inference_items.len() > b.inference_items.len());
    }

    #[test]
    fn collection_is_execution_independent() {
        let cfg = small_cfg(true);
        let models = TrainState::new(&cfg).unwrap().models;
        let a = collect_iteration(&models, &cfg, 2, Execution::Sequential).unwrap();
        let b = collect_iteration(&models, &cfg, 2, Execution::Parallel).unwrap();
        assert_eq!(a.buffer, b.buffer);
        assert!(a.on_prior_steps >= cfg.ppo.batch_size);
    }

    #[test]
    fn single_task_uses_initial_prior() {
        let cfg = small_cfg(false);
        let models = TrainState::new(&cfg).unwrap().models;
        let seq = SequenceSpec::named(SequenceName::MinigolfA);
        let test = TestConfig { tasks: 1, ..TestConfig::default() };
        let r = meta_test(&models, &seq, &test, PriorSource::Tracker, 4).unwrap();
        assert_eq!(r.tasks.len(), 1);
        assert_eq!(r.tasks[0].prior, seq.initial_prior);
        assert!((r.tasks[0].prior.mean()[0] - normalize_from_task(&LatentVector(vec![1.0]), &seq.range).unwrap().0[0]).abs() < 1e-12);
        assert_eq!(r.tasks[0].episodes.len(), 4);
        let r2 = meta_test(&models, &seq, &test, PriorSource::Tracker, 4).unwrap();
        assert_eq!(r, r2);
    }

    #[test]
    fn incompatible_sequence_rejected() {
        let cfg = small_cfg(false);
        let models = TrainState::new(&cfg).unwrap().models;
        let seq = SequenceSpec::named(SequenceName::AntA);
        assert!(meta_test(&models, &seq, &TestConfig::default(), PriorSource::Oracle, 1).is_err());
    }

    #[test]
    fn uninformative_priors_are_constant() {
        let cfg = small_cfg(false);
        let models = TrainState::new(&cfg).unwrap().models;
        let seq = SequenceSpec::named(SequenceName::MinigolfB);
        let test = TestConfig { tasks: 5, ..TestConfig::default() };
        let r = run_uninformative(&models, &seq, &test, 9).unwrap();
        assert!(r.tasks.iter().all(|t| t.prior == GaussianBelief::standard(1)));
        let o = run_oracle(&models, &seq, &test, 9).unwrap();
        for t in &o.tasks {
            assert_eq!(t.prior.mean(), seq.normalized_mean(t.task).as_slice());
        }
        // Same seed, same tasks across sources.
        for (a, b) in r.tasks.iter().zip(&o.tasks) {
            assert_eq!(a.true_latent, b.true_latent);
        }
    }

    #[test]
    fn admissible_latent_clamps_friction() {
        let spec = EnvSpec::minigolf(0);
        let w = admissible_latent(&spec, &LatentVector(vec![-3.0])).unwrap();
        let task = rescale_to_task(&w, &spec.latent_range).unwrap();
        assert!((task.0[0] - MINIGOLF_MIN_FRICTION).abs() < 1e-12);
        let ok = LatentVector(vec![0.2]);
        assert_eq!(admissible_latent(&spec, &ok).unwrap(), ok);
    }
}
