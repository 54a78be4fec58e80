//! Data-flow invariants of the sequential test loop.

use trio_core::envs::{EnvSpec, SequenceName, SequenceSpec};
use trio_core::inference::InferenceArch;
use trio_core::latent::GaussianBelief;
use trio_core::meta::{
    meta_test, meta_test_with, run_oracle, Aggregate, Models, OraclePrior, PriorProvider, PriorSource, TestConfig,
    TrackerPrior,
};
use trio_core::policy::{PolicyArch, PolicyMode};
use trio_core::rng::SeedStream;
use trio_core::Result;

#[derive(Debug, Clone, PartialEq)]
enum Event {
    Prior(usize),
    Observe(usize, Vec<f64>),
}

/// Wraps a provider and logs every call in order.
struct Logged<P> {
    inner: P,
    events: Vec<Event>,
    priors: Vec<GaussianBelief>,
}

impl<P: PriorProvider> PriorProvider for Logged<P> {
    fn prior(&mut self, t: usize) -> Result<GaussianBelief> {
        self.events.push(Event::Prior(t));
        let p = self.inner.prior(t)?;
        self.priors.push(p.clone());
        Ok(p)
    }

    fn observe(&mut self, t: usize, posterior_mean: &[f64]) -> Result<()> {
        self.events.push(Event::Observe(t, posterior_mean.to_vec()));
        self.inner.observe(t, posterior_mean)
    }

    fn source(&self) -> PriorSource {
        self.inner.source()
    }
}

fn models(mode: PolicyMode) -> Models {
    let spec = EnvSpec::minigolf(0);
    Models::new(&spec, mode, PolicyArch::for_spec(&spec), InferenceArch { hidden: 16, encoder: 16 }, SeedStream::new(5)).unwrap()
}

fn cfg(tasks: usize) -> TestConfig {
    TestConfig { tasks, ..TestConfig::default() }
}

fn tracker_seeds(seed: u64) -> SeedStream {
    SeedStream::new(seed).child("test").child("gp")
}

#[test]
fn prior_for_a_task_only_uses_earlier_tasks() {
    let m = models(PolicyMode::Bayes);
    let seq = SequenceSpec::named(SequenceName::MinigolfB);
    let test = cfg(12);
    let mut logged = Logged { inner: TrackerPrior::new(&seq, test.gp.clone(), tracker_seeds(3)).unwrap(), events: vec![], priors: vec![] };
    let record = meta_test_with(&m, &seq, &test, 3, &mut logged).unwrap();

    // Strict alternation: the prior for t is requested before anything
    // about task t is reported back.
    for (t, pair) in logged.events.chunks(2).enumerate() {
        assert_eq!(pair[0], Event::Prior(t));
        assert!(matches!(&pair[1], Event::Observe(s, _) if *s == t));
    }

    // Replaying only the observations before t reproduces the prior of t.
    let observed: Vec<Vec<f64>> = logged
        .events
        .iter()
        .filter_map(|e| match e {
            Event::Observe(_, m) => Some(m.clone()),
            _ => None,
        })
        .collect();
    for t in 0..test.tasks {
        let mut fresh = TrackerPrior::new(&seq, test.gp.clone(), tracker_seeds(3)).unwrap();
        for (s, m) in observed.iter().enumerate().take(t) {
            fresh.observe(s, m).unwrap();
        }
        assert_eq!(fresh.prior(t).unwrap(), logged.priors[t], "task {t}");
    }

    // Instrumentation does not change the run.
    assert_eq!(record.tasks, meta_test(&m, &seq, &test, PriorSource::Tracker, 3).unwrap().tasks);
}

#[test]
fn oracle_provider_and_oracle_run_agree() {
    for mode in [PolicyMode::Bayes, PolicyMode::Thompson] {
        let m = models(mode);
        let seq = SequenceSpec::named(SequenceName::MinigolfA);
        let a = meta_test_with(&m, &seq, &cfg(6), 9, &mut OraclePrior::new(&seq)).unwrap();
        let b = run_oracle(&m, &seq, &cfg(6), 9).unwrap();
        let c = meta_test(&m, &seq, &cfg(6), PriorSource::Oracle, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
    }
}

#[test]
fn sources_share_the_test_tasks() {
    let m = models(PolicyMode::Bayes);
    let seq = SequenceSpec::named(SequenceName::MinigolfA);
    let runs: Vec<_> = [PriorSource::Tracker, PriorSource::Oracle, PriorSource::Uninformative]
        .into_iter()
        .map(|s| meta_test(&m, &seq, &cfg(5), s, 2).unwrap())
        .collect();
    for t in 0..5 {
        assert_eq!(runs[0].tasks[t].true_latent, runs[1].tasks[t].true_latent);
        assert_eq!(runs[1].tasks[t].true_latent, runs[2].tasks[t].true_latent);
    }
}

#[test]
fn task_return_is_the_mean_over_episodes() {
    let m = models(PolicyMode::Bayes);
    let seq = SequenceSpec::named(SequenceName::MinigolfA);
    let test = TestConfig { aggregate: Aggregate::Mean, ..cfg(4) };
    for task in meta_test(&m, &seq, &test, PriorSource::Oracle, 1).unwrap().tasks {
        assert_eq!(task.episodes.len(), 4);
        let mean = task.episodes.iter().map(|e| e.ret).sum::<f64>() / 4.0;
        assert!((task.task_return - mean).abs() < 1e-12);
    }
}
