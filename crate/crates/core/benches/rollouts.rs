use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use trio_core::envs::EnvSpec;
use trio_core::meta::{collect_iteration, Models, TrainConfig};
use trio_core::parallel::Execution;
use trio_core::policy::PolicyMode;
use trio_core::rng::SeedStream;
use trio_core::tracking::{GpConfig, Tracker};

fn rollouts(c: &mut Criterion) {
    let mut cfg = TrainConfig::new(EnvSpec::minigolf(0), PolicyMode::Bayes, 0);
    cfg.ppo.batch_size = 256;
    let models = Models::new(&cfg.env, cfg.mode, cfg.policy_arch.clone(), cfg.inference_arch, SeedStream::new(0)).unwrap();
    let mut group = c.benchmark_group("collect_iteration");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| collect_iteration(&models, &cfg, 0, exec).unwrap())
        });
    }
    group.finish();
}

fn tracking(c: &mut Criterion) {
    let mut group = c.benchmark_group("track_step_2d");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| {
                let mut tr = Tracker::new(2, GpConfig::default(), SeedStream::new(1)).unwrap().with_execution(exec);
                for t in 0..10 {
                    let x = t as f64 * 0.1;
                    tr.track_step(&[x.sin(), x.cos()], t).unwrap();
                }
            })
        });
    }
    group.finish();
}

criterion_group!(benches, rollouts, tracking);
criterion_main!(benches);
