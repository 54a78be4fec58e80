//! PPO improves a one-stroke Minigolf bandit.

use trio_core::envs::EnvSpec;
use trio_core::meta::{meta_train, TrainConfig};
use trio_core::parallel::Execution;
use trio_core::policy::PolicyMode;

const ITERATIONS: usize = 50;
const BLOCK: usize = 10;

/// Mean return per block of iterations.
fn learning_curve(seed: u64) -> Vec<f64> {
    let mut env = EnvSpec::minigolf(0);
    env.max_steps = 1;
    env.episodes_per_task = 1;
    let mut cfg = TrainConfig::new(env, PolicyMode::Bayes, seed);
    cfg.iterations = ITERATIONS;
    cfg.ppo.batch_size = 256;
    cfg.ppo.lr = 3e-4;
    cfg.off_prior = false;
    let out = meta_train(&cfg, Execution::Parallel, |_| {}).unwrap();
    out.log.chunks(BLOCK).map(|c| c.iter().map(|r| r.mean_return).sum::<f64>() / c.len() as f64).collect()
}

#[test]
fn return_improves_block_by_block() {
    let improving = (0..5u64)
        .filter(|&seed| {
            let curve = learning_curve(seed);
            eprintln!("seed {seed}: {curve:.2?}");
            curve.windows(2).all(|w| w[1] > w[0])
        })
        .count();
    assert!(improving >= 4, "only {improving}/5 seeds improved monotonically");
}
