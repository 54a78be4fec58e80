//! Sequential and parallel execution give bit-identical training runs.

use trio_core::envs::EnvSpec;
use trio_core::meta::{meta_train, TrainConfig};
use trio_core::parallel::{configure_from_env, Execution};
use trio_core::policy::PolicyMode;

fn small(spec: EnvSpec, mode: PolicyMode) -> TrainConfig {
    let mut cfg = TrainConfig::new(spec, mode, 3);
    cfg.iterations = 3;
    cfg.tasks_per_round = 4;
    cfg.ppo.batch_size = 200;
    cfg.policy_arch.hidden = vec![8, 8];
    cfg.inference_arch.hidden = 8;
    cfg.inference_arch.encoder = 8;
    cfg.inference.minibatches = 2;
    cfg
}

#[test]
fn sequential_and_parallel_training_agree() {
    // Several workers even on a single-core machine, so chunks really interleave.
    std::env::set_var("TRIO_THREADS", "4");
    configure_from_env();
    for (spec, mode) in [(EnvSpec::minigolf(0), PolicyMode::Bayes), (EnvSpec::goalreacher2d(), PolicyMode::Thompson)] {
        let cfg = small(spec, mode);
        let a = meta_train(&cfg, Execution::Sequential, |_| {}).unwrap();
        let b = meta_train(&cfg, Execution::Parallel, |_| {}).unwrap();
        assert_eq!(format!("{:?}", a.log), format!("{:?}", b.log));
        assert_eq!(a.models.policy.params().flat(), b.models.policy.params().flat());
        assert_eq!(a.models.inference.params().flat(), b.models.inference.params().flat());
    }
}
