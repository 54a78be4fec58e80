//! End-to-end checks of the `trio` binary: exit codes, artifacts, CSV
//! shapes and determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trio_cli::records::{read_test_csv, test_header};
use trio_cli::RunManifest;
use trio_core::envs::{SequenceName, SequenceSpec};
use trio_core::meta::oracle_prior;

const TINY: &str = r#"
[train]
iterations = 1
tasks_per_round = 2
policy_hidden = [4, 4]

[ppo]
batch_size = 40

[inference]
hidden = 8
encoder = 8

[test]
tasks = 3
"#;

fn trio(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trio")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Train a tiny model set into `dir/models`.
fn train_tiny(dir: &Path, seed: &str) -> PathBuf {
    let cfg = dir.join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.join(format!("models-{seed}"));
    let o = trio(&["meta-train", "--config", s(&cfg), "--seed", seed, "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn missing_config_is_a_usage_error_with_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = trio(&["meta-train", "--config", s(&dir.path().join("nope.toml")), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn malformed_config_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[ppo]\nclip = = 0.1\n").unwrap();
    let o = trio(&["meta-train", "--config", s(&cfg), "--out", s(&dir.path().join("run"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    fs::write(&cfg, "[ppo]\nclipp = 0.1\n").unwrap();
    assert_eq!(code(&trio(&["meta-train", "--config", s(&cfg), "--out", s(&dir.path().join("run"))])), 2);
}

#[test]
fn one_iteration_run_writes_every_artifact_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_tiny(dir.path(), "4");
    for f in ["policy.ckpt", "inference.ckpt", "config.toml", "train_log.csv", "manifest.json"] {
        assert!(a.join(f).is_file(), "missing {f}");
    }
    let m = RunManifest::load(&a.join("manifest.json")).unwrap();
    assert_eq!((m.seed, m.status.as_str()), (4, "ok"));
    assert_eq!(m.checkpoints, vec!["policy.ckpt", "inference.ckpt"]);
    assert_eq!(m.config.train.iterations, 1);
    let log = fs::read_to_string(a.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);

    // Rerun into another directory: bit-identical outputs.
    let again = dir.path().join("again");
    fs::create_dir(&again).unwrap();
    let b = train_tiny(&again, "4");
    for f in ["policy.ckpt", "inference.ckpt", "train_log.csv", "config.toml"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    // Reproducible from the manifest's own config snapshot.
    let c = dir.path().join("from-manifest");
    let o = trio(&["meta-train", "--config", s(&a.join("config.toml")), "--seed", "4", "--out", s(&c)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(a.join("train_log.csv")).unwrap(), fs::read(c.join("train_log.csv")).unwrap());
}

#[test]
fn meta_test_rows_priors_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let models = train_tiny(dir.path(), "1");

    // Oracle run over the full desk-scale horizon.
    let csv = dir.path().join("oracle.csv");
    let o = trio(&["meta-test", "--models", s(&models), "--sequence", "minigolf_A", "--tasks", "80", "--mode", "oracle", "--out", s(&csv)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 80 * 4 + 1);
    assert_eq!(text.lines().next().unwrap(), test_header(1).join(","));
    let seq = SequenceSpec::named(SequenceName::MinigolfA);
    let rows = read_test_csv(text.as_bytes()).unwrap();
    for r in &rows {
        let p = oracle_prior(&seq, r.task).unwrap();
        assert!((r.prior.mean()[0] - p.mean()[0]).abs() <= 1e-8 * p.mean()[0].abs().max(1.0));
        assert!((r.prior.mean()[0] - seq.normalized_mean(r.task).0[0]).abs() < 1e-8);
        assert!(r.ret.is_finite() && r.ret <= 0.0);
    }
    assert!(manifest_of(&csv).exists());

    // Tracker run: the first task carries the sequence's initial prior.
    let csv = dir.path().join("bayes.csv");
    let o = trio(&["meta-test", "--models", s(&models), "--sequence", "minigolf_A", "--tasks", "3", "--out", s(&csv)]);
    assert_eq!(code(&o), 0);
    let rows = read_test_csv(fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 12);
    assert!((rows[0].prior.mean()[0] - seq.initial_prior.mean()[0]).abs() < 1e-8);
    assert!((rows[0].prior.std()[0] - seq.initial_prior.std()[0]).abs() < 1e-8);

    let run = |args: &[&str]| code(&trio(&[&["meta-test", "--models", s(&models), "--out", s(&dir.path().join("x.csv"))], args].concat()));
    assert_eq!(run(&["--sequence", "minigolf_Z"]), 2);
    assert_eq!(run(&["--sequence", "cheetah_A"]), 4);
    assert_eq!(run(&["--sequence", "minigolf_A", "--mode", "thompson"]), 4);
    assert_eq!(run(&["--sequence", "minigolf_A", "--mode", "greedy"]), 2);
    assert_eq!(code(&trio(&["meta-test", "--models", s(&dir.path().join("none")), "--sequence", "minigolf_A", "--out", s(&dir.path().join("y.csv"))])), 4);
}

fn manifest_of(csv: &Path) -> PathBuf {
    csv.with_file_name(format!("{}.manifest.json", csv.file_name().unwrap().to_str().unwrap()))
}

fn abs_errors(csv: &Path) -> Vec<(usize, f64)> {
    let mut rdr = csv::Reader::from_path(csv).unwrap();
    let h = rdr.headers().unwrap().clone();
    let task = h.iter().position(|c| c == "task").unwrap();
    let err = h.iter().position(|c| c == "abs_err_0").unwrap();
    rdr.records().map(|r| r.unwrap()).map(|r| (r[task].parse().unwrap(), r[err].parse().unwrap())).collect()
}

#[test]
fn track_eval_accuracy_single_task_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    assert_eq!(code(&trio(&["track-eval", "--sequence", "minigolf_A", "--tasks", "61", "--out", s(&a)])), 0);
    let errs = abs_errors(&a);
    let window: Vec<f64> = errs.iter().filter(|(t, _)| (15..=60).contains(t)).map(|e| e.1).collect();
    let mae = window.iter().sum::<f64>() / window.len() as f64;
    assert!(mae < 0.02, "MAE {mae}");

    let b = dir.path().join("b.csv");
    assert_eq!(code(&trio(&["track-eval", "--sequence", "minigolf_A", "--tasks", "61", "--out", s(&b)])), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let noisy = |out: &Path| trio(&["track-eval", "--sequence", "minigolf_B", "--noise", "0.05", "--tasks", "10", "--seed", "3", "--out", s(out)]);
    let (c, d) = (dir.path().join("c.csv"), dir.path().join("d.csv"));
    assert_eq!(code(&noisy(&c)), 0);
    assert_eq!(code(&noisy(&d)), 0);
    assert_eq!(fs::read(&c).unwrap(), fs::read(&d).unwrap());

    let one = dir.path().join("one.csv");
    assert_eq!(code(&trio(&["track-eval", "--sequence", "minigolf_A", "--tasks", "1", "--out", s(&one)])), 0);
    let mut rdr = csv::Reader::from_path(&one).unwrap();
    let h = rdr.headers().unwrap().clone();
    let rows: Vec<_> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 1);
    let col = |name: &str| rows[0][h.iter().position(|c| c == name).unwrap()].parse::<f64>().unwrap();
    let init = SequenceSpec::named(SequenceName::MinigolfA).initial_prior;
    assert!((col("pred_mean_0") - init.mean()[0]).abs() < 1e-8);
    assert!((col("pred_std_0") - init.std()[0]).abs() < 1e-8);

    assert_eq!(code(&trio(&["track-eval", "--sequence", "golf", "--out", s(&one)])), 2);
}

#[test]
fn env_rollout_rewards_header_and_errors() {
    let o = trio(&["env-rollout", "--env", "minigolf", "--latent", "1.0", "--steps", "200", "--seed", "2"]);
    assert_eq!(code(&o), 0);
    let mut rdr = csv::Reader::from_reader(o.stdout.as_slice());
    let h = rdr.headers().unwrap().clone();
    let reward = h.iter().position(|c| c == "reward").unwrap();
    let rewards: Vec<f64> = rdr.records().map(|r| r.unwrap()[reward].parse().unwrap()).collect();
    assert_eq!(rewards.len(), 200);
    assert!(rewards.iter().all(|r| [0.0, -1.0, -100.0].contains(r)), "{rewards:?}");

    let o = trio(&["env-rollout", "--env", "minigolf", "--latent", "1.0", "--steps", "0"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("step,episode,state_0,action_0,reward,next_state_0,done"));

    assert_eq!(code(&trio(&["env-rollout", "--env", "minigolf", "--latent", "1.0,2.0"])), 2);
    assert_eq!(code(&trio(&["env-rollout", "--env", "goalreacher2d", "--latent", "1.0"])), 2);
    assert_eq!(code(&trio(&["env-rollout", "--env", "pinball", "--latent", "1.0"])), 2);
    let o = trio(&["env-rollout", "--env", "goalreacher2d", "--latent", "-1,2", "--steps", "5"]);
    assert_eq!(code(&o), 0);
}
