use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::Context;
use rand::Rng;
use serde::{Deserialize, Serialize};
use trio_core::envs::{Environment, Family, SequenceSpec};
use trio_core::inference::InferenceNetwork;
use trio_core::latent::{normalize_from_task, GaussianBelief, LatentVector};
use trio_core::meta::{self, meta_train, Models, PriorSource, TrainError};
use trio_core::neural::{read_checkpoint, write_checkpoint};
use trio_core::parallel::Execution;
use trio_core::policy::{PolicyBundle, PolicyMode};
use trio_core::rng::SeedStream;
use trio_core::tracking::one_step_ahead;

use crate::config::{ConfigError, ExperimentConfig};
use crate::records;

pub const POLICY_CKPT: &str = "policy.ckpt";
pub const INFERENCE_CKPT: &str = "inference.ckpt";
pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical divergence: {0}")]
    Divergence(String),
    #[error("artifact mismatch: {0}")]
    Artifact(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Artifact(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

fn core_error(e: trio_core::Error) -> CliError {
    match e {
        trio_core::Error::NonFinite(m) => CliError::Divergence(m),
        trio_core::Error::NotPositiveDefinite => CliError::Divergence(e.to_string()),
        other => CliError::Other(other.into()),
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub command: String,
    pub code_version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub arguments: BTreeMap<String, String>,
    pub checkpoints: Vec<String>,
    pub csvs: Vec<String>,
    pub status: String,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    fn new(command: &str, seed: u64, config: &ExperimentConfig) -> Self {
        RunManifest {
            format_version: MANIFEST_VERSION,
            command: command.into(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config: config.clone(),
            arguments: BTreeMap::new(),
            checkpoints: Vec::new(),
            csvs: Vec::new(),
            status: "ok".into(),
            wall_clock_seconds: 0.0,
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Write via a temporary sibling and rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn write_manifest(path: &Path, m: &RunManifest) -> anyhow::Result<()> {
    write_atomic(path, serde_json::to_string_pretty(m)?.as_bytes())
}

fn save_models(dir: &Path, models: &Models) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(models.policy.params(), &mut buf)?;
    write_atomic(&dir.join(POLICY_CKPT), &buf)?;
    buf.clear();
    write_checkpoint(models.inference.params(), &mut buf)?;
    write_atomic(&dir.join(INFERENCE_CKPT), &buf)?;
    Ok(())
}

/// Load a trained model directory.
pub fn load_models(dir: &Path) -> Result<(ExperimentConfig, Models), CliError> {
    let artifact = |m: String| CliError::Artifact(m);
    let cfg = ExperimentConfig::load(&dir.join(CONFIG_SNAPSHOT)).map_err(|e| artifact(e.to_string()))?;
    let open = |name: &str| fs::File::open(dir.join(name)).map_err(|e| artifact(format!("{name}: {e}")));
    let policy = read_checkpoint(std::io::BufReader::new(open(POLICY_CKPT)?)).map_err(|e| artifact(format!("{POLICY_CKPT}: {e}")))?;
    let inference = read_checkpoint(std::io::BufReader::new(open(INFERENCE_CKPT)?)).map_err(|e| artifact(format!("{INFERENCE_CKPT}: {e}")))?;
    let spec = cfg.env_spec();
    let policy = PolicyBundle::from_params(&spec, cfg.train.mode, cfg.policy_arch(), policy).map_err(|e| artifact(format!("{POLICY_CKPT}: {e}")))?;
    let inference = InferenceNetwork::from_params(&spec, cfg.inference_arch(), inference).map_err(|e| artifact(format!("{INFERENCE_CKPT}: {e}")))?;
    Ok((cfg, Models { policy, inference }))
}

pub fn cmd_meta_train(config: &Path, seed: u64, out: &Path, exec: Execution) -> Result<(), CliError> {
    let start = Instant::now();
    let cfg = ExperimentConfig::load(config)?;
    let train = cfg.train_config(seed);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest = RunManifest::new("meta-train", seed, &cfg);
    manifest.arguments.insert("config".into(), config.display().to_string());
    manifest.arguments.insert("out".into(), out.display().to_string());
    write_atomic(&out.join(CONFIG_SNAPSHOT), cfg.to_toml().as_bytes())?;
    let every = (train.iterations / 20).max(1);
    let result = meta_train(&train, exec, |row| {
        if row.iteration % every == 0 || row.iteration + 1 == train.iterations {
            log::info!(
                "iteration {}/{}: mean return {:.3}, elbo {:.4}, tasks {}",
                row.iteration + 1,
                train.iterations,
                row.mean_return,
                row.elbo,
                row.tasks
            );
        }
    });
    let (models, log, failure) = match result {
        Ok(o) => (o.models, o.log, None),
        Err(TrainError::Config(e)) => return Err(CliError::Config(ConfigError::Invalid(e.to_string()))),
        Err(TrainError::Diverged(a)) => {
            let msg = a.to_string();
            (a.last_good, a.log, Some(msg))
        }
    };
    save_models(out, &models)?;
    let mut csv = Vec::new();
    records::write_train_log(&log, &mut csv)?;
    write_atomic(&out.join(TRAIN_LOG), &csv)?;
    manifest.checkpoints = vec![POLICY_CKPT.into(), INFERENCE_CKPT.into()];
    manifest.csvs = vec![TRAIN_LOG.into()];
    manifest.status = failure.clone().map_or_else(|| "ok".into(), |m| format!("diverged: {m}"));
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    write_manifest(&out.join(MANIFEST), &manifest)?;
    match failure {
        Some(m) => Err(CliError::Divergence(m)),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestMode {
    Bayes,
    Thompson,
    Oracle,
    Uninformative,
}

impl FromStr for TestMode {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "bayes" => Ok(TestMode::Bayes),
            "thompson" => Ok(TestMode::Thompson),
            "oracle" => Ok(TestMode::Oracle),
            "uninformative" => Ok(TestMode::Uninformative),
            _ => Err(CliError::Usage(format!("unknown mode '{s}' (bayes|thompson|oracle|uninformative)"))),
        }
    }
}

pub struct MetaTestArgs<'a> {
    pub models: &'a Path,
    pub sequence: &'a str,
    pub tasks: Option<usize>,
    pub mode: TestMode,
    pub seed: u64,
    pub out: &'a Path,
}

fn manifest_path_for(csv: &Path) -> PathBuf {
    let mut name = csv.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    csv.with_file_name(name)
}

pub fn cmd_meta_test(args: &MetaTestArgs<'_>) -> Result<(), CliError> {
    let start = Instant::now();
    let seq: SequenceSpec = args.sequence.parse().map_err(|e: trio_core::Error| CliError::Usage(e.to_string()))?;
    if args.tasks == Some(0) {
        return Err(CliError::Usage("--tasks must be at least 1".into()));
    }
    let (cfg, models) = load_models(args.models)?;
    let source = match (args.mode, models.mode()) {
        (TestMode::Bayes, PolicyMode::Bayes) | (TestMode::Thompson, PolicyMode::Thompson) => PriorSource::Tracker,
        (TestMode::Oracle, _) => PriorSource::Oracle,
        (TestMode::Uninformative, _) => PriorSource::Uninformative,
        (m, trained) => return Err(CliError::Artifact(format!("mode {m:?} requested but models were trained in {trained} mode"))),
    };
    meta::check_compatible(&models, &seq).map_err(|e| CliError::Artifact(e.to_string()))?;
    let mut test = cfg.test_config();
    if let Some(t) = args.tasks {
        test.tasks = t;
    }
    let record = meta::meta_test(&models, &seq, &test, source, args.seed).map_err(core_error)?;
    let mut csv = Vec::new();
    records::write_test_csv(&record, &mut csv)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_atomic(args.out, &csv)?;
    let mut manifest = RunManifest::new("meta-test", args.seed, &cfg);
    manifest.arguments.insert("models".into(), args.models.display().to_string());
    manifest.arguments.insert("sequence".into(), seq.name.to_string());
    manifest.arguments.insert("tasks".into(), test.tasks.to_string());
    manifest.arguments.insert("mode".into(), format!("{:?}", args.mode).to_lowercase());
    manifest.checkpoints = vec![
        args.models.join(POLICY_CKPT).display().to_string(),
        args.models.join(INFERENCE_CKPT).display().to_string(),
    ];
    manifest.csvs = vec![args.out.display().to_string()];
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    write_manifest(&manifest_path_for(args.out), &manifest)?;
    Ok(())
}

pub struct TrackEvalArgs<'a> {
    pub sequence: &'a str,
    pub noise: f64,
    pub tasks: usize,
    pub seed: u64,
    pub out: &'a Path,
    pub config: Option<&'a Path>,
}

pub fn cmd_track_eval(args: &TrackEvalArgs<'_>) -> Result<(), CliError> {
    let start = Instant::now();
    let seq: SequenceSpec = args.sequence.parse().map_err(|e: trio_core::Error| CliError::Usage(e.to_string()))?;
    if !(args.noise >= 0.0 && args.noise.is_finite()) || args.tasks == 0 {
        return Err(CliError::Usage("--noise must be >= 0 and --tasks >= 1".into()));
    }
    let cfg = match args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::defaults(seq.name.family()),
    };
    let rows = one_step_ahead(&seq, args.noise, args.tasks, args.seed, &cfg.gp).map_err(core_error)?;
    let mut csv = Vec::new();
    records::write_track_csv(args.seed, &rows, &mut csv)?;
    write_atomic(args.out, &csv)?;
    let mut manifest = RunManifest::new("track-eval", args.seed, &cfg);
    manifest.arguments.insert("sequence".into(), seq.name.to_string());
    manifest.arguments.insert("noise".into(), records::fmt_real(args.noise));
    manifest.arguments.insert("tasks".into(), args.tasks.to_string());
    manifest.csvs = vec![args.out.display().to_string()];
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    write_manifest(&manifest_path_for(args.out), &manifest)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutPolicy {
    Random,
    Checkpoint,
}

impl FromStr for RolloutPolicy {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "random" => Ok(RolloutPolicy::Random),
            "checkpoint" => Ok(RolloutPolicy::Checkpoint),
            _ => Err(CliError::Usage(format!("unknown policy '{s}' (random|checkpoint)"))),
        }
    }
}

pub struct EnvRolloutArgs<'a> {
    pub env: &'a str,
    /// Task-unit latent.
    pub latent: &'a [f64],
    pub policy: RolloutPolicy,
    pub models: Option<&'a Path>,
    pub steps: usize,
    pub seed: u64,
}

/// Step an environment for `steps` transitions (resetting after each
/// episode) and print them as CSV.
pub fn cmd_env_rollout<W: Write>(args: &EnvRolloutArgs<'_>, out: W) -> Result<(), CliError> {
    let family: Family = args.env.parse().map_err(|e: trio_core::Error| CliError::Usage(e.to_string()))?;
    let (spec, models) = match args.policy {
        RolloutPolicy::Random => (ExperimentConfig::defaults(family).env_spec(), None),
        RolloutPolicy::Checkpoint => {
            let dir = args.models.ok_or_else(|| CliError::Usage("--policy checkpoint needs --models".into()))?;
            let (cfg, m) = load_models(dir)?;
            if cfg.env.family != family {
                return Err(CliError::Artifact(format!("models are for {}, not {family}", cfg.env.family)));
            }
            (cfg.env_spec(), Some(m))
        }
    };
    if args.latent.len() != spec.latent_dim() {
        return Err(CliError::Usage(format!("{family} needs {} latent values, got {}", spec.latent_dim(), args.latent.len())));
    }
    let task = LatentVector::new(args.latent.to_vec()).map_err(|e| CliError::Usage(e.to_string()))?;
    let normalized = normalize_from_task(&task, &spec.latent_range).map_err(core_error)?;
    let mut env = Environment::new(spec.clone(), &task).map_err(|e| CliError::Usage(e.to_string()))?;
    let seeds = SeedStream::new(args.seed).child("env-rollout");
    let mut env_rng = seeds.child("env").rng();
    let mut act_rng = seeds.child("act").rng();
    let mut w = records::RolloutWriter::new(out, spec.state_dim, spec.action_dim)?;
    let prior = GaussianBelief::new(normalized.0.clone(), vec![0.1; spec.latent_dim()]).map_err(core_error)?;
    let mut episode = 0usize;
    let mut state = Vec::new();
    let mut need_reset = true;
    let mut hidden = Vec::new();
    let mut belief = prior.clone();
    for step in 0..args.steps {
        if need_reset {
            state = env.reset(&mut env_rng).map_err(core_error)?;
            if let Some(m) = &models {
                let (h, b) = m.inference.posterior_init(&prior).map_err(core_error)?;
                hidden = h;
                belief = b;
            }
            need_reset = false;
        }
        let action = match &models {
            None => {
                let unit: Vec<f64> = (0..spec.action_dim).map(|_| act_rng.random_range(-1.0..=1.0)).collect();
                spec.action_from_unit(&unit)
            }
            Some(m) => match m.mode() {
                PolicyMode::Bayes => m.policy.act_bayes(&state, &belief, &mut act_rng).map_err(core_error)?.env_action,
                PolicyMode::Thompson => m.policy.act_thompson(&state, &belief, &mut act_rng).map_err(core_error)?.0.env_action,
            },
        };
        let t = env.step(&action, &mut env_rng).map_err(core_error)?;
        if let Some(m) = &models {
            let (h, b) = m.inference.posterior_step(&hidden, &t, &prior).map_err(core_error)?;
            hidden = h;
            belief = b;
        }
        w.row(step, episode, &t)?;
        state = t.next_state.clone();
        if t.done {
            episode += 1;
            need_reset = true;
        }
    }
    w.finish()?;
    Ok(())
}
