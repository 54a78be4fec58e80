//! Experiment configuration files.
//!
//! A config is TOML with the sections `[env]`, `[hyperprior]`, `[train]`,
//! `[ppo]`, `[inference]`, `[gp]` and `[test]`. Defaults depend on
//! `env.family`; a user file is merged key by key over them. Unknown keys
//! are rejected and every key left at its default is logged.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};
use trio_core::envs::{EnvSpec, Family};
use trio_core::inference::{InferenceArch, InferenceTrainConfig};
use trio_core::latent::HyperpriorSpec;
use trio_core::meta::{Aggregate, TestConfig, TrainConfig};
use trio_core::policy::{PolicyArch, PolicyMode, PpoConfig};
use trio_core::tracking::GpConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub family: Family,
    pub distractors: usize,
    pub max_steps: usize,
    pub episodes_per_task: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub mode: PolicyMode,
    pub iterations: usize,
    pub off_prior: bool,
    pub tasks_per_round: usize,
    pub policy_hidden: Vec<usize>,
    pub init_log_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceSection {
    pub lr: f64,
    pub lambda: f64,
    pub max_grad_norm: f64,
    pub minibatches: usize,
    pub epochs: usize,
    pub hidden: usize,
    pub encoder: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSection {
    pub tasks: usize,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSection,
    pub hyperprior: HyperpriorSpec,
    pub train: TrainSection,
    pub ppo: PpoConfig,
    pub inference: InferenceSection,
    pub gp: GpConfig,
    pub test: TestSection,
}

impl ExperimentConfig {
    /// Per-family defaults, scaled down to fit a single-machine budget.
    pub fn defaults(family: Family) -> Self {
        let spec = EnvSpec::for_family(family);
        // The stand-ins carry 100-step trajectories; several inference
        // updates per iteration are needed for the posterior mean to fit.
        let (batch, epochs, minibatches, entropy, lr, lambda, width, iterations, inf_minibatches) = match family {
            Family::Minigolf => (1280, 4, 8, 0.0, 5e-5, 1.0, 16, 500, 1),
            Family::Velocity1d => (6400, 2, 4, 0.01, 7e-4, 0.1, 128, 600, 8),
            Family::Goalreacher2d => (3200, 2, 2, 0.01, 5e-4, 0.1, 128, 600, 8),
        };
        let arch = InferenceArch::default();
        let inf = InferenceTrainConfig::default();
        ExperimentConfig {
            env: EnvSection { family, distractors: 0, max_steps: spec.max_steps, episodes_per_task: spec.episodes_per_task },
            hyperprior: spec.default_hyperprior(),
            train: TrainSection {
                mode: PolicyMode::Bayes,
                iterations,
                off_prior: true,
                tasks_per_round: 16,
                policy_hidden: vec![width, width],
                init_log_std: PolicyArch::for_spec(&spec).init_log_std,
            },
            ppo: PpoConfig { batch_size: batch, epochs, minibatches, entropy_coef: entropy, lr, ..PpoConfig::default() },
            inference: InferenceSection {
                lr: inf.lr,
                lambda,
                max_grad_norm: inf.max_grad_norm,
                minibatches: inf_minibatches,
                epochs: inf.epochs,
                hidden: arch.hidden,
                encoder: arch.encoder,
            },
            gp: GpConfig::default(),
            test: TestSection { tasks: if family == Family::Minigolf { 80 } else { 60 }, aggregate: Aggregate::Mean },
        }
    }

    pub fn env_spec(&self) -> EnvSpec {
        let mut spec = match self.env.family {
            Family::Minigolf => EnvSpec::minigolf(self.env.distractors),
            f => EnvSpec::for_family(f),
        };
        spec.max_steps = self.env.max_steps;
        spec.episodes_per_task = self.env.episodes_per_task;
        spec
    }

    pub fn policy_arch(&self) -> PolicyArch {
        PolicyArch { hidden: self.train.policy_hidden.clone(), init_log_std: self.train.init_log_std }
    }

    pub fn inference_arch(&self) -> InferenceArch {
        InferenceArch { hidden: self.inference.hidden, encoder: self.inference.encoder }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let i = &self.inference;
        TrainConfig {
            env: self.env_spec(),
            hyperprior: self.hyperprior.clone(),
            mode: self.train.mode,
            iterations: self.train.iterations,
            ppo: self.ppo.clone(),
            inference: InferenceTrainConfig { lr: i.lr, lambda: i.lambda, max_grad_norm: i.max_grad_norm, minibatches: i.minibatches, epochs: i.epochs },
            policy_arch: self.policy_arch(),
            inference_arch: self.inference_arch(),
            off_prior: self.train.off_prior,
            tasks_per_round: self.train.tasks_per_round,
            seed,
        }
    }

    pub fn test_config(&self) -> TestConfig {
        TestConfig { tasks: self.test.tasks, aggregate: self.test.aggregate, gp: self.gp.clone() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: trio_core::Error| ConfigError::Invalid(e.to_string());
        self.train_config(0).validate().map_err(invalid)?;
        self.gp.validate().map_err(invalid)?;
        if self.test.tasks == 0 {
            return Err(ConfigError::Invalid("test.tasks must be positive".into()));
        }
        if self.env.family != Family::Minigolf && self.env.distractors > 0 {
            return Err(ConfigError::Invalid("distractors are only defined for minigolf".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Merge a TOML document over the family defaults.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let user: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let family = match user.get("env").and_then(|e| e.get("family")) {
            None => Family::Minigolf,
            Some(Value::String(s)) => s.parse().map_err(|e: trio_core::Error| ConfigError::Invalid(e.to_string()))?,
            Some(other) => return Err(ConfigError::Invalid(format!("env.family must be a string, got {other}"))),
        };
        let mut merged = Table::try_from(ExperimentConfig::defaults(family)).expect("defaults serialise");
        merge(&mut merged, &user, "")?;
        let cfg: ExperimentConfig = Value::Table(merged).try_into().map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }
}

fn merge(base: &mut Table, user: &Table, prefix: &str) -> Result<(), ConfigError> {
    for (key, value) in user {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (base.get_mut(key), value) {
            (None, _) => return Err(ConfigError::UnknownKey(path)),
            (Some(Value::Table(b)), Value::Table(u)) => merge(b, u, &path)?,
            (Some(Value::Table(_)), _) => return Err(ConfigError::Invalid(format!("'{path}' must be a table"))),
            (Some(slot), v) => *slot = v.clone(),
        }
    }
    for (key, value) in base.iter() {
        if !user.contains_key(key) {
            let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
            if !value.is_table() {
                log::info!("config: '{path}' not set, using default {value}");
            } else if prefix.is_empty() {
                log::info!("config: section [{path}] not set, using defaults");
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        for f in Family::ALL {
            let d = ExperimentConfig::defaults(f);
            d.validate().unwrap();
            let back = ExperimentConfig::from_toml_str(&d.to_toml()).unwrap();
            assert_eq!(back, d);
        }
    }

    #[test]
    fn empty_file_is_minigolf_defaults() {
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), ExperimentConfig::defaults(Family::Minigolf));
    }

    #[test]
    fn family_selects_defaults() {
        let c = ExperimentConfig::from_toml_str("[env]\nfamily = \"velocity1d\"\n[ppo]\nlr = 1e-3\n").unwrap();
        assert_eq!(c.ppo.batch_size, 6400);
        assert_eq!(c.ppo.lr, 1e-3);
        assert_eq!(c.train.policy_hidden, vec![128, 128]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = ExperimentConfig::from_toml_str("[ppo]\nclipp = 0.2\n").unwrap_err();
        assert!(matches!(e, ConfigError::UnknownKey(ref k) if k == "ppo.clipp"), "{e}");
        assert!(matches!(ExperimentConfig::from_toml_str("[extra]\n").unwrap_err(), ConfigError::UnknownKey(_)));
    }

    #[test]
    fn parse_errors_carry_position() {
        let e = ExperimentConfig::from_toml_str("[ppo]\nclip = = 1\n").unwrap_err();
        let msg = e.to_string();
        assert!(matches!(e, ConfigError::Parse(_)));
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::from_toml_str("[ppo]\nclip = -1.0\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[train]\nmode = \"greedy\"\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[env]\nfamily = \"velocity1d\"\ndistractors = 2\n").is_err());
    }
}
