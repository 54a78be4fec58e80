use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use trio_cli::commands::{self, CliError, EnvRolloutArgs, MetaTestArgs, TrackEvalArgs};
use trio_core::parallel::{configure_from_env, Execution};

#[derive(Parser)]
#[command(name = "trio", version, about = "Meta-RL with task inference and latent tracking")]
struct Cli {
    /// Run rollouts and gradient chunks on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train policy and inference networks on a task family.
    MetaTrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run trained models along a latent sequence.
    MetaTest {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        sequence: String,
        #[arg(long)]
        tasks: Option<usize>,
        /// bayes | thompson | oracle | uninformative
        #[arg(long, default_value = "bayes")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track a noisy latent sequence with the GP alone.
    TrackEval {
        #[arg(long)]
        sequence: String,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 80)]
        tasks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Optional experiment config whose [gp] section is used.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print environment transitions as CSV.
    EnvRollout {
        #[arg(long)]
        env: String,
        /// Latent in task units, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        latent: Vec<f64>,
        /// random | checkpoint
        #[arg(long, default_value = "random")]
        policy: String,
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match cli.command {
        Command::MetaTrain { config, seed, out } => commands::cmd_meta_train(&config, seed, &out, exec),
        Command::MetaTest { models, sequence, tasks, mode, seed, out } => commands::cmd_meta_test(&MetaTestArgs {
            models: &models,
            sequence: &sequence,
            tasks,
            mode: mode.parse()?,
            seed,
            out: &out,
        }),
        Command::TrackEval { sequence, noise, tasks, seed, out, config } => commands::cmd_track_eval(&TrackEvalArgs {
            sequence: &sequence,
            noise,
            tasks,
            seed,
            out: &out,
            config: config.as_deref(),
        }),
        Command::EnvRollout { env, latent, policy, models, steps, seed } => {
            let args = EnvRolloutArgs { env: &env, latent: &latent, policy: policy.parse()?, models: models.as_deref(), steps, seed };
            commands::cmd_env_rollout(&args, std::io::stdout().lock())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    configure_from_env();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}
