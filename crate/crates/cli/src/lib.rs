//! The `oti` command-line tool.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

pub mod commands;
pub mod config;

pub use config::{load_config, Config};

#[derive(Debug, Parser)]
#[command(
    name = "oti",
    version,
    about = "Observe-then-incentivize bandit experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "oti-out")]
    pub out: PathBuf,

    /// Master seed (overrides `sim.master_seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Number of Monte Carlo runs for the command.
    #[arg(long, global = true)]
    pub runs: Option<usize>,

    /// Override a config key, e.g. `--set delta=0.001` or
    /// `--set generator.agents=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    /// Also write a per-step trace of the first episode.
    #[arg(long, global = true)]
    pub full_trace: bool,

    /// Overwrite existing output files.
    #[arg(long, global = true)]
    pub force: bool,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Monte Carlo runs of the incentivizing principal.
    Simulate,
    /// Same runs with a principal that never pays.
    Passive,
    /// Incentive cost against ln(1/delta).
    SweepDelta,
    /// Incentive cost against the number of agents.
    SweepM,
    /// Pull-count lower bound of standalone alpha-UCB.
    VerifyUcbBound,
    /// Draw a random instance and write it to `instance.toml`.
    GenerateInstance,
    /// Follow-versus-refuse comparison for one agent.
    Lemma1Check,
    /// Run the whole experiment pipeline into one directory.
    Repro,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] oti_core::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("{} already exists (use --force to overwrite)", .0.display())]
    Exists(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 2,
            CliError::Core(oti_core::Error::GenerationExhausted { .. }) => 3,
            _ => 1,
        }
    }
}

/// Output directory that refuses to clobber files unless forced.
#[derive(Debug, Clone)]
pub struct OutDir {
    root: PathBuf,
    force: bool,
}

impl OutDir {
    pub fn new(root: &Path, force: bool) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|source| CliError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            force,
        })
    }

    pub fn sub(&self, name: &str) -> Result<Self, CliError> {
        Self::new(&self.root.join(name), self.force)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn force(&self) -> bool {
        self.force
    }

    pub fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.path(name);
        if path.exists() && !self.force {
            return Err(CliError::Exists(path));
        }
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|source| CliError::Io { path, source })
    }

    /// Creates `name` and hands the writer to `write`.
    pub fn write(
        &self,
        name: &str,
        write: impl FnOnce(BufWriter<File>) -> oti_core::Result<()>,
    ) -> Result<(), CliError> {
        write(self.create(name)?)?;
        log::info!("wrote {}", self.path(name).display());
        Ok(())
    }
}

/// Resolves the configuration and dispatches the command.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("sim.master_seed={seed}"));
    }
    if let Some(runs) = cli.runs {
        let key = match cli.command {
            Command::VerifyUcbBound => "experiment.ucb_runs",
            Command::SweepM => "experiment.m_sweep_runs",
            _ => "sim.runs",
        };
        overrides.push(format!("{key}={runs}"));
    }
    let cfg = load_config(cli.config.as_deref(), &overrides)?;
    let out = OutDir::new(&cli.out, cli.force)?;
    let ctx = commands::Context {
        cfg,
        out,
        full_trace: cli.full_trace,
    };
    match cli.command {
        Command::Simulate => commands::simulate(&ctx, oti_core::Mode::Oti),
        Command::Passive => commands::simulate(&ctx, oti_core::Mode::Passive),
        Command::SweepDelta => commands::sweep_delta(&ctx),
        Command::SweepM => commands::sweep_m(&ctx),
        Command::VerifyUcbBound => commands::verify_ucb_bound(&ctx),
        Command::GenerateInstance => commands::generate_instance(&ctx),
        Command::Lemma1Check => commands::lemma1_check(&ctx),
        Command::Repro => commands::repro(&ctx),
    }
}
