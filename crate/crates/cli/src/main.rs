use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use atbagging::selection::SeedMethod;
use atbagging_cli::{cmd_experiment, cmd_report, cmd_score, cmd_select, with_workers, CliError, RunConfig};
use clap::{Args, Parser, Subcommand};

/// Seed-subset selection and active-learning experiments on tabular data.
#[derive(Parser)]
#[command(name = "atbagging", version)]
struct Cli {
    /// Worker threads (defaults to the number of cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration. Defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set active.m_collect=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(self.config.as_deref(), &self.overrides)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Information-gain score of every source row (scores.csv).
    Score(ConfigArgs),
    /// Select a seed subset from the source (selection_<method>.csv).
    Select {
        #[command(flatten)]
        config: ConfigArgs,
        /// atbagging, random, pca_grid or loss_coreset.
        #[arg(long)]
        method: SeedMethod,
        /// Subset size.
        #[arg(long)]
        k: usize,
    },
    /// Replicated active-learning runs for every method and seed size.
    Experiment {
        #[command(flatten)]
        config: ConfigArgs,
        /// Trials per method and seed size (overrides `replicates`).
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Rebuild the summary of a finished run directory.
    Report {
        /// Directory written by `experiment`.
        #[arg(long)]
        dir: PathBuf,
    },
}

fn run(cli: Cli, interrupt: Arc<AtomicBool>) -> Result<PathBuf, CliError> {
    match cli.command {
        Command::Score(c) => {
            let cfg = c.load()?;
            with_workers(cli.workers, || cmd_score(&cfg))?
        }
        Command::Select { config, method, k } => {
            let cfg = config.load()?;
            with_workers(cli.workers, || cmd_select(&cfg, method, k))?
        }
        Command::Experiment { config, replicates } => {
            let mut cfg = config.load()?;
            if let Some(r) = replicates {
                cfg.replicates = r;
            }
            with_workers(cli.workers, || cmd_experiment(&cfg, &interrupt))?
        }
        Command::Report { dir } => cmd_report(&dir),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let interrupt = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&interrupt);
    if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
        log::warn!("cannot install interrupt handler: {e}");
    }
    match run(cli, interrupt) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
