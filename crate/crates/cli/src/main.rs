mod analyze;
mod config;
mod error;
mod fit;
mod group;
mod ingest;
mod output;
mod pipeline;
mod predict;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{GroupingMode, KernelChoice, Overrides, RunConfig, SexChoice};
use crate::error::CliError;
use crate::pipeline::Context;

#[derive(Parser)]
#[command(name = "mortgp", version, about = "Smooth and forecast state mortality surfaces with multi-output Gaussian processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate inputs and write per-state training sets
    Ingest(RunArgs),
    /// Run the covariate PCA and build one group per state
    Group(RunArgs),
    /// Fit a model per target state, sex and kernel family
    Fit(RunArgs),
    /// Predict posterior surfaces from the fitted models
    Predict(RunArgs),
    /// Derive rankings, improvement factors and correlation tables
    Analyze(RunArgs),
    /// Run every step in order
    All(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Override fit.seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override grouping.mode
    #[arg(long, value_enum)]
    mode: Option<GroupingMode>,
    /// Override fit.sexes
    #[arg(long, value_enum)]
    sex: Option<SexChoice>,
    /// Override fit.kernels
    #[arg(long, value_enum)]
    kernel: Option<KernelChoice>,
    /// Override paths.output
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override fit.workers (0 = available parallelism)
    #[arg(long)]
    workers: Option<usize>,
}

impl RunArgs {
    fn context(&self) -> Result<Context, CliError> {
        let overrides =
            Overrides { seed: self.seed, mode: self.mode, sex: self.sex, kernel: self.kernel, out: self.out.clone(), workers: self.workers };
        let config = RunConfig::load(&self.config, &overrides)?;
        Ok(Context::new(config, &self.config))
    }
}

type Step = fn(&Context) -> Result<(), CliError>;

fn run(command: &Command) -> Result<(), CliError> {
    let (args, steps): (&RunArgs, &[Step]) = match command {
        Command::Ingest(a) => (a, &[ingest::run]),
        Command::Group(a) => (a, &[group::run]),
        Command::Fit(a) => (a, &[fit::run]),
        Command::Predict(a) => (a, &[predict::run]),
        Command::Analyze(a) => (a, &[analyze::run]),
        Command::All(a) => (a, &[ingest::run, group::run, fit::run, predict::run, analyze::run]),
    };
    let ctx = args.context()?;
    log::info!("config {} -> {}", ctx.out.config_hash(), ctx.out.root().display());
    steps.iter().try_for_each(|step| step(&ctx))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
