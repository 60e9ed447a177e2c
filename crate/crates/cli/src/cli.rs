//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{output_root, RunConfig};
use crate::error::{AppError, Result, EXIT_USAGE};
use crate::io::CorpusPaths;
use crate::stages::{self, Context};

#[derive(Debug, Parser)]
#[command(name = "cdainv", version, about = "Predict efficiency and equilibrium prices of double-auction markets from order books")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output root (default: config `output`, then $CDAINV_OUTPUT_ROOT, then ./cdainv-out).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of train/test splits; overrides the config.
    #[arg(long, global = true)]
    pub splits: Option<u32>,
    /// Number of simulated markets; overrides the config.
    #[arg(long, global = true)]
    pub markets: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Treat skipped input rows as errors.
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus.
    Simulate,
    /// Validate and import a corpus from CSV files.
    Ingest {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        deals: PathBuf,
        #[arg(long)]
        treatments: PathBuf,
        #[arg(long)]
        valuations: Option<PathBuf>,
    },
    /// Build order-book snapshot features.
    Featurize,
    /// Fit every configured model on every split.
    Fit,
    /// Score the fitted models on the test markets.
    Predict,
    /// Bucketed error tables, paired tests and diagnostics.
    Evaluate,
    /// Refit with feature families removed.
    Ablate,
    /// Collect results into report.json.
    Report,
    /// All stages in order.
    Run {
        /// Use the corpus already in the output tree.
        #[arg(long)]
        skip_simulate: bool,
    },
}

fn context(cli: &Cli) -> Result<Context> {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(n) = g.splits {
        cfg.n_splits = n;
    }
    if let Some(n) = g.markets {
        cfg.simulation.markets = n;
    }
    let out = output_root(g.out.as_deref(), &cfg);
    Context::new(cfg, out, g.jobs, g.strict)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let ctx = context(cli)?;
    match &cli.command {
        Command::Simulate => stages::simulate(&ctx),
        Command::Ingest { events, deals, treatments, valuations } => {
            let paths = CorpusPaths {
                events: events.clone(),
                deals: deals.clone(),
                valuations: valuations.clone(),
                treatments: treatments.clone(),
            };
            stages::ingest(&ctx, &paths).map(drop)
        }
        Command::Featurize => stages::featurize(&ctx).map(drop),
        Command::Fit => stages::fit_models(&ctx),
        Command::Predict => stages::predict(&ctx).map(drop),
        Command::Evaluate => stages::evaluate(&ctx),
        Command::Ablate => stages::ablate(&ctx).map(drop),
        Command::Report => stages::report(&ctx),
        Command::Run { skip_simulate } => stages::run(&ctx, *skip_simulate),
    }
}

/// Parse and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &AppError) -> i32 {
    eprintln!("error: {e}");
    e.exit_code()
}
