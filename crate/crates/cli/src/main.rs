//! `ggmc`: gossip-grid matrix completion runs from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure. Every failure
//! prints a single `error: ...` line on stderr.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{resolve, Mode, PartialConfig};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "ggmc",
    version,
    about = "Decentralized low-rank matrix completion over a gossiping block grid",
    after_help = "Config precedence: built-in defaults, then the --config file, then flags.\n\
                  Defaults: rho=1e3 lambda=1e-9 rank=5 p=4 q=4 a=5e-4 b=5e-7 max_iters=240000\n\
                  eval_every=1000 tol=1e-6 seed=42 init_scale=1/sqrt(rank) mode=sequential\n\
                  test_fraction=0.2"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic rank-constrained dataset plus ground truth
    Generate(GenerateArgs),
    /// Learn per-block factors from a ratings file
    Train(Box<TrainArgs>),
    /// Compute test RMSE of a stored checkpoint
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Matrix rows
    #[arg(long)]
    pub m: usize,
    /// Matrix columns
    #[arg(long)]
    pub n: usize,
    /// Ground-truth rank
    #[arg(long)]
    pub rank: usize,
    /// Fraction of entries observed for training
    #[arg(long = "train-frac", default_value_t = 0.2)]
    pub train_frac: f64,
    /// Fraction of entries held out for testing
    #[arg(long = "test-frac", default_value_t = 0.02)]
    pub test_frac: f64,
    /// Generation seed
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output directory for train.triples, test.triples, truth.ckpt
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Ratings file: *.dat / *.csv are MovieLens formats, anything else is
    /// `row col value` triples
    #[arg(long)]
    pub train: PathBuf,
    /// Flat key = value config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Held-out triples for RMSE reporting (triples inputs only)
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Where to write the per-block checkpoint; assembled global factors
    /// land next to it with a .global.* extension
    #[arg(long = "out-checkpoint")]
    pub out_checkpoint: PathBuf,
    /// Metrics CSV stream (iteration,cost,rmse_test,messages_sent,rounds)
    #[arg(long)]
    pub metrics: Option<PathBuf>,

    /// Override: consensus weight rho
    #[arg(long)]
    pub rho: Option<f64>,
    /// Override: regularization weight lambda
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Override: factorization rank
    #[arg(long)]
    pub rank: Option<usize>,
    /// Override: grid rows
    #[arg(long)]
    pub p: Option<usize>,
    /// Override: grid columns
    #[arg(long)]
    pub q: Option<usize>,
    /// Override: step-size numerator a
    #[arg(long)]
    pub a: Option<f64>,
    /// Override: step-size decay b
    #[arg(long)]
    pub b: Option<f64>,
    /// Override: iteration cap
    #[arg(long = "max-iters")]
    pub max_iters: Option<u64>,
    /// Override: evaluation period
    #[arg(long = "eval-every")]
    pub eval_every: Option<u64>,
    /// Override: convergence tolerance
    #[arg(long)]
    pub tol: Option<f64>,
    /// Override: run seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override: factor initialization half-width
    #[arg(long = "init-scale")]
    pub init_scale: Option<f64>,
    /// Override: `sequential` or `gossip`
    #[arg(long)]
    pub mode: Option<String>,
    /// Override: held-out fraction for MovieLens inputs
    #[arg(long = "test-fraction")]
    pub test_fraction: Option<f64>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Checkpoint to evaluate
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Held-out `row col value` triples
    #[arg(long)]
    pub test: PathBuf,
    /// Optional metrics CSV to write the RMSE row into
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

impl TrainArgs {
    fn overrides(&self) -> Result<PartialConfig, CliError> {
        Ok(PartialConfig {
            rho: self.rho,
            lambda: self.lambda,
            rank: self.rank,
            p: self.p,
            q: self.q,
            a: self.a,
            b: self.b,
            max_iters: self.max_iters,
            eval_every: self.eval_every,
            tol: self.tol,
            seed: self.seed,
            init_scale: self.init_scale,
            mode: self.mode.as_deref().map(Mode::parse).transpose()?,
            test_fraction: self.test_fraction,
        })
    }
}

fn run() -> Result<(), CliError> {
    let cli = Cli::try_parse().map_err(|e| {
        use clap::error::ErrorKind;
        if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
            let _ = e.print();
            std::process::exit(0);
        }
        // First rendered line carries the diagnostic; strip clap's own
        // prefix so ours stays single and uniform.
        let text = e.to_string();
        let first = text.lines().next().unwrap_or("invalid arguments");
        CliError::Usage(first.trim_start_matches("error: ").to_string())
    })?;
    match cli.command {
        Command::Generate(args) => commands::generate(&args),
        Command::Train(args) => {
            let file = args
                .config
                .as_deref()
                .map(config::parse_config_file)
                .transpose()?;
            let settings = resolve(file, args.overrides()?);
            commands::train(&args, &settings)
        }
        Command::Evaluate(args) => commands::evaluate(&args),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
