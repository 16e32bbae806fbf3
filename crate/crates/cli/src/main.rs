//! `hwprox`: reproducible denoising jobs driven by JSON configs.
//!
//! Exit codes: 0 success, 1 failed gradient check or I/O failure, 2 missing
//! input, 3 invalid config or data, 4 numerical failure.

mod commands;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Context;
use error::CliError;

#[derive(Parser)]
#[command(name = "hwprox", version, about = "Weighted proximal hyperspectral denoising")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON job description.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config's `output_dir`.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Seed override; takes precedence over HWPROX_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for batch work.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Corrupt clean cubes with one of the five noise cases.
    Synth(Common),
    /// Train the weight network through unrolled solves.
    Train(Common),
    /// Restore cubes with a weighted target model.
    Denoise {
        #[command(flatten)]
        common: Common,
        /// Use W = 1 instead of the network's weights.
        #[arg(long)]
        uniform_weight: bool,
    },
    /// Score estimates against references.
    Eval(Common),
    /// Model-divergence report and solver probes.
    Theory(Common),
    /// Finite-difference audit of every differentiable operation.
    Gradcheck(Common),
}

impl Common {
    fn context(&self) -> Context {
        Context {
            config: self.config.clone(),
            out: self.out.clone(),
            seed: self.seed,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::Synth(c)
        | Command::Train(c)
        | Command::Eval(c)
        | Command::Theory(c)
        | Command::Gradcheck(c)
        | Command::Denoise { common: c, .. } => c,
    };
    if common.jobs == 0 {
        return Err(CliError::Invalid("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(common.jobs)
        .build_global()
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    let ctx = common.context();
    match &cli.command {
        Command::Synth(_) => commands::synth::run(&ctx),
        Command::Train(_) => commands::train::run(&ctx),
        Command::Denoise { uniform_weight, .. } => commands::denoise::run(&ctx, *uniform_weight),
        Command::Eval(_) => commands::eval::run(&ctx),
        Command::Theory(_) => commands::theory::run(&ctx),
        Command::Gradcheck(_) => commands::gradcheck::run(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hwprox: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
