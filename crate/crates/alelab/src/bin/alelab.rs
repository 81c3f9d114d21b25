use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use alelab::cli::{resolve_out, run, Experiment, EXIT_CONFIG, EXIT_USAGE};

/// Ricci-de Turck flow experiments on Eguchi-Hanson backgrounds.
#[derive(Debug, Parser)]
#[command(name = "alelab", version)]
struct Cli {
    /// Configuration file (`key = value` lines); defaults of the subcommand when absent.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overridden by ALELAB_OUT.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for parallel sub-experiments.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Progress on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convolution-rate sweep over the twelve (alpha, beta) pairs.
    Rates,
    /// Heat-semigroup decay rates.
    Heat,
    /// Ricci residual, kernel certificate and ADM mass of the background.
    Kernel,
    /// Moving-gauge stability run.
    Flow,
    /// Picard fixed point against direct integration.
    Picard,
    /// Scalar-curvature suite.
    Psc,
    /// Operator-identity suite.
    Check,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    if let Some(n) = cli.jobs {
        if n == 0 || rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("alelab: invalid --jobs {n}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    }
    let exp = match cli.command {
        Command::Rates => Experiment::Rates,
        Command::Heat => Experiment::Heat,
        Command::Kernel => Experiment::Kernel,
        Command::Flow => Experiment::Flow,
        Command::Picard => Experiment::Picard,
        Command::Psc => Experiment::Psc,
        Command::Check => Experiment::Check,
    };
    let out = resolve_out(cli.out.as_deref());
    ExitCode::from(run(exp, cli.config.as_deref(), &out, cli.verbose) as u8)
}
