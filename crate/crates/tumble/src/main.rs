use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tumble::output::OutputDir;
use tumble::{commands, RunConfig};

/// Exact transport and large-deviation quantities of run-and-tumble
/// particles, cross-checked against independent numerical routes.
///
/// Exit codes: 0 ok, 2 configuration error, 3 numerical failure,
/// 4 acceptance failure.
#[derive(Debug, Parser)]
#[command(name = "tumble", version)]
struct Cli {
    /// Model and run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Directory for every output file (overrides [output] dir).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Top-level seed (overrides [simulation] seed).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fourier–Laplace transforms, diffusion constants and the diffusive
    /// scaling diagnostic.
    Analyze,
    /// Free energies by every method and the rate function.
    Ldp,
    /// Monte Carlo statistics, CLT test and SCGF estimates.
    Simulate,
    /// The acceptance matrix; exits 4 if any criterion fails.
    Verify,
}

fn run(cli: Cli) -> tumble::Result<()> {
    let path = cli.config.ok_or_else(|| tumble::ConfigError {
        path: None,
        line: None,
        message: "--config PATH is required".into(),
    })?;
    let mut config = RunConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        config.simulation.seed = Some(seed);
    }
    let dir = cli.out.or_else(|| config.output.clone()).unwrap_or_else(|| PathBuf::from("tumble-out"));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    let out = OutputDir::create(dir)?;
    let written = pool.install(|| match cli.command {
        Command::Analyze => commands::analyze(&config, &out),
        Command::Ldp => commands::ldp(&config, &out),
        Command::Simulate => commands::simulate(&config, &out),
        Command::Verify => commands::verify(&config, &out, &mut |line| println!("{line}")),
    })?;
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
