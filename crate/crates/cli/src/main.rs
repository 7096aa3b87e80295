//! `tempbal`: analyze weight snapshots, run scheduled training, and verify
//! the Hill estimator on synthetic spectra.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data or parse error,
//! 3 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "tempbal", version, about = "Spectral diagnostics and layer-wise LR scheduling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-layer heavy-tail metrics and ESD histograms for a .wsnp snapshot.
    Analyze {
        snapshot: PathBuf,
        #[arg(long, default_value = "median", value_parser = ["median", "ks", "fixfinger"])]
        policy: String,
        /// Histogram bins (fixfinger policy and histogram files).
        #[arg(long, default_value_t = 100)]
        bins: usize,
        /// Also write metrics.csv and per-layer histogram files here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train a desk-scale model under a key=value config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Tabulate Hill estimates on matrices with spectra λ_k = k^-s.
    Rmt {
        /// Comma-separated matrix sizes.
        #[arg(long, default_value = "64,256,1024")]
        q: String,
        /// Comma-separated exponents or a start:stop:step range.
        #[arg(long, default_value = "0.5:3.0:0.25")]
        s: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("TEMPBAL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("TEMPBAL_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Analyze {
            snapshot,
            policy,
            bins,
            out_dir,
        } => commands::analyze(&snapshot, &policy, bins, out_dir.as_deref()),
        Command::Train {
            config,
            seed,
            out_dir,
        } => commands::train(&config, seed, &out_dir),
        Command::Rmt { q, s, out, seed } => commands::rmt(&q, &s, out.as_deref(), seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
