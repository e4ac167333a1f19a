//! `stochham` — batch front-end for stochastic Hamiltonian simulations.
//!
//! Subcommands:
//! - `run --config PATH [--out DIR] [--seed U64] [--paths N] [--dt F] [--quiet]`
//!   executes one reproducible run and writes `summary.json`, `report.json`,
//!   `trajectories.csv` (capped), and `sweep.csv` when a sweep is configured.
//!   Exit code 0 iff all configured checks passed, 1 on check failure, 2 on
//!   configuration errors, 3 on runtime faults.
//! - `catalog [--json]` lists the available systems and their parameters.
//!
//! `STOCHHAM_THREADS` caps the worker pool; results are independent of the
//! thread count (per-path seeding with ordered reduction).

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use runner::{execute, Overrides, RunError};

#[derive(Parser)]
#[command(name = "stochham", about = "stochastic Hamiltonian systems: simulation and diagnostics", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a run configuration and emit artifact files.
    Run {
        /// Path to the TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for artifacts (default: current directory).
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of paths.
        #[arg(long)]
        paths: Option<usize>,
        /// Override the grid step.
        #[arg(long)]
        dt: Option<f64>,
        /// Suppress progress output.
        #[arg(long)]
        quiet: bool,
    },
    /// List the system catalog with parameter schemas.
    Catalog {
        /// Emit a machine-readable JSON document.
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("STOCHHAM_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            paths,
            dt,
            quiet,
        } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("cannot read config {}: {e}", config.display());
                    return ExitCode::from(2);
                }
            };
            let parsed = match RunConfig::parse(&text) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(2);
                }
            };
            let overrides = Overrides { seed, paths, dt };
            match execute(&parsed, &overrides, &out, quiet) {
                Ok(outcome) => {
                    if outcome.all_checks_passed {
                        ExitCode::SUCCESS
                    } else {
                        let failed: Vec<&str> = outcome
                            .reports
                            .iter()
                            .filter(|r| !r.passed)
                            .map(|r| r.name.as_str())
                            .collect();
                        eprintln!("checks failed: {}", failed.join(", "));
                        ExitCode::from(1)
                    }
                }
                Err(RunError::Config(m)) => {
                    eprintln!("configuration error: {m}");
                    ExitCode::from(2)
                }
                Err(RunError::Runtime(m)) => {
                    eprintln!("runtime error: {m}");
                    ExitCode::from(3)
                }
            }
        }
        Command::Catalog { json } => {
            use std::io::Write as _;
            let entries = stochham_core::systems::catalog();
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            // downstream pipes may close early; that is not an error
            let result: std::io::Result<()> = (|| {
                if json {
                    #[derive(serde::Serialize)]
                    struct Doc {
                        schema_version: u32,
                        systems: Vec<stochham_core::systems::CatalogEntry>,
                    }
                    let doc = Doc {
                        schema_version: 1,
                        systems: entries,
                    };
                    writeln!(
                        out,
                        "{}",
                        serde_json::to_string_pretty(&doc).expect("catalog serializes")
                    )?;
                } else {
                    for e in entries {
                        writeln!(
                            out,
                            "{} (dim {}, {})",
                            e.name,
                            e.dim,
                            if e.hamiltonian { "hamiltonian" } else { "ito" }
                        )?;
                        writeln!(out, "    {}", e.description)?;
                        for p in e.params {
                            writeln!(out, "    {} = {} — {}", p.name, p.default, p.description)?;
                        }
                    }
                }
                Ok(())
            })();
            match result {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("i/o error: {e}");
                    ExitCode::from(3)
                }
            }
        }
    }
}
