use clap::{Parser, Subcommand};
use mrbsde_cli::config::{load_config, ExperimentConfig};
use mrbsde_cli::run::{self, Outcome};
use mrbsde::suites::suite_ids;
use std::path::PathBuf;
use std::process::ExitCode;

/// Lattice solvers for mean-reflected backward equations under volatility
/// uncertainty.
///
/// Exit codes: 0 success, 2 config error, 3 solver non-convergence,
/// 4 property-suite failure, 5 regression diff.
#[derive(Parser)]
#[command(name = "mrbsde", version, about, verbatim_doc_comment)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the configured instance and write the summary CSV plus a run
    /// manifest.
    Solve {
        /// Path to a `key = value` config file.
        config: PathBuf,
    },
    /// Run one verification suite at the configured lattice resolution.
    Verify {
        config: PathBuf,
        /// Suite identifier; see `--suite help` for the list.
        #[arg(long)]
        suite: String,
    },
    /// Evaluate the optimal-stopping bounds (and, where exact, the saddle
    /// representation) of the configured instance.
    Game {
        config: PathBuf,
    },
    /// Regenerate a run from its config and compare every output file
    /// against a golden directory.
    Regress {
        config: PathBuf,
        /// Directory holding the outputs of a previous run.
        #[arg(long)]
        golden: PathBuf,
    },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, mrbsde::Error> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        mrbsde::Error::Config(format!("cannot read config {}: {e}", path.display()))
    })?;
    load_config(&text)
}

fn dispatch(cmd: &Cmd) -> Result<Outcome, mrbsde::Error> {
    match cmd {
        Cmd::Solve { config } => {
            let cfg = load(config)?;
            let dir = run::resolve_out_dir(&cfg);
            run::run_solve(&cfg, &dir)
        }
        Cmd::Verify { config, suite } => {
            if suite == "help" {
                println!("suites: {}", suite_ids().join(", "));
                return Ok(Outcome::Success);
            }
            let cfg = load(config)?;
            let dir = run::resolve_out_dir(&cfg);
            run::run_verify(&cfg, suite, &dir)
        }
        Cmd::Game { config } => {
            let cfg = load(config)?;
            let dir = run::resolve_out_dir(&cfg);
            run::run_game(&cfg, &dir)
        }
        Cmd::Regress { config, golden } => {
            let cfg = load(config)?;
            let dir = run::resolve_out_dir(&cfg);
            run::run_regress(&cfg, golden, &dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.cmd) {
        Ok(outcome) => ExitCode::from(outcome.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(run::exit_code_for(&e) as u8)
        }
    }
}
