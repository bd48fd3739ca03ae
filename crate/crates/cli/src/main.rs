mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "causalwit", version, about = "Causal witnesses and robustness of quantum process matrices")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Interior-point tolerance.
    #[arg(long, global = true, default_value_t = 1e-8)]
    pub sdp_tol: f64,
    /// Validity tolerance for input processes.
    #[arg(long, global = true, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Monte Carlo samples (games) or shots per setting (decompose).
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Directory for witness, decomposition and table files.
    #[arg(long, global = true, default_value = "causalwit-artifacts")]
    pub artifacts: PathBuf,
    /// Worker threads for Monte Carlo sampling.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Include wall time in the report (makes it run-dependent).
    #[arg(long, global = true)]
    pub timing: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Recompute one cluster of reference results.
    Reproduce { target: Target },
    /// Robustness of a process given as a JSON file or a built-in name.
    Robustness {
        #[arg(long, value_enum, default_value_t = Kind::Generalized)]
        kind: Kind,
        process: String,
    },
    /// Check a witness file for membership in the witness cone.
    WitnessVerify { file: PathBuf },
    /// Separable decomposition, or a witness if there is none.
    CheckSep { process: String },
    /// Estimate the OCB witness on a process from instrument statistics.
    Decompose {
        #[arg(default_value = "ocb")]
        process: String,
    },
    /// Evaluate a game.
    Game {
        game: GameKind,
        /// Process for the OCB game.
        #[arg(long, default_value = "ocb")]
        process: String,
    },
    /// Switch correlations for given instruments and the causality check.
    Correlations {
        /// Instrument JSON file, or `random` to draw instruments from --seed.
        #[arg(long)]
        instruments: String,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum Target {
    Ocb,
    Switch,
    Monotonicity,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum Kind {
    Generalized,
    Random,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum GameKind {
    Ocb,
    Chiribella,
    Finite,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    match commands::run(&cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
