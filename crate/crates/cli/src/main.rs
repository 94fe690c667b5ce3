use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lmdfl_cli::experiment::{load_logs, render_summary, run_experiment, summarize};
use lmdfl_cli::spec::{parse_config, DEFAULT_TARGET_FACTOR, OUTPUT_DIR_ENV};
use lmdfl_cli::{tools, CliError, Result};
use lmdfl_core::quantizers::levels::{DEFAULT_MAX_ITER, DEFAULT_TOL};

#[derive(Parser)]
#[command(name = "lmdfl", version, about = "Quantized decentralized learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every arm of an experiment file and write JSONL logs and CSV summaries.
    Run {
        config: PathBuf,
        /// Output directory; overrides the file and the LMDFL_OUTPUT_DIR variable.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Fit a Lloyd-Max codebook to numbers read from a file.
    FitQuantizer {
        samples_file: PathBuf,
        #[arg(long)]
        s: usize,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
        max_iter: usize,
        /// Fit magnitudes scaled by the largest one, as the quantizer does.
        #[arg(long)]
        normalize: bool,
    },
    /// Spectral value of the mixing matrix built from an edge list.
    Zeta { edge_list: PathBuf },
    /// Evaluate the convergence bounds for a JSON set of constants.
    Bounds { config: PathBuf },
    /// Summarize the JSONL logs of a finished run.
    Compare {
        dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TARGET_FACTOR)]
        target_factor: f64,
    },
}

/// Writes to stdout, treating a closed pipe (`lmdfl ... | head`) as success.
fn emit(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_json(v: &serde_json::Value) -> Result<ExitCode> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
    emit(&format!("{text}\n"))?;
    Ok(ExitCode::SUCCESS)
}

fn run(config: &Path, output_dir: Option<PathBuf>) -> Result<ExitCode> {
    let spec = parse_config(config)?;
    let dir = output_dir.unwrap_or_else(|| spec.resolved_output_dir(std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from)));
    let (outcomes, summary) = run_experiment(&spec, &dir)?;
    emit(&format!("{}wrote {}\n", render_summary(&summary), dir.display()))?;
    let failed: Vec<&str> = outcomes.iter().filter(|o| o.error.is_some()).map(|o| o.name.as_str()).collect();
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("arms failed: {}", failed.join(", "));
        Ok(ExitCode::from(1))
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, output_dir } => run(&config, output_dir),
        Command::FitQuantizer { samples_file, s, tol, max_iter, normalize } => {
            print_json(&tools::fit_quantizer_file(&samples_file, s, tol, max_iter, normalize)?)
        }
        Command::Zeta { edge_list } => print_json(&tools::zeta_file(&edge_list)?),
        Command::Bounds { config } => print_json(&tools::bounds_file(&config)?),
        Command::Compare { dir, target_factor } => {
            if !(target_factor >= 1.0 && target_factor.is_finite()) {
                return Err(CliError::Config(format!("--target-factor must be ≥ 1, got {target_factor}")));
            }
            let outcomes = load_logs(&dir)?;
            emit(&render_summary(&summarize(&outcomes, target_factor)))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
