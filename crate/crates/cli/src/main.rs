use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use lans_cli::run::EXIT_CONFIG;
use lans_cli::{execute, parse_config, Subcommand};

/// Stochastic LANS-alpha spectral Galerkin simulator and verification harness.
#[derive(Parser, Debug)]
#[command(name = "lans", version)]
struct Args {
    #[arg(value_enum)]
    subcommand: Subcommand,
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// CSV destination; overrides `output_path`. Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn fail(message: String) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(EXIT_CONFIG as u8)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    if let Ok(threads) = std::env::var("LANS_THREADS") {
        match threads.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    return fail(format!("LANS_THREADS: {e}"));
                }
            }
            _ => return fail(format!("LANS_THREADS must be a positive integer, got `{threads}`")),
        }
    }
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => return fail(format!("cannot read {}: {e}", args.config.display())),
    };
    let cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => return fail(format!("{}: {e}", args.config.display())),
    };

    let outcome = execute(args.subcommand, &cfg);
    for line in &outcome.log {
        eprintln!("{line}");
    }
    if !outcome.csv.is_empty() {
        let dest = args.out.or_else(|| cfg.output_path.clone());
        let written = match &dest {
            Some(path) => std::fs::write(path, &outcome.csv),
            None => std::io::stdout().lock().write_all(outcome.csv.as_bytes()),
        };
        if let Err(e) = written {
            return fail(format!("cannot write CSV: {e}"));
        }
    }
    ExitCode::from(outcome.exit_code as u8)
}
