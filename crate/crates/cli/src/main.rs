//! `meshres`: one binary, one subcommand per pipeline stage.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
//! input), 3 runtime failure.

mod commands;

use std::process::ExitCode;

use clap::Parser;

use commands::{Cli, Failure};

fn init_threads() -> anyhow::Result<()> {
    let threads = match std::env::var("MESHRES_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .map_err(|_| anyhow::anyhow!("MESHRES_THREADS must be a positive integer, got {v:?}"))?,
        Err(_) => 1,
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build_global()?;
    Ok(())
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
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else if cli.verbose {
        log::LevelFilter::Debug
    } else {
        log::LevelFilter::Info
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
