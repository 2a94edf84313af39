//! `divreg`: incompressible registration with divergence-conforming
//! B-spline velocity fields.
//!
//! Exit codes: 0 success (registration converged), 2 registration stopped
//! without convergence, 10 I/O, 11 parse, 12 usage or configuration,
//! 13 geometry, 14 solver failure.

mod cli;
mod commands;
mod exit;

use clap::Parser;

use cli::Cli;

fn main() {
    let code = match Cli::try_parse() {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => exit::USAGE,
            };
            let _ = e.print();
            code
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> i32 {
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match commands::dispatch(&cli.command) {
        Ok(outcome) => {
            if cli.json {
                println!("{}", outcome.summary);
            } else {
                println!("{}", outcome.text);
            }
            outcome.code
        }
        Err(e) => {
            let code = e.exit_code();
            if cli.json {
                let doc = serde_json::json!({ "error": e.to_string(), "exit_code": code });
                println!("{doc}");
            }
            eprintln!("error: {e}");
            code
        }
    }
}
