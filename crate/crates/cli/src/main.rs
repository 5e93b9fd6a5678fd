mod args;
mod commands;
mod config;
mod data;

use std::process::ExitCode;

use clap::Parser;

use crate::args::Cli;
use crate::config::RunConfig;

/// Bad flags, config or paths (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// 1 for usage problems, 3 for numerical failures, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<toxtree::Error>() {
            return match e {
                toxtree::Error::Divergence { .. } | toxtree::Error::Numerical(_) | toxtree::Error::Undefined(_) => 3,
                _ => 2,
            };
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::resolve(&cli.global)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| UsageError(format!("cannot start {} worker threads: {e}", cfg.threads)))?;
    }
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| UsageError(format!("cannot create output directory {}: {e}", cfg.out.display())))?;
    commands::dispatch(cli.command, &cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
