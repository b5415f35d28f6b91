//! Command-line front end: `landscape`, `scan`, `sequence`, `analyze`,
//! `calibrate` and `validate`.
//!
//! Exit codes: 0 success, 1 validation failure, 2 configuration error,
//! 3 I/O error, 4 no usable input.

pub mod cli;
pub mod commands;
pub mod error;
pub mod validate;

use clap::Parser;
use rotohom_core::io::RunConfig;

pub use cli::{Cli, Command, Format};
pub use error::CliError;

/// Loads the configuration named by `--config` (or the defaults) and
/// applies `--seed`.
pub fn load_config(common: &cli::Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.noise.rng_seed = seed;
    }
    Ok(cfg)
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("ROTOHOM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("ROTOHOM_THREADS must be a positive integer (got {raw:?})")))?;
    // Fails only if a pool already exists, in which case it is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let cfg = load_config(&cli.common)?;
    let out = &cli.common.out;
    let format = cli.common.format;
    match &cli.command {
        Command::Landscape => commands::landscape(&cfg, out, format),
        Command::Scan { rotation_hz } => commands::scan(&cfg, *rotation_hz, out, format),
        Command::Sequence { count } => commands::sequence(&cfg, *count, out, format),
        Command::Analyze { inputs } => commands::analyze(&cfg, inputs, out, format),
        Command::Calibrate { input } => commands::calibrate(input, out, format),
        Command::Validate => {
            let report = validate::run_validation(&cfg);
            print!("{report}");
            if report.passed() {
                Ok(())
            } else {
                let failed: Vec<_> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
                Err(CliError::Validation(failed.join(", ")))
            }
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
