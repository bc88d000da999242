//! `elris`: batch front end for the pension-pool solver and simulator.

mod commands;
mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Command};
use thiserror::Error;

use config::{RunConfig, KEYS};

#[derive(Debug, Clone, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] elris_core::Error),
    #[error("{0} sweep cell(s) failed")]
    SweepFailed(usize),
    #[error("simulation requires --seed")]
    MissingSeed,
    #[error("exponent verdict {} not found; run `elris oracle` first", .0.display())]
    VerdictMissing(PathBuf),
    #[error("oracle validation failed")]
    OracleFailed,
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use elris_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Core(E::InvalidParameter { .. }) => 2,
            CliError::Core(E::MassLeak { .. }) => 3,
            CliError::SweepFailed(_) => 4,
            CliError::MissingSeed | CliError::Core(E::MissingSeed) => 5,
            CliError::VerdictMissing(_) => 6,
            CliError::OracleFailed => 7,
            CliError::Core(_) | CliError::Io(_) => 8,
        }
    }
}

fn cli() -> Command {
    let mut cmd = Command::new("elris")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Equivalent contribution rates for mortality-impaired members of a longevity pool")
        .subcommand_required(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("FILE")
                .help("INI-style configuration file"),
        );
    for (key, default, help) in KEYS {
        let help = match default {
            Some(d) => format!("{help} [default: {d}]"),
            None => help.to_string(),
        };
        cmd = cmd.arg(Arg::new(*key).long(*key).global(true).value_name("VALUE").help(help));
    }
    cmd.subcommand(Command::new("calibrate").about("Replacement rate of the guaranteed plan; writes eta.json"))
        .subcommand(Command::new("solve").about("One cell; writes result.json and appends to table.csv"))
        .subcommand(Command::new("sweep").about("Grid over n-list x mbar-list x gamma-list; writes sweep.csv"))
        .subcommand(Command::new("simulate").about("Income paths and percentile fan; writes paths.csv and fan.csv"))
        .subcommand(Command::new("generosity").about("Benefit-to-contribution ratios; writes generosity.csv"))
        .subcommand(Command::new("oracle").about("Independent validation suite and exponent verdict"))
}

fn load(matches: &ArgMatches) -> Result<RunConfig, CliError> {
    let flags: BTreeMap<String, String> = KEYS
        .iter()
        .filter_map(|(k, _, _)| matches.get_one::<String>(k).map(|v| (k.to_string(), v.clone())))
        .collect();
    let file = matches.get_one::<String>("config").map(PathBuf::from);
    RunConfig::from_values(&config::merge(file.as_deref(), &flags)?)
}

fn run(name: &str, matches: &ArgMatches) -> Result<(), CliError> {
    let cfg = load(matches)?;
    let dispatch = || match name {
        "calibrate" => commands::calibrate(&cfg),
        "solve" => commands::solve(&cfg),
        "sweep" => commands::sweep(&cfg),
        "simulate" => commands::simulate(&cfg),
        "generosity" => commands::generosity(&cfg),
        "oracle" => commands::oracle(&cfg),
        other => unreachable!("unknown subcommand {other}"),
    };
    match cfg.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?
            .install(dispatch),
        None => dispatch(),
    }
}

fn main() -> ExitCode {
    std::panic::set_hook(Box::new(|info| {
        eprintln!("internal error: {info}");
        std::process::exit(1);
    }));
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    match run(name, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("elris: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
