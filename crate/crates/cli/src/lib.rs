//! Scenario-driven front end for the satellite QKD analysis library.

pub mod commands;
pub mod scenario;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use commands::{CommandError, CommandOutput, Format, Outcome, RunReport};
use satqkd_core::optimizer::ParamVector;
use satqkd_core::Error;
use scenario::{LoadedScenario, ScenarioError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_ABORTED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "satqkd", version, about = "Satellite QKD pass, link and key-length analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for output files and report.json; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Format of tabular outputs.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Elevation and slant range over the pass.
    Pass(#[command(flatten)] Common),
    /// Link budget terms at every pass sample.
    Budget(#[command(flatten)] Common),
    /// Key length at fixed source parameters.
    Skl {
        #[command(flatten)]
        common: Common,
        /// JSON file with mu, nu, p_mu, p_nu, p_z, min_elevation_deg.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        min_elevation: Option<f64>,
    },
    /// Optimise source parameters and minimum elevation.
    Optimize(#[command(flatten)] Common),
    /// Optimised key length for a list of culmination elevations.
    SweepElevation {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = commands::DEFAULT_SWEEP)]
        max_elevations: Vec<f64>,
    },
    /// Compare Monte Carlo tallies with the expected-value model.
    McValidate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        seeds: u32,
        /// Fraction of pulses simulated per sample.
        #[arg(long, default_value_t = 1e-3)]
        thinning: f64,
    },
    /// Store, combine and recover keys through a trusted node.
    RelayDemo {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = commands::DEFAULT_RELAY_LENGTHS)]
        lengths: Vec<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Pass(_) => "pass",
            Command::Budget(_) => "budget",
            Command::Skl { .. } => "skl",
            Command::Optimize(_) => "optimize",
            Command::SweepElevation { .. } => "sweep-elevation",
            Command::McValidate { .. } => "mc-validate",
            Command::RelayDemo { .. } => "relay-demo",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Pass(c) | Command::Budget(c) | Command::Optimize(c) => c,
            Command::Skl { common, .. }
            | Command::SweepElevation { common, .. }
            | Command::McValidate { common, .. }
            | Command::RelayDemo { common, .. } => common,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Command(#[from] CommandError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("--scenario is required for {0}")]
    MissingScenario(&'static str),
    #[error("params file: {0}")]
    Params(String),
}

fn is_validation(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidParameter { .. }
            | Error::InvalidScenario(_)
            | Error::NoSunSynchronousSolution { .. }
            | Error::MissingAtmosphereBand { .. }
            | Error::AtmosphereTable(_)
            | Error::NearFieldUnsupported { .. }
    )
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Scenario(ScenarioError::Io { .. }) | CliError::Io { .. } => EXIT_RUNTIME,
            CliError::Scenario(_) | CliError::MissingScenario(_) | CliError::Params(_) => EXIT_VALIDATION,
            CliError::Command(CommandError::Usage(_)) => EXIT_VALIDATION,
            CliError::Command(CommandError::Core(e)) if is_validation(e) => EXIT_VALIDATION,
            CliError::Command(_) => EXIT_RUNTIME,
        }
    }
}

fn load_params(path: &Path) -> Result<ParamVector, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Params(e.to_string()))
}

/// Runs one command and returns its artifacts without touching the output
/// directory.
pub fn execute(command: &Command) -> Result<(Option<String>, CommandOutput), CliError> {
    let common = command.common();
    let scenario = match (&common.scenario, command) {
        (Some(path), _) => Some(LoadedScenario::load(path)?),
        (None, Command::RelayDemo { .. }) => None,
        (None, _) => return Err(CliError::MissingScenario(command.name())),
    };
    let digest = scenario.as_ref().map(|s| s.digest.clone());
    let need = || scenario.as_ref().expect("checked above");
    let output = match command {
        Command::Pass(c) => commands::pass(need(), c.format)?,
        Command::Budget(c) => commands::budget(need(), c.format)?,
        Command::Skl {
            params, min_elevation, ..
        } => {
            let params = params.as_deref().map(load_params).transpose()?;
            commands::skl(need(), params, *min_elevation)?
        }
        Command::Optimize(c) => commands::optimize(need(), c.seed)?,
        Command::SweepElevation { common, max_elevations } => {
            commands::sweep_elevation(need(), max_elevations, common.seed, common.format)?
        }
        Command::McValidate {
            common, seeds, thinning, ..
        } => commands::mc_validate(need(), common.seed.unwrap_or(0), *seeds, *thinning)?,
        Command::RelayDemo { common, lengths } => commands::relay_demo(lengths, common.seed.unwrap_or(0))?,
    };
    Ok((digest, output))
}

fn exit_code_of(outcome: Outcome) -> i32 {
    match outcome {
        Outcome::Ok => EXIT_OK,
        Outcome::Aborted => EXIT_ABORTED,
        Outcome::CheckFailed => EXIT_RUNTIME,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Runs the command, writes its outputs and returns the process exit code.
pub fn run(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    match run_inner(cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn run_inner(cli: &Cli, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let command = &cli.command;
    let (digest, output) = execute(command)?;
    let code = exit_code_of(output.outcome);
    let common = command.common();
    match &common.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
                path: dir.clone(),
                source,
            })?;
            for artifact in &output.artifacts {
                write_file(&dir.join(&artifact.name), &artifact.bytes)?;
            }
            let report = RunReport {
                toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
                command: command.name().to_string(),
                scenario_digest: digest,
                seed: common.seed,
                outputs: output.artifacts.iter().map(|a| a.name.clone()).collect(),
                exit_code: code,
            };
            write_file(&dir.join("report.json"), &commands::to_json(&report))?;
        }
        None => {
            stdout
                .write_all(&output.primary().bytes)
                .map_err(|source| CliError::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })?;
        }
    }
    Ok(code)
}
