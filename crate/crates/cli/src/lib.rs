//! `balancebot` command-line front end.
//!
//! Subcommands return an exit code instead of exiting so they can be driven
//! from tests: 0 success, 2 configuration error, 3 the robot fell, 4 I/O
//! error, 5 controller synthesis failed.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use balance_core::config::{ConfigDocument, ConfigError, ControllerKind};
use balance_core::control::{lqr, CareOptions, LqrSolution};
use balance_core::plant::linearize;
use balance_core::simloop::run_episode;
use balance_core::trace::write_csv;
use balance_core::Error;
use balance_telemetry::{ServeError, ServeOptions, DEFAULT_PORT, DEFAULT_PUBLISH_HZ};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use thiserror::Error as ThisError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_FELL: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_SYNTHESIS: i32 = 5;

/// Trace path used when neither `--out` nor `[output] trace` is given.
pub const DEFAULT_TRACE: &str = "trace.csv";

#[derive(Debug, Parser)]
#[command(
    name = "balancebot",
    version,
    about = "Self-balancing robot simulation and control workbench"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one headless episode and write its trace as CSV.
    Simulate(SimulateArgs),
    /// Print the LQR design (A, B, K, closed-loop eigenvalues, residual).
    Lqr(LqrArgs),
    /// Run a live episode streamed over WebSocket.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ControllerFlag {
    Pd,
    Sfb,
    Lqr,
}

impl From<ControllerFlag> for ControllerKind {
    fn from(flag: ControllerFlag) -> Self {
        match flag {
            ControllerFlag::Pd => ControllerKind::Pd,
            ControllerFlag::Sfb => ControllerKind::Sfb,
            ControllerFlag::Lqr => ControllerKind::Lqr,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file (TOML); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV output path (overrides `[output] trace`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Episode length in seconds (overrides `[run] duration`).
    #[arg(long)]
    pub duration: Option<f64>,
    /// Noise seed (overrides `[run] seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Controller (overrides `[controller] kind`).
    #[arg(long, value_enum)]
    pub controller: Option<ControllerFlag>,
}

#[derive(Debug, Args)]
pub struct LqrArgs {
    /// Scenario file with plant parameters and `[controller.lqr]` weights, or an `[lqr_system]`.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Frames published per second.
    #[arg(long, default_value_t = DEFAULT_PUBLISH_HZ)]
    pub publish_hz: f64,
}

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("cannot read config {path}: {source}")]
    ReadConfig { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Config { path: String, source: ConfigError },
    #[error("invalid setting: {0}")]
    Invalid(Error),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("LQR synthesis failed: {0}")]
    Synthesis(Error),
    #[error(transparent)]
    Serve(ServeError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::ReadConfig { .. } | Self::Config { .. } | Self::Invalid(_) => EXIT_CONFIG,
            Self::Io { .. } => EXIT_IO,
            Self::Synthesis(_) => EXIT_SYNTHESIS,
            Self::Serve(ServeError::Bind { .. } | ServeError::Runtime(_)) => EXIT_IO,
            Self::Serve(ServeError::Scenario(e)) => Self::from_core(e.clone()).exit_code(),
            Self::Serve(ServeError::PublishRate(_)) => EXIT_CONFIG,
        }
    }

    fn from_core(e: Error) -> Self {
        match e {
            Error::SynthesisFailed { .. } => Self::Synthesis(e),
            other => Self::Invalid(other),
        }
    }
}

fn load_document(path: Option<&Path>) -> Result<(ConfigDocument, String), CliError> {
    let Some(path) = path else {
        return Ok((ConfigDocument::default(), "<defaults>".to_owned()));
    };
    let text = std::fs::read_to_string(path).map_err(|source| CliError::ReadConfig {
        path: path.to_owned(),
        source,
    })?;
    let name = path.display().to_string();
    let doc = ConfigDocument::parse(&text).map_err(|source| CliError::Config {
        path: name.clone(),
        source,
    })?;
    Ok((doc, name))
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match cli.command {
        Command::Simulate(args) => simulate(&args, out),
        Command::Lqr(args) => lqr_report(&args, out),
        Command::Serve(args) => serve(&args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one episode. Flags override the config file, which overrides defaults.
pub fn simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let (mut doc, name) = load_document(args.config.as_deref())?;
    if let Some(duration) = args.duration {
        doc.run.duration = duration;
    }
    if let Some(seed) = args.seed {
        doc.run.seed = seed;
    }
    if let Some(kind) = args.controller {
        doc.controller.kind = kind.into();
    }
    let scenario = doc
        .to_scenario()
        .map_err(|source| CliError::Config { path: name, source })?;
    let trace_path = args
        .out
        .clone()
        .or_else(|| doc.output.trace.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_TRACE));

    let episode = run_episode(&scenario).map_err(CliError::from_core)?;

    let io_err = |source| CliError::Io {
        path: trace_path.clone(),
        source,
    };
    let file = File::create(&trace_path).map_err(io_err)?;
    let mut writer = BufWriter::new(file);
    write_csv(&mut writer, &episode.rows, doc.output.downsample, episode.fell).map_err(io_err)?;
    writer.flush().map_err(io_err)?;

    writeln!(out, "{}", episode.summary).map_err(|source| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    })?;
    Ok(if episode.fell { EXIT_FELL } else { EXIT_OK })
}

fn to_dmatrix<const R: usize, const C: usize>(m: &nalgebra::SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_iterator(R, C, m.iter().copied())
}

/// Computes the LQR design for the configured plant (or `[lqr_system]`).
pub fn lqr_design(doc: &ConfigDocument, name: &str) -> Result<(DMatrix<f64>, DMatrix<f64>, LqrSolution), CliError> {
    let config_err = |source| CliError::Config {
        path: name.to_owned(),
        source,
    };
    let [a, b, q, r] = match &doc.lqr_system {
        Some(system) => system.matrices().map_err(config_err)?,
        None => {
            let plant = balance_core::plant::PlantParams::from(doc.plant);
            plant.validate().map_err(CliError::Invalid)?;
            let weights = doc.controller.lqr.weights();
            weights.validate().map_err(|e| match e {
                Error::InvalidParameter { invariant } => config_err(ConfigError::Range {
                    section: "controller.lqr",
                    invariant,
                }),
                other => CliError::Invalid(other),
            })?;
            let ss = linearize(&plant).map_err(CliError::Invalid)?;
            [
                to_dmatrix(&ss.a),
                to_dmatrix(&ss.b),
                to_dmatrix(&weights.q),
                DMatrix::from_element(1, 1, weights.r),
            ]
        }
    };
    let solution = lqr(&a, &b, &q, &r, &CareOptions::default()).map_err(CliError::from_core)?;
    Ok((a, b, solution))
}

fn format_matrix(label: &str, m: &DMatrix<f64>) -> String {
    let mut s = format!("{label} =\n");
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>16.9}")).collect();
        let _ = writeln!(s, "  [{} ]", cells.join(""));
    }
    s
}

/// Fixed-layout report: matrices with 9 decimals, eigenvalues as `re +/- im i`,
/// the CARE residual, and for the 4-state plant a `[controller.sfb]` line.
pub fn format_lqr_report(a: &DMatrix<f64>, b: &DMatrix<f64>, solution: &LqrSolution) -> String {
    let mut s = String::new();
    s.push_str(&format_matrix("A", a));
    s.push_str(&format_matrix("B", b));
    s.push_str(&format_matrix("K", &solution.k));
    s.push_str("closed-loop eigenvalues =\n");
    for e in &solution.closed_loop {
        let sign = if e.im < 0.0 { '-' } else { '+' };
        let _ = writeln!(s, "  {:>16.9} {sign} {:.9}i", e.re, e.im.abs());
    }
    let _ = writeln!(s, "care residual = {:.3e}", solution.residual);
    if solution.k.nrows() == 1 && solution.k.ncols() == 4 {
        let k: Vec<String> = solution.k.iter().map(|v| format!("{:.9}", -v)).collect();
        let _ = writeln!(s, "sfb k = [{}]", k.join(", "));
    }
    s
}

pub fn lqr_report(args: &LqrArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let (doc, name) = load_document(args.config.as_deref())?;
    let (a, b, solution) = lqr_design(&doc, &name)?;
    out.write_all(format_lqr_report(&a, &b, &solution).as_bytes())
        .map_err(|source| CliError::Io {
            path: PathBuf::from("<stdout>"),
            source,
        })?;
    Ok(EXIT_OK)
}

pub fn serve(args: &ServeArgs) -> Result<i32, CliError> {
    let (doc, name) = load_document(args.config.as_deref())?;
    let scenario = doc
        .to_scenario()
        .map_err(|source| CliError::Config { path: name, source })?;
    let options = ServeOptions {
        host: args.host,
        port: args.port,
        publish_hz: args.publish_hz,
    };
    balance_telemetry::serve_blocking(scenario, options).map_err(CliError::Serve)?;
    Ok(EXIT_OK)
}
