//! Command-line front end for the `fbcap` toolkit.
//!
//! [`run`] takes the argument list and output streams explicitly so the whole
//! program can be driven from tests.

pub mod commands;
pub mod config;
pub mod table;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::CliError;
use crate::config::{ConfigError, RawConfig, RunConfig};
use crate::table::Table;

#[derive(Debug, Parser)]
#[command(name = "fbcap", version, about = "Capacity bounds for Gaussian channels with noisy feedback")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Finite-horizon bound with the nonfeedback and perfect-feedback baselines.
    Nblock,
    /// Stationary bound from filter optimization with frequency water-filling.
    Spectral,
    /// Finite-horizon bound over a list of parameter values.
    Sweep,
    /// Identity, derivative and random-search self checks.
    Check {
        /// Use a sign-flipped barrier gradient; the derivative check must fail.
        #[arg(long, hide = true)]
        inject_gradient_fault: bool,
    },
}

#[derive(Debug, Args)]
pub struct Overrides {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Feedback noise standard deviation (white feedback).
    #[arg(long, global = true)]
    pub sigma: Option<String>,
    /// MA(1) coefficient of the forward channel.
    #[arg(long, global = true)]
    pub alpha: Option<String>,
    /// Block length.
    #[arg(long, global = true)]
    pub n: Option<String>,
    /// Average power per transmission.
    #[arg(long, global = true)]
    pub power: Option<String>,
    /// Number of feedback filter taps.
    #[arg(long, global = true)]
    pub taps: Option<String>,
    /// Frequency grid intervals on [0, π].
    #[arg(long, global = true)]
    pub grid: Option<String>,
    /// Seed for the randomized checks.
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// Output format: csv or json.
    #[arg(long, global = true)]
    pub format: Option<String>,
    /// Write output here instead of standard output.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<String>,
    /// Swept parameter: sigma, alpha, power or n.
    #[arg(long, global = true)]
    pub param: Option<String>,
    /// Comma-separated sweep values.
    #[arg(long, global = true)]
    pub values: Option<String>,
}

impl Overrides {
    fn apply(&self, raw: &mut RawConfig) -> Result<(), ConfigError> {
        let pairs = [
            ("feedback.sigma", &self.sigma),
            ("channel.alpha", &self.alpha),
            ("channel.block_length", &self.n),
            ("channel.power", &self.power),
            ("spectral.taps", &self.taps),
            ("spectral.grid", &self.grid),
            ("solver.seed", &self.seed),
            ("output.format", &self.format),
            ("output.path", &self.out),
            ("sweep.param", &self.param),
            ("sweep.values", &self.values),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                raw.set(key, v.clone())?;
            }
        }
        Ok(())
    }
}

fn load(o: &Overrides) -> Result<RunConfig, ConfigError> {
    let mut raw = match &o.config {
        Some(path) => RawConfig::load(path)?,
        None => RawConfig::default(),
    };
    o.apply(&mut raw)?;
    RunConfig::from_raw(&raw)
}

fn emit(cfg: &RunConfig, table: &Table, stdout: &mut dyn Write) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Output(e.to_string());
    match &cfg.out {
        Some(path) => {
            let file = File::create(path)
                .map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            table.write(cfg.format, &mut w).map_err(io)?;
            w.flush().map_err(io)
        }
        None => table.write(cfg.format, stdout).map_err(io),
    }
}

fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load(&cli.overrides)?;
    match cli.command {
        Command::Nblock => emit(&cfg, &commands::nblock(&cfg)?, stdout),
        Command::Spectral => emit(&cfg, &commands::spectral(&cfg)?, stdout),
        Command::Sweep => {
            let (table, failures) = commands::sweep(&cfg)?;
            emit(&cfg, &table, stdout)?;
            if failures > 0 {
                return Err(CliError::Solver(format!("{failures} sweep point(s) failed")));
            }
            Ok(())
        }
        Command::Check {
            inject_gradient_fault,
        } => {
            let (table, passed) = commands::check(&cfg, inject_gradient_fault);
            emit(&cfg, &table, stdout)?;
            if !passed {
                let failed = table
                    .rows
                    .iter()
                    .filter(|r| r[1] == table::Cell::Text("FAIL".into()))
                    .count();
                let _ = writeln!(stderr, "check failed");
                return Err(CliError::CheckFailed(failed));
            }
            Ok(())
        }
    }
}

/// Runs the program on `args` (including the program name) and returns the
/// exit status.
pub fn run<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(stdout, "{text}")
            } else {
                write!(stderr, "{text}")
            };
            return code;
        }
    };
    match execute(&cli, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
