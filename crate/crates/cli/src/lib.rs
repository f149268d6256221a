//! Command-line front end for the subflow toolkit.

pub mod commands;
pub mod config;
pub mod error;
pub mod svg;
pub mod verify;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use subflow_core::Method;

use crate::commands::{CommandOptions, CommandOutput};
use crate::config::{IntegratorOverride, RunConfig};
use crate::error::CliError;
use crate::verify::VerifyOptions;

#[derive(Debug, Parser)]
#[command(name = "subflow", version, about = "Normal geodesics, corank profiles and branching for sub-Riemannian structures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate a normal geodesic and write integrate.csv
    Integrate(CommonArgs),
    /// Branching spray of the glued structure: spray.csv and spray.svg
    Spray(CommonArgs),
    /// Corank profile and rank jumps of a geodesic: corank.csv
    Corank(CommonArgs),
    /// Realize a corank function on a product structure: product.csv
    Product(CommonArgs),
    /// Planar charged-particle trajectories: magnetic.csv and magnetic.svg
    Magnetic(MagneticArgs),
    /// Run the acceptance criteria
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run configuration
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides output_dir in the config)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    #[arg(long)]
    pub step: Option<f64>,
    /// Print the summary as JSON
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct MagneticArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Compare each charge with the corresponding Hamiltonian geodesic
    #[arg(long)]
    pub check_hamiltonian: bool,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub json: bool,
    /// Scale applied to every tolerance (testing aid)
    #[arg(long, default_value_t = 1.0, hide = true)]
    pub tolerance_scale: f64,
    /// Run only these criteria
    #[arg(long = "criterion", value_name = "ID")]
    pub criteria: Vec<u32>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

fn load_config(args: &CommonArgs) -> Result<RunConfig, CliError> {
    match &args.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

fn write_artifacts(dir: &Path, out: &CommandOutput) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir)?;
    out.artifacts
        .iter()
        .map(|a| {
            let path = dir.join(&a.name);
            std::fs::write(&path, &a.contents)?;
            Ok(path)
        })
        .collect()
}

fn run_command(
    args: &CommonArgs,
    check_hamiltonian: bool,
    f: fn(&RunConfig, &CommandOptions) -> Result<CommandOutput, CliError>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let opts = CommandOptions {
        integrator: IntegratorOverride { method: args.method, step: args.step },
        check_hamiltonian,
    };
    let out = f(&cfg, &opts)?;
    let dir = args.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    let written = write_artifacts(&dir, &out)?;
    if args.json {
        let mut summary = out.summary.clone();
        summary["files"] = json!(written.iter().map(|p| p.display().to_string()).collect::<Vec<_>>());
        writeln!(stdout, "{}", serde_json::to_string_pretty(&summary).expect("summary is valid JSON"))?;
    } else {
        for line in &out.lines {
            writeln!(stdout, "{line}")?;
        }
        for p in &written {
            writeln!(stdout, "wrote {}", p.display())?;
        }
    }
    match out.failure {
        Some(msg) => Err(CliError::Check(msg)),
        None => Ok(()),
    }
}

fn run_verify(args: &VerifyArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let opts = VerifyOptions { tolerance_scale: args.tolerance_scale };
    let reports = if args.criteria.is_empty() {
        verify::run_all(&opts)
    } else {
        args.criteria.iter().map(|id| verify::run_criterion(*id, &opts)).collect::<Result<Vec<_>, _>>()?
    };
    let failed: Vec<u32> = reports.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    if args.json {
        let doc = json!({"passed": failed.is_empty(), "criteria": reports});
        writeln!(stdout, "{}", serde_json::to_string_pretty(&doc).expect("report is valid JSON"))?;
    } else {
        for r in &reports {
            writeln!(stdout, "{}", r.line())?;
        }
        writeln!(stdout, "{} of {} criteria passed", reports.len() - failed.len(), reports.len())?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("criteria {failed:?} failed")))
    }
}

/// Runs a parsed command line, writing the report to `stdout`.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Integrate(a) => run_command(a, false, commands::integrate, stdout),
        Command::Spray(a) => run_command(a, false, commands::spray, stdout),
        Command::Corank(a) => run_command(a, false, commands::corank, stdout),
        Command::Product(a) => run_command(a, false, commands::product, stdout),
        Command::Magnetic(a) => run_command(&a.common, a.check_hamiltonian, commands::magnetic, stdout),
        Command::Verify(a) => run_verify(a, stdout),
    }
}
