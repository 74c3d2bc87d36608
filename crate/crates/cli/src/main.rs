mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};
use sublab::verify::Suite;

use config::{extract_tolerances, RunConfig};
use report::{display, Run};

/// Numerical sub-Riemannian experiments.
///
/// Tolerances may be overridden with `--tol-<name> <value>`, e.g.
/// `--tol-drift 1e-9`. The worker pool size is read from SUBLAB_THREADS.
#[derive(Debug, Parser)]
#[command(name = "sublab", version)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for the report and CSV files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the normal Hamiltonian flow from (q0, p0).
    Shoot,
    /// Two-point boundary value problem by shooting.
    Bvp,
    /// Distance between two points.
    Distance,
    /// Growth vector and bracket words at a point.
    Brackets,
    /// Commutator-flow steering between two points.
    Steer,
    /// Ball-box exponent fit along a direction.
    Ballbox,
    /// Orbit profile of a Heisenberg or Engel product.
    Orbit,
    /// Gram spectrum of lifted controls on Heisenberg products.
    Spectrum,
    /// Invariant suites.
    Verify {
        /// Suites to run (default: all, or `params.suites`).
        #[arg(long = "suite", value_parser = parse_suite)]
        suites: Vec<Suite>,
    },
}

fn parse_suite(s: &str) -> std::result::Result<Suite, String> {
    s.parse().map_err(|e: sublab::Error| e.to_string())
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Shoot => "shoot",
            Command::Bvp => "bvp",
            Command::Distance => "distance",
            Command::Brackets => "brackets",
            Command::Steer => "steer",
            Command::Ballbox => "ballbox",
            Command::Orbit => "orbit",
            Command::Spectrum => "spectrum",
            Command::Verify { .. } => "verify",
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("SUBLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.parse().map_err(|_| anyhow!("SUBLAB_THREADS must be a positive integer, got '{raw}'"))?;
    if n == 0 {
        return Err(anyhow!("SUBLAB_THREADS must be positive"));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

/// Loads and validates everything that can fail before any computation.
fn prepare(cli: &Cli, tols: &[(String, f64)]) -> Result<(RunConfig, sublab::Model, PathBuf)> {
    init_threads()?;
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let name = cli.command.name();
    if let Some(op) = &config.operation {
        if op != name {
            return Err(anyhow!("config operation '{op}' does not match subcommand '{name}'"));
        }
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.apply_tolerances(tols)?;
    config.tolerances.validate()?;
    let model = config.model.build()?;
    let out = cli.out.clone().or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    Ok((config, model, out))
}

fn execute(cli: &Cli, config: RunConfig, model: &sublab::Model, out: PathBuf) -> Result<bool> {
    let mut run = Run::new(cli.command.name(), config, out);
    match &cli.command {
        Command::Shoot => commands::shoot(&mut run, model)?,
        Command::Bvp => commands::bvp(&mut run, model)?,
        Command::Distance => commands::distance(&mut run, model)?,
        Command::Brackets => commands::brackets(&mut run, model)?,
        Command::Steer => commands::steer_cmd(&mut run, model)?,
        Command::Ballbox => commands::ballbox(&mut run, model)?,
        Command::Orbit => commands::orbit(&mut run)?,
        Command::Spectrum => commands::spectrum(&mut run)?,
        Command::Verify { suites } => commands::verify_cmd(&mut run, suites)?,
    }
    for c in &run.checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!("{status} {} {}", c.name, c.detail);
    }
    for f in &run.files {
        log::info!("wrote {}", display(f));
    }
    let (passed, report) = run.finish()?;
    println!("report: {}", display(&report));
    Ok(passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().collect();
    let (args, tols) = match extract_tolerances(args) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (config, model, out) = match prepare(&cli, &tols) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match execute(&cli, config, &model, out) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            // parameter errors surface here before any numerics run
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
