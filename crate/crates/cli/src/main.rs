use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use kawasaki::check::CheckOptions;
use kawasaki::config::{ExperimentConfig, VERSION};
use kawasaki::experiments::{self, stamped_json, Sink};
use kawasaki::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_INVARIANT: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "kawasaki", version = VERSION, about = "Weakly asymmetric lattice-gas experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct CheckArgs {
    /// Optional config; only its output section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Corrupt one class of jump rates; the detailed-balance check must then fail.
    #[arg(long, hide = true)]
    corrupt_rates: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a trajectory ensemble and write coarse densities.
    Simulate(Common),
    /// Compare the ensemble mean with the PDE solution along an N-ladder.
    HydroCompare(Common),
    /// Solve for the exact stationary measure of a small sector.
    ExactStationary(Common),
    /// Tabulate the variational mobility.
    Mobility(Common),
    /// Tabulate the free energy and check convexity.
    Thermo(Common),
    /// Evaluate the dynamical rate functional.
    Ratefn(Common),
    /// Compute the optimal exit path and compare its cost with the free energy.
    Quasipotential(Common),
    /// Check the time-reversal and Lyapunov identities.
    DualityCheck(Common),
    /// Run the invariant suite.
    Check(CheckArgs),
}

enum Failure {
    Error(Error),
    Invariant(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. }
        | Error::InvalidArgument(_)
        | Error::SectorTooLarge(_)
        | Error::WindowTooLarge { .. }
        | Error::Unsupported(_)
        | Error::Mismatch(_) => EXIT_CONFIG,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => 1,
    }
}

fn set_threads(threads: Option<usize>) -> Result<(), Failure> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::config("--threads", "must be positive").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config("--threads", e.to_string()))?;
    }
    Ok(())
}

fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.run.seed = Some(seed);
    }
    if let Some(out) = &common.out {
        config.output.directory = out.to_string_lossy().into_owned();
    }
    config.validate()?;
    Ok(config)
}

fn emit<T: serde::Serialize>(sink: &Sink, value: &T) -> Result<(), Failure> {
    println!("{}", stamped_json(sink.meta(), value)?);
    Ok(())
}

fn run_common(name: &str, common: &Common, command: &Command) -> Result<(), Failure> {
    set_threads(common.threads)?;
    let config = load(common)?;
    let sink = Sink::new(config.output.directory.as_ref(), name, &config)?;
    match command {
        Command::Simulate(_) => {
            let r = experiments::simulate(&config, &sink)?;
            emit(&sink, &r)?;
            if !r.conserved {
                return Err(Failure::Invariant("particle number changed during a trajectory".into()));
            }
        }
        Command::HydroCompare(_) => emit(&sink, &experiments::hydro_compare(&config, &sink)?)?,
        Command::ExactStationary(_) => emit(&sink, &experiments::exact_stationary(&config, &sink)?)?,
        Command::Mobility(_) => emit(&sink, &experiments::mobility(&config, &sink)?)?,
        Command::Thermo(_) => {
            let r = experiments::thermo(&config, &sink)?;
            emit(&sink, &r)?;
            if let Some(f) = r.failure {
                return Err(Failure::Invariant(f));
            }
        }
        Command::Ratefn(_) => emit(&sink, &experiments::ratefn(&config, &sink)?)?,
        Command::Quasipotential(_) => emit(&sink, &experiments::quasipotential(&config, &sink)?)?,
        Command::DualityCheck(_) => emit(&sink, &experiments::duality_check(&config, &sink)?)?,
        Command::Check(_) => unreachable!(),
    }
    Ok(())
}

fn run_check(args: &CheckArgs) -> Result<(), Failure> {
    set_threads(args.threads)?;
    let options = CheckOptions {
        corrupt_rates: args.corrupt_rates,
    };
    let sink = match (&args.config, &args.out) {
        (Some(path), out) => {
            let config = ExperimentConfig::load(path)?;
            let dir = out.clone().unwrap_or_else(|| config.output.directory.clone().into());
            Some(Sink::new(&dir, "check", &config)?)
        }
        (None, Some(out)) => Some(Sink::unconfigured(out, "check")?),
        (None, None) => None,
    };
    let report = experiments::check(&options, sink.as_ref())?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(|e| Error::Serialization(e.to_string()))?
    );
    for c in &report.checks {
        eprintln!("{} {} ({:.2}s): {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.seconds, c.detail);
    }
    if !report.passed {
        let names: Vec<&str> = report.failures().map(|c| c.name).collect();
        return Err(Failure::Invariant(format!("failed checks: {}", names.join(", "))));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let result = match &cli.command {
        Command::Simulate(c) => run_common("simulate", c, &cli.command),
        Command::HydroCompare(c) => run_common("hydro-compare", c, &cli.command),
        Command::ExactStationary(c) => run_common("exact-stationary", c, &cli.command),
        Command::Mobility(c) => run_common("mobility", c, &cli.command),
        Command::Thermo(c) => run_common("thermo", c, &cli.command),
        Command::Ratefn(c) => run_common("ratefn", c, &cli.command),
        Command::Quasipotential(c) => run_common("quasipotential", c, &cli.command),
        Command::DualityCheck(c) => run_common("duality-check", c, &cli.command),
        Command::Check(a) => run_check(a),
    };
    match result {
        Ok(()) => {
            eprintln!("done in {:.2}s", start.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Invariant(msg)) => {
            eprintln!("invariant failure: {msg}");
            ExitCode::from(EXIT_INVARIANT)
        }
    }
}
