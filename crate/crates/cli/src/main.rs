//! Command-line front end: list the scenarios, or run one check and print its
//! report.
//!
//! Exit status is 0 when the check passes, 1 when it fails its threshold or
//! the computation errors, and 2 on usage errors.

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pathibp::error::Error;
use pathibp::report::{Check, RunConfig};
use pathibp::{catalog, run_check, RunOutput};

#[derive(Parser)]
#[command(
    name = "pathibp",
    version,
    about = "Monte Carlo checks of path-space integration by parts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the scenario ids and descriptions.
    List,
    /// Run one check on one scenario and print the JSON report.
    Run(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    scenario: String,
    /// eq4, eq5, eq9, girsanov, tau-derivative, conditional, geometry-ricci,
    /// geometry-connection or compose.
    #[arg(long)]
    check: String,
    /// Sample paths (points for the geometry checks). Defaults per check.
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long, default_value_t = 1024)]
    steps: usize,
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Shift size for girsanov, tau-derivative and compose.
    #[arg(long, allow_hyphen_values = true)]
    tau: Option<f64>,
    /// 1 is the bit-exact sequential mode.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-sample values as CSV (index, lhs, rhs, diff).
    #[arg(long)]
    dump_samples: Option<PathBuf>,
}

const USAGE: u8 = 2;
const FAILED: u8 = 1;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            for s in catalog() {
                println!("{:<26}{}", s.id, s.description);
            }
            ExitCode::SUCCESS
        }
        Command::Run(args) => run(args),
    }
}

fn run(args: RunArgs) -> ExitCode {
    let check: Check = match args.check.parse() {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let config = RunConfig {
        scenario: args.scenario,
        check,
        paths: args.paths,
        steps: args.steps,
        horizon: args.horizon,
        seed: args.seed,
        tau: args.tau,
        workers: args.workers,
    };
    let output = match run_check(&config) {
        Ok(o) => o,
        Err(e) => return fail(&e),
    };
    let json = output.report.to_json();
    println!("{json}");
    if let Some(path) = &args.out {
        if let Err(e) = std::fs::write(path, format!("{json}\n")) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return ExitCode::from(FAILED);
        }
    }
    if let Some(path) = &args.dump_samples {
        if let Err(e) = dump_samples(path, &output) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return ExitCode::from(FAILED);
        }
    }
    if output.report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(FAILED)
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::UnknownScenario { .. }
        | Error::UnknownCheck { .. }
        | Error::InvalidParameter(_)
        | Error::Grid(_)
        | Error::Unsupported(_)
        | Error::Precondition(_) => ExitCode::from(USAGE),
        _ => ExitCode::from(FAILED),
    }
}

fn dump_samples(path: &PathBuf, output: &RunOutput) -> Result<(), Box<dyn std::error::Error>> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(["index", "lhs", "rhs", "diff"])?;
    for (i, (l, r)) in output.samples.iter().enumerate() {
        w.write_record([
            i.to_string(),
            l.to_string(),
            r.to_string(),
            (l - r).to_string(),
        ])?;
    }
    w.into_inner()?.flush()?;
    Ok(())
}
