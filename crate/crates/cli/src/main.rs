use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use ccrb_core::experiments::{bounds_json, ExperimentSpec, Scenario};
use ccrb_core::{run_experiment, Error};
use clap::{Args, Parser, Subcommand};

/// Constrained Cramér–Rao bounds and CML experiments.
#[derive(Debug, Parser)]
#[command(name = "ccrb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the CCRB and LU-CCRB of a builtin scenario as JSON.
    Bounds {
        /// sphere-case1, sphere-case2 or sinusoid
        scenario: String,
        /// Override a scenario field, e.g. --set rho=2
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run a builtin figure sweep (fig1 … fig8, fig1b, fig2b, fig7b).
    Figure {
        id: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run a sweep described by a JSON spec file.
    Run {
        spec: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// CSV output path; the JSON summary goes next to it. Defaults to <id>.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Prints to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<(), Error> {
    match writeln!(std::io::stdout(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 1,
        e if e.is_validation() => 2,
        _ => 3,
    }
}

fn parse_override(s: &str) -> Result<(String, f64), Error> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::InvalidSpec(format!("expected KEY=VALUE, got '{s}'")))?;
    let v: f64 = v
        .trim()
        .parse()
        .map_err(|_| Error::InvalidSpec(format!("'{v}' is not a number")))?;
    Ok((k.trim().to_string(), v))
}

fn run_spec(mut spec: ExperimentSpec, args: RunArgs) -> Result<(), Error> {
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(trials) = args.trials {
        spec.trials = trials;
    }
    if args.workers.is_some() {
        spec.workers = args.workers;
    }
    let out = args.out.unwrap_or_else(|| PathBuf::from(format!("{}.csv", spec.id)));
    let result = run_experiment(&spec)?;
    result.write(&out)?;
    emit(&serde_json::to_string_pretty(&result.summary())?)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Bounds { scenario, set } => {
            let mut sc = Scenario::named(&scenario)?;
            for s in &set {
                let (k, v) = parse_override(s)?;
                sc = sc.set(&k, v)?;
            }
            emit(&serde_json::to_string_pretty(&bounds_json(&sc)?)?)
        }
        Command::Figure { id, run } => run_spec(ExperimentSpec::builtin(&id)?, run),
        Command::Run { spec, run } => {
            let text = std::fs::read_to_string(&spec)
                .map_err(|e| Error::InvalidSpec(format!("cannot read {}: {e}", spec.display())))?;
            let parsed: ExperimentSpec =
                serde_json::from_str(&text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
            run_spec(parsed, run)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
