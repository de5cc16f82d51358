//! txpar: simulate parallel execution of block transaction workloads.
//!
//! Exit codes: 0 success, 1 usage error, 2 input data error, 3 internal
//! invariant violation (a scheduler emitted an inconsistent result).

mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use txpar_core::simple::SimpleVariant;
use txpar_core::report::StrategySet;

#[derive(Parser)]
#[command(name = "txpar", version, about = "Block transaction parallelism simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scheduling strategies over a trace and emit per-block metrics
    Simulate(SimulateArgs),
    /// Produce a synthetic trace from seeded generator parameters
    Generate(GenerateArgs),
    /// Compare scheduler makespans against the exact optimum on small blocks
    OracleCheck(OracleCheckArgs),
    /// Check a trace against the format's invariants
    Validate(ValidateArgs),
}

/// Chunk cap argument: a positive transaction count or "none".
#[derive(Clone, Copy, Debug)]
struct CapValue(Option<usize>);

impl std::str::FromStr for CapValue {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "none" {
            return Ok(CapValue(None));
        }
        match s.parse::<usize>() {
            Ok(0) => Err("cap must be at least 1 (or \"none\")".into()),
            Ok(n) => Ok(CapValue(Some(n))),
            Err(_) => Err(format!("expected a positive integer or \"none\", got {s:?}")),
        }
    }
}

fn parse_positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("value must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(_) => Err(format!("expected a positive integer, got {s:?}")),
    }
}

fn parse_positive_u64(s: &str) -> Result<u64, String> {
    match s.parse::<u64>() {
        Ok(0) => Err("value must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(_) => Err(format!("expected a positive integer, got {s:?}")),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Args)]
struct SimulateArgs {
    /// Trace file, or - for stdin
    #[arg(long, default_value = "-")]
    input: String,

    /// Report destination, or - for stdout
    #[arg(long, default_value = "-")]
    out: String,

    /// Worker thread count the schedulers simulate
    #[arg(long, default_value_t = 8, value_parser = parse_positive)]
    threads: usize,

    /// Chunk cap per scheduling run: a positive integer or "none"
    #[arg(long, default_value = "none")]
    cap: CapValue,

    /// Comma list drawn from lc, simple, heft
    #[arg(long, default_value = "lc,simple,heft")]
    strategies: StrategySet,

    /// Batch formation rule for the simple scheduler
    #[arg(long, default_value = "prefix")]
    simple_variant: SimpleVariant,

    /// Emit windowed means over this many consecutive block numbers
    /// instead of per-block rows
    #[arg(long, value_parser = parse_positive_u64)]
    window: Option<u64>,

    /// Blocks evaluated concurrently; output is identical for any value
    #[arg(long, default_value_t = 1, value_parser = parse_positive)]
    jobs: usize,

    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,

    /// Clamp gasUsed 0 to 1 instead of rejecting the record
    #[arg(long)]
    lenient_gas: bool,

    /// Debug: write per-block conflict components as JSON lines
    #[arg(long, value_name = "PATH")]
    dump_components: Option<String>,

    /// Debug: write per-transaction schedule rows as JSON lines
    #[arg(long, value_name = "PATH")]
    dump_gantt: Option<String>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator parameters as JSON; field names match the config schema
    #[arg(long)]
    config: Option<String>,

    /// Trace destination, or - for stdout
    #[arg(long, default_value = "-")]
    out: String,

    /// Number of blocks to generate
    #[arg(long)]
    blocks: Option<u64>,

    /// Mean transactions per block (Poisson rate)
    #[arg(long)]
    txs_per_block: Option<f64>,

    /// Log-normal mu of the gas distribution
    #[arg(long)]
    gas_mu: Option<f64>,

    /// Log-normal sigma of the gas distribution
    #[arg(long)]
    gas_sigma: Option<f64>,

    /// Lower clamp on drawn gas values
    #[arg(long)]
    gas_min: Option<u64>,

    /// Upper clamp on drawn gas values
    #[arg(long)]
    gas_max: Option<u64>,

    /// Size of the popular contract pool
    #[arg(long)]
    hot_contracts: Option<u64>,

    /// Zipf skew over the contract pool
    #[arg(long)]
    zipf_s: Option<f64>,

    /// Size of the user address pool
    #[arg(long)]
    users: Option<u64>,

    /// Chance of each additional account touch
    #[arg(long)]
    extra_touch_p: Option<f64>,

    /// Chance a transaction calls a contract
    #[arg(long)]
    p_contract_call: Option<f64>,

    /// Generator seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct OracleCheckArgs {
    /// Trace file, or - for stdin
    #[arg(long, default_value = "-")]
    input: String,

    /// Table destination, or - for stdout
    #[arg(long, default_value = "-")]
    out: String,

    /// Worker thread count; must stay within --max-threads
    #[arg(long, default_value_t = 2, value_parser = parse_positive)]
    threads: usize,

    /// Largest block the exhaustive search accepts
    #[arg(long, default_value_t = 8, value_parser = parse_positive)]
    max_tasks: usize,

    #[arg(long, default_value_t = 3, value_parser = parse_positive)]
    max_threads: usize,

    #[arg(long)]
    lenient_gas: bool,
}

#[derive(Args)]
struct ValidateArgs {
    /// Trace file, or - for stdin
    #[arg(long, default_value = "-")]
    input: String,

    #[arg(long)]
    lenient_gas: bool,
}

/// Error carrying its process exit code.
#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
    /// Downstream closed the pipe; exit quietly like any filter.
    #[error("broken pipe")]
    Pipe,
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
            CliError::Pipe => 0,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            CliError::Pipe
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<txpar_core::trace::TraceError> for CliError {
    fn from(e: txpar_core::trace::TraceError) -> Self {
        match e {
            txpar_core::trace::TraceError::Io(io_err) => io_err.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };

    env_logger::Builder::from_env(env_logger::Env::new().filter("TXPAR_LOG"))
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::Generate(args) => commands::generate(args),
        Command::OracleCheck(args) => commands::oracle_check(args),
        Command::Validate(args) => commands::validate(args),
    };

    match result {
        Ok(()) | Err(CliError::Pipe) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
