//! Subcommand implementations.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};

use rayon::prelude::*;
use serde_json::json;

use txpar_core::conflict::ConflictGraph;
use txpar_core::heft::{heft_schedule, PrecedenceDag};
use txpar_core::oracle::{optimal_schedule, OracleLimits};
use txpar_core::report::{
    aggregate, aggregate_csv_row, aggregate_json_row, csv_row, json_row, run_block, BlockReport,
    RunConfig, RunError, AGGREGATE_CSV_HEADER, CSV_HEADER,
};
use txpar_core::schedule::{chunk, gantt_rows};
use txpar_core::simple::simple_schedule;
use txpar_core::synth::{generate as synth_generate, SynthParams};
use txpar_core::trace::{validate_block, write_trace, BlockReader, BlockTrace, ParseMode};
use txpar_core::Gas;

use crate::{
    CliError, GenerateArgs, OracleCheckArgs, OutputFormat, SimulateArgs, ValidateArgs,
};

/// Blocks evaluated per parallel batch; bounds memory on huge traces.
const BATCH: usize = 256;

fn open_input(path: &str) -> Result<Box<dyn BufRead>, CliError> {
    Ok(match path {
        "-" => Box::new(BufReader::new(io::stdin())),
        file => Box::new(BufReader::new(
            File::open(file).map_err(|e| CliError::Data(format!("{file}: {e}")))?,
        )),
    })
}

fn open_output(path: &str) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        "-" => Box::new(BufWriter::new(io::stdout())),
        file => Box::new(BufWriter::new(
            File::create(file).map_err(|e| CliError::Data(format!("{file}: {e}")))?,
        )),
    })
}

fn parse_mode(lenient: bool) -> ParseMode {
    if lenient {
        ParseMode::Lenient
    } else {
        ParseMode::Strict
    }
}

/// Per-block result produced by a worker; rows are rendered by the
/// ordered writer so output and warnings keep a fixed order.
struct Evaluated {
    block_number: u64,
    report: Option<BlockReport>,
    components: Vec<String>,
    gantt: Vec<String>,
}

fn evaluate_block(
    block: &BlockTrace,
    config: &RunConfig,
    want_components: bool,
    want_gantt: bool,
) -> Result<Evaluated, CliError> {
    let report = match run_block(block, config) {
        Ok(report) => Some(report),
        Err(RunError::EmptyBlock { .. }) => None,
        Err(e @ RunError::Invariant { .. }) => return Err(CliError::Internal(e.to_string())),
    };

    let mut components = Vec::new();
    let mut gantt = Vec::new();
    if report.is_some() && (want_components || want_gantt) {
        let chunks = chunk(block, config.cap.unwrap_or(block.len()));
        let mut base = 0usize;
        let mut simple_clock: Gas = 0;
        let mut heft_clock: Gas = 0;
        for (chunk_index, part) in chunks.iter().enumerate() {
            let graph = ConflictGraph::build(part);
            if want_components {
                let remapped: Vec<Vec<usize>> = graph
                    .components()
                    .into_iter()
                    .map(|c| c.into_iter().map(|i| i + base).collect())
                    .collect();
                components.push(
                    json!({
                        "block": block.block_number,
                        "chunk": chunk_index,
                        "components": remapped,
                    })
                    .to_string(),
                );
            }
            if want_gantt {
                // Chunks run back to back, so chunk-local times shift by
                // the makespan of everything before them.
                if config.strategies.simple {
                    let s =
                        simple_schedule(part, &graph, config.threads, config.simple_variant);
                    for row in gantt_rows(&s) {
                        gantt.push(
                            json!({
                                "block": block.block_number,
                                "strategy": "simple",
                                "tx": row.tx + base,
                                "thread": row.thread,
                                "start": row.start + simple_clock,
                                "finish": row.finish + simple_clock,
                            })
                            .to_string(),
                        );
                    }
                    simple_clock += s.makespan;
                }
                if config.strategies.heft {
                    let dag = PrecedenceDag::build(part);
                    let s = heft_schedule(&dag, config.threads);
                    for row in gantt_rows(&s) {
                        gantt.push(
                            json!({
                                "block": block.block_number,
                                "strategy": "heft",
                                "tx": row.tx + base,
                                "thread": row.thread,
                                "start": row.start + heft_clock,
                                "finish": row.finish + heft_clock,
                            })
                            .to_string(),
                        );
                    }
                    heft_clock += s.makespan;
                }
            }
            base += part.len();
        }
    }

    Ok(Evaluated {
        block_number: block.block_number,
        report,
        components,
        gantt,
    })
}

pub fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let config = RunConfig {
        threads: args.threads,
        cap: args.cap.0,
        strategies: args.strategies,
        simple_variant: args.simple_variant,
    };
    let mut reader = BlockReader::<Gas, _>::new(open_input(&args.input)?, parse_mode(args.lenient_gas));
    let mut out = open_output(&args.out)?;
    let mut components_out = args
        .dump_components
        .as_deref()
        .map(open_output)
        .transpose()?;
    let mut gantt_out = args.dump_gantt.as_deref().map(open_output).transpose()?;

    if args.format == OutputFormat::Csv {
        writeln!(out, "# threads={}", args.threads)?;
        writeln!(
            out,
            "{}",
            if args.window.is_some() {
                AGGREGATE_CSV_HEADER
            } else {
                CSV_HEADER
            }
        )?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;

    let mut windowed: Vec<BlockReport> = Vec::new();
    let mut rows = 0u64;
    loop {
        let mut batch = Vec::with_capacity(BATCH);
        for block in reader.by_ref().take(BATCH) {
            batch.push(block?);
        }
        if batch.is_empty() {
            break;
        }
        let want_components = components_out.is_some();
        let want_gantt = gantt_out.is_some();
        let evaluated: Vec<Evaluated> = pool.install(|| {
            batch
                .par_iter()
                .map(|b| evaluate_block(b, &config, want_components, want_gantt))
                .collect::<Result<_, _>>()
        })?;

        for item in evaluated {
            let Some(report) = item.report else {
                log::warn!("block {} is empty, skipped", item.block_number);
                continue;
            };
            if args.window.is_some() {
                windowed.push(report);
            } else {
                let row = match args.format {
                    OutputFormat::Csv => csv_row(&report),
                    OutputFormat::Json => json_row(&report),
                };
                writeln!(out, "{row}")?;
                rows += 1;
            }
            if let Some(w) = components_out.as_mut() {
                for line in &item.components {
                    writeln!(w, "{line}")?;
                }
            }
            if let Some(w) = gantt_out.as_mut() {
                for line in &item.gantt {
                    writeln!(w, "{line}")?;
                }
            }
        }
    }

    if let Some(window) = args.window {
        for agg in aggregate(&windowed, window) {
            let row = match args.format {
                OutputFormat::Csv => aggregate_csv_row(&agg),
                OutputFormat::Json => aggregate_json_row(&agg),
            };
            writeln!(out, "{row}")?;
            rows += 1;
        }
    }

    out.flush()?;
    if let Some(mut w) = components_out {
        w.flush()?;
    }
    if let Some(mut w) = gantt_out {
        w.flush()?;
    }
    log::info!("wrote {rows} rows");
    Ok(())
}

pub fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let mut params: SynthParams = match &args.config {
        Some(path) => {
            let file = File::open(path).map_err(|e| CliError::Data(format!("{path}: {e}")))?;
            serde_json::from_reader(BufReader::new(file))
                .map_err(|e| CliError::Data(format!("{path}: {e}")))?
        }
        None => SynthParams::default(),
    };

    // Flags override the config file.
    if let Some(v) = args.blocks {
        params.blocks = v;
    }
    if let Some(v) = args.txs_per_block {
        params.txs_per_block = v;
    }
    if let Some(v) = args.gas_mu {
        params.gas.mu = v;
    }
    if let Some(v) = args.gas_sigma {
        params.gas.sigma = v;
    }
    if let Some(v) = args.gas_min {
        params.gas.min = v;
    }
    if let Some(v) = args.gas_max {
        params.gas.max = v;
    }
    if let Some(v) = args.hot_contracts {
        params.hot_contracts = v;
    }
    if let Some(v) = args.zipf_s {
        params.zipf_s = v;
    }
    if let Some(v) = args.users {
        params.users = v;
    }
    if let Some(v) = args.extra_touch_p {
        params.extra_touch_p = v;
    }
    if let Some(v) = args.p_contract_call {
        params.p_contract_call = v;
    }
    if let Some(v) = args.seed {
        params.seed = v;
    }

    let blocks = synth_generate(&params).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut out = open_output(&args.out)?;
    write_trace(&blocks, &mut out)?;
    out.flush()?;
    log::info!("generated {} blocks", blocks.len());
    Ok(())
}

pub fn oracle_check(args: OracleCheckArgs) -> Result<(), CliError> {
    let limits = OracleLimits {
        max_tasks: args.max_tasks,
        max_threads: args.max_threads,
    };
    if args.threads > limits.max_threads {
        return Err(CliError::Usage(format!(
            "--threads {} exceeds --max-threads {}",
            args.threads, limits.max_threads
        )));
    }

    let reader = BlockReader::<Gas, _>::new(open_input(&args.input)?, parse_mode(args.lenient_gas));
    let mut out = open_output(&args.out)?;
    writeln!(out, "# threads={}", args.threads)?;
    writeln!(out, "block,tx_count,optimal,heft_makespan,simple_makespan")?;

    for block in reader {
        let block = block?;
        let dag = PrecedenceDag::build(&block);
        let result = optimal_schedule(&dag, args.threads, limits)
            .map_err(|e| CliError::Data(format!("block {}: {e}", block.block_number)))?;
        let graph = ConflictGraph::build(&block);
        let heft = heft_schedule(&dag, args.threads).makespan;
        let simple = simple_schedule(&block, &graph, args.threads, Default::default()).makespan;
        writeln!(
            out,
            "{},{},{},{},{}",
            block.block_number,
            block.len(),
            result.optimal_makespan,
            heft,
            simple
        )?;
        for (name, makespan) in [("heft", heft), ("simple", simple)] {
            if makespan < result.optimal_makespan {
                return Err(CliError::Internal(format!(
                    "block {}: {name} makespan {makespan} beats the exhaustive optimum {}",
                    block.block_number, result.optimal_makespan
                )));
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn validate(args: ValidateArgs) -> Result<(), CliError> {
    let reader = BlockReader::<Gas, _>::new(open_input(&args.input)?, parse_mode(args.lenient_gas));
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());

    let mut blocks = 0u64;
    let mut txs = 0u64;
    let mut violations = 0u64;
    for block in reader {
        let block = block?;
        blocks += 1;
        txs += block.len() as u64;
        for violation in validate_block(&block) {
            violations += 1;
            writeln!(out, "block {}: {violation}", block.block_number)?;
        }
    }
    writeln!(
        out,
        "checked {blocks} blocks, {txs} transactions: {violations} violations"
    )?;
    out.flush()?;
    if violations > 0 {
        return Err(CliError::Data(format!("trace has {violations} violations")));
    }
    Ok(())
}
