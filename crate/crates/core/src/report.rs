//! Per-block strategy evaluation and report rows.
//!
//! `run_block` chunks a block (when a cap is set), evaluates each
//! requested strategy per chunk, sums chunk makespans, and derives
//! speedup/utilization. Every schedule is re-checked against its chunk;
//! a violation aborts the run, it is never papered over.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::conflict::{largest_cluster_metric, ConflictGraph};
use crate::heft::{heft_schedule, PrecedenceDag};
use crate::scalar::GasScalar;
use crate::schedule::{check_valid, chunk, combine_chunked, metrics};
use crate::simple::{simple_schedule, SimpleVariant};
use crate::trace::BlockTrace;
use crate::Gas;

/// Which strategies a run evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StrategySet {
    pub lc: bool,
    pub simple: bool,
    pub heft: bool,
}

impl Default for StrategySet {
    fn default() -> Self {
        StrategySet {
            lc: true,
            simple: true,
            heft: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown strategy {0:?}: expected a comma list of lc, simple, heft")]
pub struct ParseStrategyError(String);

impl FromStr for StrategySet {
    type Err = ParseStrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut set = StrategySet {
            lc: false,
            simple: false,
            heft: false,
        };
        for name in s.split(',') {
            match name.trim() {
                "lc" => set.lc = true,
                "simple" => set.simple = true,
                "heft" => set.heft = true,
                other => return Err(ParseStrategyError(other.to_string())),
            }
        }
        if set == (StrategySet { lc: false, simple: false, heft: false }) {
            return Err(ParseStrategyError(s.to_string()));
        }
        Ok(set)
    }
}

impl fmt::Display for StrategySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names = Vec::new();
        if self.lc {
            names.push("lc");
        }
        if self.simple {
            names.push("simple");
        }
        if self.heft {
            names.push("heft");
        }
        f.write_str(&names.join(","))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunConfig {
    pub threads: usize,
    /// Chunk cap; `None` disables chunking.
    pub cap: Option<usize>,
    pub strategies: StrategySet,
    pub simple_variant: SimpleVariant,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            threads: 8,
            cap: None,
            strategies: StrategySet::default(),
            simple_variant: SimpleVariant::default(),
        }
    }
}

/// One strategy's result on one block. Utilization is absent for the
/// largest-cluster bound (its thread count is unbounded).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrategyOutcome<G: GasScalar = Gas> {
    pub makespan: G,
    pub speedup: f64,
    pub utilization: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockReport<G: GasScalar = Gas> {
    pub block_number: u64,
    pub tx_count: usize,
    pub total_gas: G,
    pub threads: usize,
    pub cap: Option<usize>,
    pub simple_variant: SimpleVariant,
    pub lc: Option<StrategyOutcome<G>>,
    pub simple: Option<StrategyOutcome<G>>,
    pub heft: Option<StrategyOutcome<G>>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error("block {block} is empty")]
    EmptyBlock { block: u64 },
    #[error("internal invariant violated by {strategy} on block {block}: {detail}")]
    Invariant {
        strategy: &'static str,
        block: u64,
        detail: String,
    },
}

fn outcome<G: GasScalar>(
    strategy: &'static str,
    block: &BlockTrace<G>,
    threads: usize,
    chunk_makespans: &[G],
) -> Result<StrategyOutcome<G>, RunError> {
    let combined = combine_chunked(chunk_makespans);
    let m = metrics(combined, block, threads).map_err(|e| RunError::Invariant {
        strategy,
        block: block.block_number,
        detail: e.to_string(),
    })?;
    Ok(StrategyOutcome {
        makespan: m.makespan,
        speedup: m.speedup,
        utilization: Some(m.utilization),
    })
}

pub fn run_block<G: GasScalar>(
    block: &BlockTrace<G>,
    config: &RunConfig,
) -> Result<BlockReport<G>, RunError> {
    if block.is_empty() {
        return Err(RunError::EmptyBlock {
            block: block.block_number,
        });
    }
    let chunks = chunk(block, config.cap.unwrap_or(block.len()));
    let graphs: Vec<ConflictGraph<G>> = chunks.iter().map(ConflictGraph::build).collect();

    let mut report = BlockReport {
        block_number: block.block_number,
        tx_count: block.len(),
        total_gas: block.total_gas(),
        threads: config.threads,
        cap: config.cap,
        simple_variant: config.simple_variant,
        lc: None,
        simple: None,
        heft: None,
    };

    if config.strategies.lc {
        let makespans: Vec<G> = graphs
            .iter()
            .map(|g| largest_cluster_metric(g).expect("chunks are non-empty").makespan)
            .collect();
        let combined = combine_chunked(&makespans);
        // The cluster bound assumes unlimited threads; utilization is
        // undefined and speedup comes straight from the ratio.
        if combined < block.max_gas().expect("non-empty") {
            return Err(RunError::Invariant {
                strategy: "lc",
                block: block.block_number,
                detail: "cluster makespan below heaviest transaction".into(),
            });
        }
        report.lc = Some(StrategyOutcome {
            makespan: combined,
            speedup: block.total_gas().as_f64() / combined.as_f64(),
            utilization: None,
        });
    }

    if config.strategies.simple {
        let mut makespans = Vec::with_capacity(chunks.len());
        for (part, graph) in chunks.iter().zip(&graphs) {
            let schedule = simple_schedule(part, graph, config.threads, config.simple_variant);
            let violations = check_valid(&schedule, part);
            if !violations.is_empty() {
                return Err(RunError::Invariant {
                    strategy: "simple",
                    block: block.block_number,
                    detail: violations[0].to_string(),
                });
            }
            makespans.push(schedule.makespan);
        }
        report.simple = Some(outcome("simple", block, config.threads, &makespans)?);
    }

    if config.strategies.heft {
        let mut makespans = Vec::with_capacity(chunks.len());
        for part in &chunks {
            let dag = PrecedenceDag::build(part);
            let schedule = heft_schedule(&dag, config.threads);
            let violations = check_valid(&schedule, part);
            if !violations.is_empty() {
                return Err(RunError::Invariant {
                    strategy: "heft",
                    block: block.block_number,
                    detail: violations[0].to_string(),
                });
            }
            makespans.push(schedule.makespan);
        }
        report.heft = Some(outcome("heft", block, config.threads, &makespans)?);
    }

    Ok(report)
}

/// Windowed means of per-block speedups for one strategy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AggregateStrategy {
    pub mean_speedup: f64,
    pub weighted_speedup: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateReport {
    /// First block number the window covers: key * window size.
    pub window_start: u64,
    pub block_count: usize,
    pub lc: Option<AggregateStrategy>,
    pub simple: Option<AggregateStrategy>,
    pub heft: Option<AggregateStrategy>,
}

pub fn aggregate<G: GasScalar>(reports: &[BlockReport<G>], window: u64) -> Vec<AggregateReport> {
    assert!(window >= 1, "window must be at least 1");
    let mut sorted: Vec<&BlockReport<G>> = reports.iter().collect();
    // Fixed summation order keeps float means permutation-invariant.
    sorted.sort_by_key(|r| r.block_number);

    let mut out: Vec<AggregateReport> = Vec::new();
    let mut members: Vec<&BlockReport<G>> = Vec::new();
    let mut current_key: Option<u64> = None;

    let flush = |members: &mut Vec<&BlockReport<G>>, key: u64, out: &mut Vec<AggregateReport>| {
        if members.is_empty() {
            return;
        }
        let strategy = |pick: fn(&BlockReport<G>) -> Option<StrategyOutcome<G>>| {
            let rows: Vec<(f64, f64)> = members
                .iter()
                .filter_map(|r| pick(r).map(|o| (o.speedup, r.total_gas.as_f64())))
                .collect();
            if rows.is_empty() {
                return None;
            }
            let gas: f64 = rows.iter().map(|(_, g)| g).sum();
            Some(AggregateStrategy {
                mean_speedup: rows.iter().map(|(s, _)| s).sum::<f64>() / rows.len() as f64,
                weighted_speedup: rows.iter().map(|(s, g)| s * g).sum::<f64>() / gas,
            })
        };
        out.push(AggregateReport {
            window_start: key * window,
            block_count: members.len(),
            lc: strategy(|r| r.lc),
            simple: strategy(|r| r.simple),
            heft: strategy(|r| r.heft),
        });
        members.clear();
    };

    for report in sorted {
        let key = report.block_number / window;
        if current_key.is_some_and(|k| k != key) {
            flush(&mut members, current_key.unwrap(), &mut out);
        }
        current_key = Some(key);
        members.push(report);
    }
    if let Some(key) = current_key {
        flush(&mut members, key, &mut out);
    }
    out
}

/// Formats with six significant digits, as plain decimal notation.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0.000000".to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).clamp(0, 17) as usize;
    format!("{x:.decimals$}")
}

pub const CSV_HEADER: &str = "block,tx_count,total_gas,threads,cap,simple_variant,lc_makespan,lc_speedup,simple_makespan,simple_speedup,simple_util,heft_makespan,heft_speedup,heft_util";

fn cap_cell(cap: Option<usize>) -> String {
    cap.map_or_else(|| "none".to_string(), |c| c.to_string())
}

/// One CSV row in the fixed column order; absent strategies leave their
/// cells empty.
pub fn csv_row<G: GasScalar>(report: &BlockReport<G>) -> String {
    let span = |o: &Option<StrategyOutcome<G>>| {
        o.map_or_else(String::new, |o| o.makespan.to_string())
    };
    let speed = |o: &Option<StrategyOutcome<G>>| {
        o.map_or_else(String::new, |o| fmt_sig6(o.speedup))
    };
    let util = |o: &Option<StrategyOutcome<G>>| {
        o.and_then(|o| o.utilization)
            .map_or_else(String::new, fmt_sig6)
    };
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        report.block_number,
        report.tx_count,
        report.total_gas,
        report.threads,
        cap_cell(report.cap),
        report.simple_variant,
        span(&report.lc),
        speed(&report.lc),
        span(&report.simple),
        speed(&report.simple),
        util(&report.simple),
        span(&report.heft),
        speed(&report.heft),
        util(&report.heft),
    )
}

pub const AGGREGATE_CSV_HEADER: &str = "window_start,block_count,lc_mean_speedup,lc_weighted_speedup,simple_mean_speedup,simple_weighted_speedup,heft_mean_speedup,heft_weighted_speedup";

pub fn aggregate_csv_row(report: &AggregateReport) -> String {
    let pair = |s: &Option<AggregateStrategy>| match s {
        Some(s) => format!("{},{}", fmt_sig6(s.mean_speedup), fmt_sig6(s.weighted_speedup)),
        None => ",".to_string(),
    };
    format!(
        "{},{},{},{},{}",
        report.window_start,
        report.block_count,
        pair(&report.lc),
        pair(&report.simple),
        pair(&report.heft),
    )
}

/// JSON shape mirroring the CSV columns, one object per line.
#[derive(Serialize)]
struct JsonRow<'a> {
    block: u64,
    tx_count: usize,
    total_gas: u128,
    threads: usize,
    cap: Option<usize>,
    simple_variant: &'a str,
    lc_makespan: Option<u128>,
    lc_speedup: Option<f64>,
    simple_makespan: Option<u128>,
    simple_speedup: Option<f64>,
    simple_util: Option<f64>,
    heft_makespan: Option<u128>,
    heft_speedup: Option<f64>,
    heft_util: Option<f64>,
}

pub fn json_row<G: GasScalar>(report: &BlockReport<G>) -> String {
    let as_u128 = |g: G| g.to_u128().expect("gas fits u128");
    let variant = report.simple_variant.to_string();
    let row = JsonRow {
        block: report.block_number,
        tx_count: report.tx_count,
        total_gas: as_u128(report.total_gas),
        threads: report.threads,
        cap: report.cap,
        simple_variant: &variant,
        lc_makespan: report.lc.map(|o| as_u128(o.makespan)),
        lc_speedup: report.lc.map(|o| o.speedup),
        simple_makespan: report.simple.map(|o| as_u128(o.makespan)),
        simple_speedup: report.simple.map(|o| o.speedup),
        simple_util: report.simple.and_then(|o| o.utilization),
        heft_makespan: report.heft.map(|o| as_u128(o.makespan)),
        heft_speedup: report.heft.map(|o| o.speedup),
        heft_util: report.heft.and_then(|o| o.utilization),
    };
    serde_json::to_string(&row).expect("row serializes")
}

#[derive(Serialize)]
struct JsonAggregateRow {
    window_start: u64,
    block_count: usize,
    lc: Option<AggregateStrategy>,
    simple: Option<AggregateStrategy>,
    heft: Option<AggregateStrategy>,
}

pub fn aggregate_json_row(report: &AggregateReport) -> String {
    let row = JsonAggregateRow {
        window_start: report.window_start,
        block_count: report.block_count,
        lc: report.lc,
        simple: report.simple,
        heft: report.heft,
    };
    serde_json::to_string(&row).expect("row serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Account, TransactionRecord, TxHash};

    fn acct(b: u8) -> Account {
        let mut bytes = [0u8; 20];
        bytes[19] = b;
        Account::new(bytes)
    }

    fn block_numbered(number: u64, specs: &[(Gas, &[u8])]) -> BlockTrace {
        let txs = specs
            .iter()
            .enumerate()
            .map(|(i, (gas, accounts))| {
                TransactionRecord::new(
                    TxHash::new([i as u8; 32]),
                    number,
                    i as u64,
                    *gas,
                    accounts.iter().map(|&b| acct(b)),
                )
            })
            .collect();
        BlockTrace::new(number, txs)
    }

    fn block(specs: &[(Gas, &[u8])]) -> BlockTrace {
        block_numbered(1, specs)
    }

    #[test]
    fn single_transaction_block_reports_unity() {
        let b = block(&[(21000, &[1])]);
        let r = run_block(&b, &RunConfig::default()).unwrap();
        assert_eq!(r.lc.unwrap().speedup, 1.0);
        assert_eq!(r.simple.unwrap().speedup, 1.0);
        assert_eq!(r.heft.unwrap().speedup, 1.0);
        assert_eq!(r.lc.unwrap().utilization, None);
    }

    #[test]
    fn disjoint_block_hits_thread_bound() {
        // 4 disjoint equal-gas txs, threads 2: both schedulers reach
        // speedup 2, the cluster bound reaches 4.
        let b = block(&[(10, &[1]), (10, &[2]), (10, &[3]), (10, &[4])]);
        let config = RunConfig {
            threads: 2,
            ..Default::default()
        };
        let r = run_block(&b, &config).unwrap();
        assert_eq!(r.simple.unwrap().speedup, 2.0);
        assert_eq!(r.heft.unwrap().speedup, 2.0);
        assert_eq!(r.lc.unwrap().speedup, 4.0);
        assert_eq!(r.simple.unwrap().utilization, Some(1.0));
    }

    #[test]
    fn cap_equal_to_length_changes_nothing() {
        let b = block(&[(10, &[1]), (20, &[1]), (5, &[2]), (8, &[3])]);
        let uncapped = run_block(&b, &RunConfig::default()).unwrap();
        let capped = run_block(
            &b,
            &RunConfig {
                cap: Some(b.len()),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(uncapped.lc.unwrap().makespan, capped.lc.unwrap().makespan);
        assert_eq!(
            uncapped.simple.unwrap().makespan,
            capped.simple.unwrap().makespan
        );
        assert_eq!(uncapped.heft.unwrap().makespan, capped.heft.unwrap().makespan);
    }

    #[test]
    fn cap_one_serializes_everything() {
        let b = block(&[(10, &[1]), (20, &[2]), (5, &[3])]);
        let r = run_block(
            &b,
            &RunConfig {
                cap: Some(1),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.lc.unwrap().makespan, 35);
        assert_eq!(r.simple.unwrap().makespan, 35);
        assert_eq!(r.heft.unwrap().makespan, 35);
    }

    #[test]
    fn empty_block_is_an_error() {
        let b = block(&[]);
        assert_eq!(
            run_block(&b, &RunConfig::default()),
            Err(RunError::EmptyBlock { block: 1 })
        );
    }

    #[test]
    fn strategy_subset_leaves_gaps() {
        let b = block(&[(10, &[1]), (10, &[2])]);
        let config = RunConfig {
            strategies: "heft".parse().unwrap(),
            ..Default::default()
        };
        let r = run_block(&b, &config).unwrap();
        assert!(r.lc.is_none());
        assert!(r.simple.is_none());
        assert!(r.heft.is_some());

        let row = csv_row(&r);
        assert_eq!(row.split(',').count(), CSV_HEADER.split(',').count());
        assert!(row.contains(",,,"));
    }

    #[test]
    fn strategy_set_parsing() {
        let all: StrategySet = "lc,simple,heft".parse().unwrap();
        assert_eq!(all, StrategySet::default());
        let one: StrategySet = "simple".parse().unwrap();
        assert!(one.simple && !one.lc && !one.heft);
        assert!("lc,bogus".parse::<StrategySet>().is_err());
        assert!("".parse::<StrategySet>().is_err());
    }

    #[test]
    fn aggregate_single_report_is_identity() {
        let b = block(&[(10, &[1]), (10, &[2])]);
        let r = run_block(&b, &RunConfig { threads: 2, ..Default::default() }).unwrap();
        let agg = aggregate(std::slice::from_ref(&r), 1);
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].block_count, 1);
        let heft = agg[0].heft.unwrap();
        assert_eq!(heft.mean_speedup, r.heft.unwrap().speedup);
        assert_eq!(heft.weighted_speedup, r.heft.unwrap().speedup);
    }

    fn report_with_speedup(number: u64, total: Gas, speedup: f64) -> BlockReport {
        BlockReport {
            block_number: number,
            tx_count: 1,
            total_gas: total,
            threads: 8,
            cap: None,
            simple_variant: SimpleVariant::Prefix,
            lc: None,
            simple: Some(StrategyOutcome {
                makespan: total,
                speedup,
                utilization: Some(1.0),
            }),
            heft: None,
        }
    }

    #[test]
    fn aggregate_weighting() {
        // Equal gas: both means 2.0. Gas 100 vs 300: weighted mean 2.5.
        let equal = vec![
            report_with_speedup(0, 100, 1.0),
            report_with_speedup(1, 100, 3.0),
        ];
        let agg = aggregate(&equal, 2);
        let s = agg[0].simple.unwrap();
        assert_eq!(s.mean_speedup, 2.0);
        assert_eq!(s.weighted_speedup, 2.0);

        let skewed = vec![
            report_with_speedup(0, 100, 1.0),
            report_with_speedup(1, 300, 3.0),
        ];
        let agg = aggregate(&skewed, 2);
        let s = agg[0].simple.unwrap();
        assert_eq!(s.mean_speedup, 2.0);
        assert_eq!(s.weighted_speedup, 2.5);
    }

    #[test]
    fn aggregate_windows_split_by_block_number() {
        let reports = vec![
            report_with_speedup(0, 10, 1.0),
            report_with_speedup(1, 10, 2.0),
            report_with_speedup(5, 10, 3.0),
        ];
        let agg = aggregate(&reports, 2);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].window_start, 0);
        assert_eq!(agg[0].block_count, 2);
        assert_eq!(agg[1].window_start, 4);
        assert_eq!(agg[1].block_count, 1);
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let mut reports = vec![
            report_with_speedup(3, 17, 1.25),
            report_with_speedup(1, 999, 3.5),
            report_with_speedup(2, 40, 2.0),
        ];
        let forward = aggregate(&reports, 10);
        reports.reverse();
        assert_eq!(aggregate(&reports, 10), forward);
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_sig6(1.0), "1.00000");
        assert_eq!(fmt_sig6(35.0 / 30.0), "1.16667");
        assert_eq!(fmt_sig6(12.3456789), "12.3457");
        assert_eq!(fmt_sig6(0.25), "0.250000");
        assert_eq!(fmt_sig6(0.0012345678), "0.00123457");
        assert_eq!(fmt_sig6(123456.789), "123457");
        assert_eq!(fmt_sig6(0.0), "0.000000");
    }

    #[test]
    fn csv_row_layout() {
        let b = block(&[(10, &[1, 2]), (20, &[2]), (5, &[3])]);
        let r = run_block(&b, &RunConfig::default()).unwrap();
        let row = csv_row(&r);
        assert_eq!(
            row,
            "1,3,35,8,none,prefix,30,1.16667,30,1.16667,0.145833,30,1.16667,0.145833"
        );
    }

    #[test]
    fn json_row_matches_csv_fields() {
        let b = block(&[(10, &[1]), (20, &[2])]);
        let r = run_block(
            &b,
            &RunConfig {
                cap: Some(32),
                ..Default::default()
            },
        )
        .unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&json_row(&r)).unwrap();
        assert_eq!(parsed["block"], 1);
        assert_eq!(parsed["cap"], 32);
        assert_eq!(parsed["simple_variant"], "prefix");
        assert_eq!(parsed["lc_speedup"], 30.0 / 20.0);
        assert!(parsed["lc_util"].is_null());
    }

    #[test]
    fn chunked_simple_matches_manual_sum() {
        // Two chunks of two txs each under cap 2; each chunk schedules
        // independently and the makespans add.
        let b = block(&[(10, &[1]), (10, &[2]), (30, &[3]), (30, &[4])]);
        let config = RunConfig {
            threads: 2,
            cap: Some(2),
            ..Default::default()
        };
        let r = run_block(&b, &config).unwrap();
        assert_eq!(r.simple.unwrap().makespan, 10 + 30);
        assert_eq!(r.heft.unwrap().makespan, 40);
        assert_eq!(r.lc.unwrap().makespan, 40);
    }
}
