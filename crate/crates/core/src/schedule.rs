//! Shared schedule representation, validity rules, chunking, and metrics.
//!
//! Time is measured in gas units exactly (integers). Speedup and
//! utilization are the only floating-point values, computed at double
//! precision from exact integer makespans.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::scalar::GasScalar;
use crate::trace::BlockTrace;
use crate::Gas;

/// Placement of one transaction: thread id and half-open time interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScheduleEntry<G: GasScalar = Gas> {
    pub thread: usize,
    pub start: G,
    pub finish: G,
}

/// Non-preemptive schedule for one block (or chunk), entries indexed by
/// transaction position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schedule<G: GasScalar = Gas> {
    pub threads: usize,
    pub entries: Vec<ScheduleEntry<G>>,
    pub makespan: G,
}

impl<G: GasScalar> Schedule<G> {
    pub fn new(threads: usize, entries: Vec<ScheduleEntry<G>>) -> Self {
        let makespan = entries
            .iter()
            .map(|e| e.finish)
            .max()
            .unwrap_or_else(G::zero);
        Schedule {
            threads,
            entries,
            makespan,
        }
    }

    /// Serial baseline: consensus order on a single thread.
    pub fn sequential(block: &BlockTrace<G>) -> Self {
        let mut clock = G::zero();
        let entries = block
            .transactions
            .iter()
            .map(|tx| {
                let start = clock;
                clock = clock + tx.gas_used;
                ScheduleEntry {
                    thread: 0,
                    start,
                    finish: clock,
                }
            })
            .collect();
        Schedule::new(1, entries)
    }
}

/// A broken schedule rule. Violations are data, not errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleViolation {
    WrongEntryCount { expected: usize, got: usize },
    BadDuration { tx: usize },
    ThreadOutOfRange { tx: usize, thread: usize, threads: usize },
    ThreadOverlap { thread: usize, first: usize, second: usize },
    ConflictOverlap { i: usize, j: usize },
    ConsensusInversion { i: usize, j: usize },
}

impl fmt::Display for ScheduleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleViolation::WrongEntryCount { expected, got } => {
                write!(f, "schedule has {got} entries for {expected} transactions")
            }
            ScheduleViolation::BadDuration { tx } => {
                write!(f, "tx {tx}: interval length differs from gasUsed")
            }
            ScheduleViolation::ThreadOutOfRange { tx, thread, threads } => {
                write!(f, "tx {tx}: thread {thread} out of range 0..{threads}")
            }
            ScheduleViolation::ThreadOverlap { thread, first, second } => {
                write!(f, "thread {thread}: txs {first} and {second} overlap")
            }
            ScheduleViolation::ConflictOverlap { i, j } => {
                write!(f, "conflict overlap ({i},{j})")
            }
            ScheduleViolation::ConsensusInversion { i, j } => {
                write!(f, "consensus order inversion ({i},{j})")
            }
        }
    }
}

/// Checks a schedule against the block it claims to schedule.
///
/// Empty result iff: durations equal gasUsed, same-thread intervals do not
/// overlap, and every conflicting pair (i, j) with i earlier in consensus
/// order satisfies start(j) >= finish(i).
///
/// The conflict rule is enforced on consecutive touchers of each account;
/// start times are then non-decreasing along each toucher chain, which
/// extends the guarantee to all conflicting pairs without a quadratic scan.
pub fn check_valid<G: GasScalar>(
    schedule: &Schedule<G>,
    block: &BlockTrace<G>,
) -> Vec<ScheduleViolation> {
    let n = block.transactions.len();
    let mut violations = Vec::new();
    if schedule.entries.len() != n {
        violations.push(ScheduleViolation::WrongEntryCount {
            expected: n,
            got: schedule.entries.len(),
        });
        return violations;
    }

    for (tx, entry) in schedule.entries.iter().enumerate() {
        let duration_ok = entry.finish >= entry.start
            && entry.finish - entry.start == block.transactions[tx].gas_used;
        if !duration_ok {
            violations.push(ScheduleViolation::BadDuration { tx });
        }
        if entry.thread >= schedule.threads {
            violations.push(ScheduleViolation::ThreadOutOfRange {
                tx,
                thread: entry.thread,
                threads: schedule.threads,
            });
        }
    }

    // Same-thread overlap: sort each thread's entries by (start, position).
    let mut by_thread: HashMap<usize, Vec<usize>> = HashMap::new();
    for (tx, entry) in schedule.entries.iter().enumerate() {
        by_thread.entry(entry.thread).or_default().push(tx);
    }
    let mut threads: Vec<_> = by_thread.into_iter().collect();
    threads.sort_by_key(|(thread, _)| *thread);
    for (thread, mut txs) in threads {
        txs.sort_by_key(|&tx| (schedule.entries[tx].start, tx));
        for pair in txs.windows(2) {
            let (first, second) = (pair[0], pair[1]);
            if schedule.entries[second].start < schedule.entries[first].finish {
                violations.push(ScheduleViolation::ThreadOverlap {
                    thread,
                    first,
                    second,
                });
            }
        }
    }

    // Conflict serialization via consecutive-toucher chains per account.
    let mut chains: HashMap<&crate::trace::Account, usize> = HashMap::new();
    let mut flagged: Vec<(usize, usize)> = Vec::new();
    for (j, tx) in block.transactions.iter().enumerate() {
        for account in &tx.accounts {
            if let Some(&i) = chains.get(account) {
                if i != j && schedule.entries[j].start < schedule.entries[i].finish {
                    flagged.push((i, j));
                }
            }
            chains.insert(account, j);
        }
    }
    flagged.sort_unstable();
    flagged.dedup();
    for (i, j) in flagged {
        if schedule.entries[j].finish <= schedule.entries[i].start {
            violations.push(ScheduleViolation::ConsensusInversion { i, j });
        } else {
            violations.push(ScheduleViolation::ConflictOverlap { i, j });
        }
    }

    violations
}

/// Splits a block into consecutive consensus-order slices of at most `cap`
/// transactions. Every slice except possibly the last has exactly `cap`.
pub fn chunk<G: GasScalar>(block: &BlockTrace<G>, cap: usize) -> Vec<BlockTrace<G>> {
    assert!(cap >= 1, "chunk cap must be at least 1");
    block
        .transactions
        .chunks(cap)
        .map(|slice| BlockTrace {
            block_number: block.block_number,
            transactions: slice.to_vec(),
        })
        .collect()
}

/// Chunks run one after another: the block makespan is the plain sum.
pub fn combine_chunked<G: GasScalar>(makespans: &[G]) -> G {
    debug_assert!(!makespans.is_empty());
    makespans.iter().copied().sum()
}

/// Speedup and utilization for one strategy's makespan on one block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleMetrics<G: GasScalar = Gas> {
    pub makespan: G,
    pub speedup: f64,
    pub utilization: f64,
}

/// A scheduler produced a makespan below the single-transaction lower
/// bound; only an internal bug can cause this.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("makespan {makespan} below single-transaction lower bound {bound}")]
pub struct MakespanBelowBound {
    pub makespan: String,
    pub bound: String,
}

pub fn metrics<G: GasScalar>(
    schedule_makespan: G,
    block: &BlockTrace<G>,
    threads: usize,
) -> Result<ScheduleMetrics<G>, MakespanBelowBound> {
    let bound = block.max_gas().unwrap_or_else(G::zero);
    if schedule_makespan < bound {
        return Err(MakespanBelowBound {
            makespan: schedule_makespan.to_string(),
            bound: bound.to_string(),
        });
    }
    let total = block.total_gas().as_f64();
    let makespan = schedule_makespan.as_f64();
    Ok(ScheduleMetrics {
        makespan: schedule_makespan,
        speedup: total / makespan,
        utilization: total / (threads as f64 * makespan),
    })
}

/// Gantt row for the flag-gated schedule debug dump.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GanttRow<G: GasScalar + serde::Serialize> {
    pub tx: usize,
    pub thread: usize,
    pub start: G,
    pub finish: G,
}

pub fn gantt_rows<G>(schedule: &Schedule<G>) -> Vec<GanttRow<G>>
where
    G: GasScalar + serde::Serialize,
{
    schedule
        .entries
        .iter()
        .enumerate()
        .map(|(tx, e)| GanttRow {
            tx,
            thread: e.thread,
            start: e.start,
            finish: e.finish,
        })
        .collect()
}
