//! Core library of txpar: conflict graphs and parallel schedules for
//! block transaction workloads.

pub mod conflict;
pub mod heft;
pub mod oracle;
pub mod report;
pub mod scalar;
pub mod schedule;
pub mod simple;
pub mod synth;
pub mod trace;

pub use conflict::{largest_cluster_metric, ClusterMetric, ConflictGraph};
pub use heft::{heft_schedule, upward_rank, PrecedenceDag, RankTable};
pub use oracle::{optimal_schedule, OracleLimits, OracleResult};
pub use report::{aggregate, run_block, BlockReport, RunConfig, StrategySet};
pub use scalar::GasScalar;
pub use schedule::{check_valid, chunk, combine_chunked, metrics, Schedule, ScheduleMetrics};
pub use simple::{simple_schedule, SimpleVariant};
pub use synth::{generate, SynthParams};
pub use trace::{parse_trace, write_trace, BlockTrace, ParseMode, TransactionRecord};

/// Default gas scalar. Block gas totals fit comfortably in 64 bits.
pub type Gas = u64;
