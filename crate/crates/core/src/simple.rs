//! Batch scheduler: conflict-free batches of at most `threads`
//! transactions, each batch a barrier that completes with its longest
//! member.
//!
//! Batch formation is ambiguous in the underlying model, so two readings
//! are implemented. `prefix` closes the batch at the first transaction
//! that conflicts with a member. `scan` keeps scanning past conflicting
//! transactions, letting later ones join when they conflict neither with a
//! batch member nor with an earlier transaction skipped in this pass;
//! the second condition preserves consensus-order serialization.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::conflict::ConflictGraph;
use crate::scalar::GasScalar;
use crate::schedule::{Schedule, ScheduleEntry};
use crate::trace::{Account, BlockTrace};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SimpleVariant {
    #[default]
    Prefix,
    Scan,
}

impl fmt::Display for SimpleVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimpleVariant::Prefix => "prefix",
            SimpleVariant::Scan => "scan",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown variant {0:?}: expected \"prefix\" or \"scan\"")]
pub struct ParseVariantError(String);

impl FromStr for SimpleVariant {
    type Err = ParseVariantError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prefix" => Ok(SimpleVariant::Prefix),
            "scan" => Ok(SimpleVariant::Scan),
            other => Err(ParseVariantError(other.to_string())),
        }
    }
}

fn intersects(accounts: &BTreeSet<Account>, pool: &BTreeSet<Account>) -> bool {
    let (small, large) = if accounts.len() <= pool.len() {
        (accounts, pool)
    } else {
        (pool, accounts)
    };
    small.iter().any(|a| large.contains(a))
}

pub fn simple_schedule<G: GasScalar>(
    block: &BlockTrace<G>,
    graph: &ConflictGraph<G>,
    threads: usize,
    variant: SimpleVariant,
) -> Schedule<G> {
    assert!(threads >= 1, "need at least one thread");
    debug_assert_eq!(graph.n(), block.transactions.len());
    let n = block.transactions.len();
    let mut entries: Vec<Option<ScheduleEntry<G>>> = vec![None; n];
    let mut clock = G::zero();

    let mut flush = |batch: &mut Vec<usize>, clock: &mut G| {
        if batch.is_empty() {
            return;
        }
        let mut longest = G::zero();
        for (thread, &pos) in batch.iter().enumerate() {
            let gas = block.transactions[pos].gas_used;
            entries[pos] = Some(ScheduleEntry {
                thread,
                start: *clock,
                finish: *clock + gas,
            });
            longest = longest.max(gas);
        }
        *clock = *clock + longest;
        batch.clear();
    };

    match variant {
        SimpleVariant::Prefix => {
            let mut batch: Vec<usize> = Vec::new();
            let mut batch_accounts: BTreeSet<Account> = BTreeSet::new();
            for pos in 0..n {
                let accounts = &block.transactions[pos].accounts;
                if batch.len() == threads || intersects(accounts, &batch_accounts) {
                    flush(&mut batch, &mut clock);
                    batch_accounts.clear();
                }
                batch.push(pos);
                batch_accounts.extend(accounts.iter().copied());
            }
            flush(&mut batch, &mut clock);
        }
        SimpleVariant::Scan => {
            let mut remaining: Vec<usize> = (0..n).collect();
            while !remaining.is_empty() {
                let mut batch: Vec<usize> = Vec::new();
                let mut batch_accounts: BTreeSet<Account> = BTreeSet::new();
                let mut skipped_accounts: BTreeSet<Account> = BTreeSet::new();
                let mut skipped: Vec<usize> = Vec::new();
                for &pos in &remaining {
                    let accounts = &block.transactions[pos].accounts;
                    let joins = batch.len() < threads
                        && !intersects(accounts, &batch_accounts)
                        && !intersects(accounts, &skipped_accounts);
                    if joins {
                        batch.push(pos);
                        batch_accounts.extend(accounts.iter().copied());
                    } else {
                        skipped.push(pos);
                        skipped_accounts.extend(accounts.iter().copied());
                    }
                }
                flush(&mut batch, &mut clock);
                remaining = skipped;
            }
        }
    }

    Schedule::new(
        threads,
        entries
            .into_iter()
            .map(|e| e.expect("every position scheduled"))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::check_valid;
    use crate::trace::{TransactionRecord, TxHash};
    use crate::Gas;

    fn acct(b: u8) -> Account {
        let mut bytes = [0u8; 20];
        bytes[19] = b;
        Account::new(bytes)
    }

    fn block(specs: &[(Gas, &[u8])]) -> BlockTrace {
        let txs = specs
            .iter()
            .enumerate()
            .map(|(i, (gas, accounts))| {
                TransactionRecord::new(
                    TxHash::new([i as u8; 32]),
                    1,
                    i as u64,
                    *gas,
                    accounts.iter().map(|&b| acct(b)),
                )
            })
            .collect();
        BlockTrace::new(1, txs)
    }

    fn run(b: &BlockTrace, threads: usize, variant: SimpleVariant) -> Schedule {
        let g = ConflictGraph::build(b);
        let s = simple_schedule(b, &g, threads, variant);
        assert!(check_valid(&s, b).is_empty(), "schedule must be valid");
        s
    }

    /// Batch starts, ascending: recovers the batch structure from entries.
    fn batch_starts(s: &Schedule) -> Vec<Gas> {
        let mut starts: Vec<Gas> = s.entries.iter().map(|e| e.start).collect();
        starts.sort_unstable();
        starts.dedup();
        starts
    }

    #[test]
    fn alternating_accounts_pack_into_two_batches() {
        // {A},{B},{A},{C}, gas 10, threads 2 -> batches {0,1},{2,3}.
        let b = block(&[(10, &[1]), (10, &[2]), (10, &[1]), (10, &[3])]);
        let s = run(&b, 2, SimpleVariant::Prefix);
        assert_eq!(s.makespan, 20);
        assert_eq!(s.entries[0].start, 0);
        assert_eq!(s.entries[1].start, 0);
        assert_eq!(s.entries[2].start, 10);
        assert_eq!(s.entries[3].start, 10);
    }

    #[test]
    fn pairwise_conflicts_serialize_fully() {
        let b = block(&[(10, &[1]), (20, &[1]), (5, &[1])]);
        for variant in [SimpleVariant::Prefix, SimpleVariant::Scan] {
            let s = run(&b, 4, variant);
            assert_eq!(s.makespan, 35);
            assert_eq!(batch_starts(&s).len(), 3);
        }
    }

    #[test]
    fn prefix_closes_at_first_conflict() {
        // {A},{A},{B},{C}, threads 3 -> batches {0},{1,2,3}.
        let b = block(&[(10, &[1]), (10, &[1]), (10, &[2]), (10, &[3])]);
        let s = run(&b, 3, SimpleVariant::Prefix);
        assert_eq!(s.makespan, 20);
        assert_eq!(s.entries[0].start, 0);
        assert_eq!(s.entries[1].start, 10);
        assert_eq!(s.entries[2].start, 10);
        assert_eq!(s.entries[3].start, 10);
    }

    #[test]
    fn scan_fills_past_a_conflict() {
        // {A},{A},{B},{B}, threads 2: prefix needs 3 batches, scan packs
        // {0,2} and {1,3}.
        let b = block(&[(10, &[1]), (10, &[1]), (10, &[2]), (10, &[2])]);
        let prefix = run(&b, 2, SimpleVariant::Prefix);
        assert_eq!(prefix.makespan, 30);
        let scan = run(&b, 2, SimpleVariant::Scan);
        assert_eq!(scan.makespan, 20);
        assert_eq!(scan.entries[0].start, 0);
        assert_eq!(scan.entries[2].start, 0);
        assert_eq!(scan.entries[1].start, 10);
        assert_eq!(scan.entries[3].start, 10);
    }

    #[test]
    fn scan_respects_skipped_conflicts() {
        // {A},{A,B},{B}: tx 2 must not jump ahead of skipped tx 1 even
        // though it does not conflict with batch member tx 0.
        let b = block(&[(10, &[1]), (10, &[1, 2]), (10, &[2])]);
        let s = run(&b, 2, SimpleVariant::Scan);
        assert_eq!(s.makespan, 30);
    }

    #[test]
    fn single_thread_is_sequential() {
        let b = block(&[(10, &[1]), (20, &[2]), (5, &[3])]);
        for variant in [SimpleVariant::Prefix, SimpleVariant::Scan] {
            let s = run(&b, 1, variant);
            assert_eq!(s.makespan, b.total_gas());
        }
    }

    #[test]
    fn empty_block_yields_empty_schedule() {
        let b = block(&[]);
        let g = ConflictGraph::build(&b);
        let s = simple_schedule(&b, &g, 2, SimpleVariant::Prefix);
        assert_eq!(s.makespan, 0);
        assert!(s.entries.is_empty());
    }

    #[test]
    fn variant_names_round_trip() {
        for variant in [SimpleVariant::Prefix, SimpleVariant::Scan] {
            assert_eq!(variant.to_string().parse::<SimpleVariant>(), Ok(variant));
        }
        assert!("batch".parse::<SimpleVariant>().is_err());
    }

    mod props {
        use super::*;
        use proptest::collection::vec;
        use proptest::prelude::*;

        fn arb_block() -> impl Strategy<Value = BlockTrace> {
            vec((1u64..1000, vec(0u8..8, 1..4)), 0..30).prop_map(|specs| {
                let txs = specs
                    .into_iter()
                    .enumerate()
                    .map(|(i, (gas, accounts))| {
                        TransactionRecord::new(
                            TxHash::new([i as u8; 32]),
                            1,
                            i as u64,
                            gas,
                            accounts.into_iter().map(acct),
                        )
                    })
                    .collect();
                BlockTrace::new(1, txs)
            })
        }

        proptest! {
            #[test]
            fn always_valid(b in arb_block(), threads in 1usize..6) {
                let g = ConflictGraph::build(&b);
                for variant in [SimpleVariant::Prefix, SimpleVariant::Scan] {
                    let s = simple_schedule(&b, &g, threads, variant);
                    prop_assert!(check_valid(&s, &b).is_empty());
                    prop_assert!(s.makespan <= b.total_gas());
                }
            }

            #[test]
            fn single_thread_matches_total(b in arb_block()) {
                let g = ConflictGraph::build(&b);
                for variant in [SimpleVariant::Prefix, SimpleVariant::Scan] {
                    let s = simple_schedule(&b, &g, 1, variant);
                    prop_assert_eq!(s.makespan, b.total_gas());
                }
            }

            #[test]
            fn makespan_is_sum_of_batch_maxima(b in arb_block(), threads in 1usize..6) {
                let g = ConflictGraph::build(&b);
                for variant in [SimpleVariant::Prefix, SimpleVariant::Scan] {
                    let s = simple_schedule(&b, &g, threads, variant);
                    // Group entries by start time; each group is one batch.
                    let mut maxima: std::collections::BTreeMap<Gas, Gas> = Default::default();
                    for (pos, e) in s.entries.iter().enumerate() {
                        let gas = b.transactions[pos].gas_used;
                        let slot = maxima.entry(e.start).or_insert(0);
                        *slot = (*slot).max(gas);
                    }
                    prop_assert_eq!(s.makespan, maxima.values().sum::<Gas>());
                    prop_assert!(maxima.len() <= b.len().max(1));
                }
            }

            #[test]
            fn conflict_free_uniform_gas_monotone_in_threads(
                n in 1usize..40,
                gas in 1u64..1000,
                threads in 1usize..8,
            ) {
                // Disjoint single-account access lists, identical gas:
                // makespan is ceil(n/k)*gas, non-increasing in k.
                let specs: Vec<(Gas, Vec<u8>)> =
                    (0..n).map(|i| (gas, vec![i as u8])).collect();
                let txs = specs
                    .iter()
                    .enumerate()
                    .map(|(i, (gas, accounts))| {
                        TransactionRecord::new(
                            TxHash::new([i as u8; 32]),
                            1,
                            i as u64,
                            *gas,
                            accounts.iter().map(|&b| acct(b)),
                        )
                    })
                    .collect();
                let b = BlockTrace::new(1, txs);
                let g = ConflictGraph::build(&b);
                let span = |k: usize| simple_schedule(&b, &g, k, SimpleVariant::Prefix).makespan;
                prop_assert_eq!(span(threads), (n as Gas).div_ceil(threads as Gas) * gas);
                prop_assert!(span(threads + 1) <= span(threads));
            }
        }
    }
}
