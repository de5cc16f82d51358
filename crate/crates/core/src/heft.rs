//! HEFT list scheduling over the precedence DAG induced by consensus
//! order and access-list conflicts.
//!
//! Threads are homogeneous and communication costs are zero, so HEFT's
//! average-cost terms collapse to plain gas weights. Tasks are placed in
//! descending upward-rank order using insertion-based earliest finish
//! time: a task may fill an idle gap in a thread's timeline, not only
//! append at the end.

use crate::scalar::{div_ceil, GasScalar};
use crate::schedule::{Schedule, ScheduleEntry};
use crate::trace::BlockTrace;
use crate::Gas;

/// Forward-edge DAG: every edge (i, j) has i < j in consensus order, so
/// acyclicity holds by construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrecedenceDag<G: GasScalar = Gas> {
    weights: Vec<G>,
    successors: Vec<Vec<usize>>,
    predecessors: Vec<Vec<usize>>,
}

/// Word-packed bitset over task indices, used for reachability.
struct Bits(Vec<u64>);

impl Bits {
    fn new(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }

    fn contains(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 != 0
    }

    fn insert(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn union_with(&mut self, other: &Bits) {
        for (w, o) in self.0.iter_mut().zip(&other.0) {
            *w |= o;
        }
    }
}

impl<G: GasScalar> PrecedenceDag<G> {
    /// Builds the reduced DAG for a block: an edge wherever two
    /// transactions conflict, minus transitive shortcuts.
    ///
    /// Only consecutive touchers of each account are linked before
    /// reduction. Any other conflicting pair (i, j) shares an account
    /// whose toucher chain connects i to j, so the transitive closure is
    /// unchanged, and the reduction of a DAG depends only on its closure.
    pub fn build(block: &BlockTrace<G>) -> Self {
        let mut last_toucher: std::collections::HashMap<&crate::trace::Account, usize> =
            Default::default();
        let mut edges = Vec::new();
        for (j, tx) in block.transactions.iter().enumerate() {
            for account in &tx.accounts {
                if let Some(&i) = last_toucher.get(account) {
                    edges.push((i, j));
                }
                last_toucher.insert(account, j);
            }
        }
        let weights = block.transactions.iter().map(|tx| tx.gas_used).collect();
        Self::from_edges(weights, &edges).transitive_reduction()
    }

    /// Builds from an explicit forward edge list (duplicates allowed).
    /// Panics if an edge does not satisfy i < j < n.
    pub fn from_edges(weights: Vec<G>, edges: &[(usize, usize)]) -> Self {
        let n = weights.len();
        let mut successors = vec![Vec::new(); n];
        let mut predecessors = vec![Vec::new(); n];
        let mut sorted: Vec<(usize, usize)> = edges.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        for (i, j) in sorted {
            assert!(i < j && j < n, "edge ({i},{j}) must point forward within 0..{n}");
            successors[i].push(j);
            predecessors[j].push(i);
        }
        PrecedenceDag {
            weights,
            successors,
            predecessors,
        }
    }

    /// Removes every edge implied by a longer path. The result is the
    /// unique minimal DAG with the same reachability.
    pub fn transitive_reduction(&self) -> Self {
        let n = self.weights.len();
        let mut reach: Vec<Bits> = Vec::with_capacity(n);
        reach.resize_with(n, || Bits::new(n));
        let mut kept = vec![Vec::new(); n];
        for i in (0..n).rev() {
            let mut from_i = Bits::new(n);
            for &j in &self.successors[i] {
                if !from_i.contains(j) {
                    kept[i].push(j);
                    from_i.insert(j);
                    from_i.union_with(&reach[j]);
                }
            }
            reach[i] = from_i;
        }
        let edges: Vec<(usize, usize)> = kept
            .iter()
            .enumerate()
            .flat_map(|(i, js)| js.iter().map(move |&j| (i, j)))
            .collect();
        Self::from_edges(self.weights.clone(), &edges)
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, task: usize) -> G {
        self.weights[task]
    }

    pub fn weights(&self) -> &[G] {
        &self.weights
    }

    pub fn successors(&self, task: usize) -> &[usize] {
        &self.successors[task]
    }

    pub fn predecessors(&self, task: usize) -> &[usize] {
        &self.predecessors[task]
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.successors
            .iter()
            .enumerate()
            .flat_map(|(i, js)| js.iter().map(move |&j| (i, j)))
    }

    pub fn total_weight(&self) -> G {
        self.weights.iter().copied().sum()
    }
}

/// Upward ranks: rank(i) = weight(i) + max rank over successors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankTable<G: GasScalar = Gas> {
    pub rank: Vec<G>,
}

impl<G: GasScalar> RankTable<G> {
    /// Heaviest path weight anywhere in the DAG.
    pub fn critical_path(&self) -> G {
        self.rank.iter().copied().max().unwrap_or_else(G::zero)
    }
}

pub fn upward_rank<G: GasScalar>(dag: &PrecedenceDag<G>) -> RankTable<G> {
    let n = dag.n();
    let mut rank = vec![G::zero(); n];
    // All successors have larger index, so reverse order suffices.
    for i in (0..n).rev() {
        let tail = dag.successors[i]
            .iter()
            .map(|&j| rank[j])
            .max()
            .unwrap_or_else(G::zero);
        rank[i] = dag.weights[i] + tail;
    }
    RankTable { rank }
}

/// Busy intervals of one thread, sorted by start.
#[derive(Default)]
struct Timeline<G>(Vec<(G, G)>);

impl<G: GasScalar> Timeline<G> {
    /// Earliest start >= ready of a gap that fits `weight`.
    fn earliest_start(&self, ready: G, weight: G) -> G {
        let mut candidate = ready;
        for &(start, finish) in &self.0 {
            if candidate + weight <= start {
                return candidate;
            }
            candidate = candidate.max(finish);
        }
        candidate
    }

    fn insert(&mut self, start: G, finish: G) {
        let at = self.0.partition_point(|&(s, _)| s < start);
        self.0.insert(at, (start, finish));
    }
}

pub fn heft_schedule<G: GasScalar>(dag: &PrecedenceDag<G>, threads: usize) -> Schedule<G> {
    assert!(threads >= 1, "need at least one thread");
    let n = dag.n();
    let ranks = upward_rank(dag);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(ranks.rank[i]), i));

    let mut timelines: Vec<Timeline<G>> = Vec::with_capacity(threads);
    timelines.resize_with(threads, Timeline::default);
    let mut entries: Vec<Option<ScheduleEntry<G>>> = vec![None; n];

    for &task in &order {
        // Strict rank ordering places predecessors first.
        debug_assert!(dag.predecessors[task].iter().all(|&p| entries[p].is_some()));
        let ready = dag.predecessors[task]
            .iter()
            .map(|&p| entries[p].expect("predecessor placed").finish)
            .max()
            .unwrap_or_else(G::zero);
        let weight = dag.weights[task];

        let mut best: Option<(G, usize, G)> = None; // (finish, thread, start)
        for (thread, timeline) in timelines.iter().enumerate() {
            let start = timeline.earliest_start(ready, weight);
            let finish = start + weight;
            // Strictly-less keeps the lowest thread id on finish ties.
            if best.is_none_or(|(bf, _, _)| finish < bf) {
                best = Some((finish, thread, start));
            }
        }
        let (finish, thread, start) = best.expect("at least one thread");
        timelines[thread].insert(start, finish);
        entries[task] = Some(ScheduleEntry {
            thread,
            start,
            finish,
        });
    }

    Schedule::new(
        threads,
        entries
            .into_iter()
            .map(|e| e.expect("every task placed"))
            .collect(),
    )
}

/// Schedule validity against an explicit DAG: durations match weights,
/// no same-thread overlap, and start(j) >= finish(i) for every edge.
/// Checking the stored edges suffices for their transitive closure,
/// since start times chain monotonically along any path.
pub fn check_valid_dag<G: GasScalar>(
    schedule: &Schedule<G>,
    dag: &PrecedenceDag<G>,
) -> Vec<crate::schedule::ScheduleViolation> {
    use crate::schedule::ScheduleViolation;
    let n = dag.n();
    let mut violations = Vec::new();
    if schedule.entries.len() != n {
        violations.push(ScheduleViolation::WrongEntryCount {
            expected: n,
            got: schedule.entries.len(),
        });
        return violations;
    }
    for (task, entry) in schedule.entries.iter().enumerate() {
        let duration_ok =
            entry.finish >= entry.start && entry.finish - entry.start == dag.weights[task];
        if !duration_ok {
            violations.push(ScheduleViolation::BadDuration { tx: task });
        }
        if entry.thread >= schedule.threads {
            violations.push(ScheduleViolation::ThreadOutOfRange {
                tx: task,
                thread: entry.thread,
                threads: schedule.threads,
            });
        }
    }
    let mut by_thread: Vec<Vec<usize>> = vec![Vec::new(); schedule.threads];
    for (task, entry) in schedule.entries.iter().enumerate() {
        if entry.thread < schedule.threads {
            by_thread[entry.thread].push(task);
        }
    }
    for (thread, mut tasks) in by_thread.into_iter().enumerate() {
        tasks.sort_by_key(|&t| (schedule.entries[t].start, t));
        for pair in tasks.windows(2) {
            if schedule.entries[pair[1]].start < schedule.entries[pair[0]].finish {
                violations.push(ScheduleViolation::ThreadOverlap {
                    thread,
                    first: pair[0],
                    second: pair[1],
                });
            }
        }
    }
    for (i, j) in dag.edges() {
        if schedule.entries[j].start < schedule.entries[i].finish {
            if schedule.entries[j].finish <= schedule.entries[i].start {
                violations.push(ScheduleViolation::ConsensusInversion { i, j });
            } else {
                violations.push(ScheduleViolation::ConflictOverlap { i, j });
            }
        }
    }
    violations
}

/// Integer lower bound every valid schedule obeys:
/// max(critical path, ceil(total / threads), max weight).
pub fn makespan_lower_bound<G: GasScalar>(dag: &PrecedenceDag<G>, threads: usize) -> G {
    let cp = upward_rank(dag).critical_path();
    let balance = div_ceil(dag.total_weight(), G::from_count(threads));
    let heaviest = dag.weights().iter().copied().max().unwrap_or_else(G::zero);
    cp.max(balance).max(heaviest)
}
