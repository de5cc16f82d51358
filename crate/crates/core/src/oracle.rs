//! Exact optimal-makespan solver for small instances, used as ground
//! truth by property tests and the `oracle-check` subcommand.
//!
//! The search enumerates schedules by repeatedly appending one
//! precedence-ready task to one thread, starting it at
//! max(ready time, thread free time). For any feasible schedule, feeding
//! its tasks back in ascending start-time order reproduces starts no
//! later than the original, so this enumeration always contains an
//! optimal makespan schedule and exhausting it is sound.

use thiserror::Error;

use crate::heft::{upward_rank, PrecedenceDag};
use crate::scalar::GasScalar;
use crate::schedule::{Schedule, ScheduleEntry};
use crate::Gas;

#[derive(Clone, Copy, Debug)]
pub struct OracleLimits {
    pub max_tasks: usize,
    pub max_threads: usize,
}

impl Default for OracleLimits {
    /// Worst cases stay well under a second at these sizes.
    fn default() -> Self {
        OracleLimits {
            max_tasks: 8,
            max_threads: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("instance has {n} tasks, oracle limit is {max}")]
    TooManyTasks { n: usize, max: usize },
    #[error("instance uses {threads} threads, oracle limit is {max}")]
    TooManyThreads { threads: usize, max: usize },
}

#[derive(Clone, Debug)]
pub struct OracleResult<G: GasScalar = Gas> {
    pub optimal_makespan: G,
    pub witness: Schedule<G>,
    pub explored: u64,
}

struct Search<'a, G: GasScalar> {
    dag: &'a PrecedenceDag<G>,
    threads: usize,
    rank: Vec<G>,
    best_makespan: G,
    best_entries: Vec<ScheduleEntry<G>>,
    explored: u64,
    // Mutable per-node state, restored on backtrack.
    free: Vec<G>,
    entries: Vec<ScheduleEntry<G>>,
    scheduled: u64,
    /// Fully expanded states. A state's subtree depends only on the state,
    /// and the first expansion already found every completion that could
    /// beat any later incumbent, so revisits are safe to skip.
    seen: std::collections::HashSet<Vec<u128>>,
}

impl<G: GasScalar> Search<'_, G> {
    fn ready_time(&self, task: usize) -> G {
        self.dag
            .predecessors(task)
            .iter()
            .map(|&p| self.entries[p].finish)
            .max()
            .unwrap_or_else(G::zero)
    }

    /// Tasks whose predecessors are all scheduled, lowest index only per
    /// interchangeability class (equal weight, identical predecessor and
    /// successor sets): swapping two interchangeable tasks in any schedule
    /// preserves feasibility and makespan.
    fn ready_tasks(&self) -> Vec<usize> {
        let n = self.dag.n();
        let mut ready: Vec<usize> = (0..n)
            .filter(|&t| {
                self.scheduled & 1 << t == 0
                    && self
                        .dag
                        .predecessors(t)
                        .iter()
                        .all(|&p| self.scheduled & 1 << p != 0)
            })
            .collect();
        let interchangeable = |a: usize, b: usize| {
            self.dag.weight(a) == self.dag.weight(b)
                && self.dag.predecessors(a) == self.dag.predecessors(b)
                && self.dag.successors(a) == self.dag.successors(b)
        };
        let snapshot = ready.clone();
        ready.retain(|&t| !snapshot.iter().any(|&earlier| earlier < t && interchangeable(earlier, t)));
        // Critical tasks first: finds tight upper bounds early.
        ready.sort_by_key(|&t| std::cmp::Reverse(self.rank[t]));
        ready
    }

    /// Lower bound on the best completion reachable from this node.
    fn lower_bound(&self, current_max: G) -> u128 {
        let n = self.dag.n();
        let mut bound = current_max
            .to_u128()
            .expect("gas fits u128");

        let min_free = self.free.iter().copied().min().unwrap_or_else(G::zero);
        let mut remaining: u128 = 0;
        for t in 0..n {
            if self.scheduled & 1 << t != 0 {
                continue;
            }
            remaining += self.dag.weight(t).to_u128().expect("gas fits u128");
            // Earliest conceivable start: scheduled predecessors must
            // finish and some thread must be free.
            let mut est = min_free;
            for &p in self.dag.predecessors(t) {
                if self.scheduled & 1 << p != 0 {
                    est = est.max(self.entries[p].finish);
                }
            }
            let chain = est.to_u128().expect("gas fits u128")
                + self.rank[t].to_u128().expect("gas fits u128");
            bound = bound.max(chain);
        }

        let busy: u128 = self
            .free
            .iter()
            .map(|f| f.to_u128().expect("gas fits u128"))
            .sum();
        let load = (busy + remaining).div_ceil(self.threads as u128);
        bound.max(load)
    }

    /// Everything the subtree below a node depends on: scheduled set,
    /// thread free times as a multiset (threads are identical), and
    /// finish times of scheduled tasks that still gate someone.
    fn state_key(&self) -> Vec<u128> {
        let mut key = Vec::with_capacity(1 + self.threads + 4);
        key.push(self.scheduled as u128);
        let mut free: Vec<u128> = self
            .free
            .iter()
            .map(|f| f.to_u128().expect("gas fits u128"))
            .collect();
        free.sort_unstable();
        key.extend(free);
        for t in 0..self.dag.n() {
            if self.scheduled & 1 << t != 0
                && self
                    .dag
                    .successors(t)
                    .iter()
                    .any(|&s| self.scheduled & 1 << s == 0)
            {
                key.push(self.entries[t].finish.to_u128().expect("gas fits u128"));
            }
        }
        key
    }

    fn dfs(&mut self, placed: usize, current_max: G) {
        if placed == self.dag.n() {
            if current_max < self.best_makespan {
                self.best_makespan = current_max;
                self.best_entries = self.entries.clone();
            }
            return;
        }
        if self.lower_bound(current_max) >= self.best_makespan.to_u128().expect("gas fits u128") {
            return;
        }
        if !self.seen.insert(self.state_key()) {
            return;
        }
        self.explored += 1;

        for task in self.ready_tasks() {
            let ready = self.ready_time(task);
            // Threads with equal free time are interchangeable.
            let mut tried: Vec<G> = Vec::with_capacity(self.threads);
            for thread in 0..self.threads {
                let free = self.free[thread];
                if tried.contains(&free) {
                    continue;
                }
                tried.push(free);

                let start = ready.max(free);
                let finish = start + self.dag.weight(task);
                let saved_free = self.free[thread];
                let saved_entry = self.entries[task];
                self.free[thread] = finish;
                self.entries[task] = ScheduleEntry {
                    thread,
                    start,
                    finish,
                };
                self.scheduled |= 1 << task;
                self.dfs(placed + 1, current_max.max(finish));
                self.scheduled &= !(1 << task);
                self.entries[task] = saved_entry;
                self.free[thread] = saved_free;
            }
        }
    }
}

/// Greedy append-only schedule in consensus order; feasible, so its
/// makespan seeds the branch-and-bound upper bound.
fn greedy_upper_bound<G: GasScalar>(dag: &PrecedenceDag<G>, threads: usize) -> Vec<ScheduleEntry<G>> {
    let mut free = vec![G::zero(); threads];
    let mut entries: Vec<ScheduleEntry<G>> = Vec::with_capacity(dag.n());
    for task in 0..dag.n() {
        let ready = dag
            .predecessors(task)
            .iter()
            .map(|&p| entries[p].finish)
            .max()
            .unwrap_or_else(G::zero);
        let thread = (0..threads)
            .min_by_key(|&m| (free[m].max(ready), m))
            .expect("at least one thread");
        let start = free[thread].max(ready);
        let finish = start + dag.weight(task);
        free[thread] = finish;
        entries.push(ScheduleEntry {
            thread,
            start,
            finish,
        });
    }
    entries
}

pub fn optimal_schedule<G: GasScalar>(
    dag: &PrecedenceDag<G>,
    threads: usize,
    limits: OracleLimits,
) -> Result<OracleResult<G>, OracleError> {
    let n = dag.n();
    if n > limits.max_tasks {
        return Err(OracleError::TooManyTasks {
            n,
            max: limits.max_tasks,
        });
    }
    if threads > limits.max_threads {
        return Err(OracleError::TooManyThreads {
            threads,
            max: limits.max_threads,
        });
    }
    assert!(threads >= 1, "need at least one thread");

    let seed = greedy_upper_bound(dag, threads);
    let seed_makespan = seed
        .iter()
        .map(|e| e.finish)
        .max()
        .unwrap_or_else(G::zero);

    let mut search = Search {
        dag,
        threads,
        rank: upward_rank(dag).rank,
        best_makespan: seed_makespan,
        best_entries: seed,
        explored: 0,
        free: vec![G::zero(); threads],
        entries: vec![
            ScheduleEntry {
                thread: 0,
                start: G::zero(),
                finish: G::zero(),
            };
            n
        ],
        scheduled: 0,
        seen: Default::default(),
    };
    search.dfs(0, G::zero());

    Ok(OracleResult {
        optimal_makespan: search.best_makespan,
        witness: Schedule::new(threads, search.best_entries),
        explored: search.explored,
    })
}
