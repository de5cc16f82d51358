//! Conflict graph over a block's transactions.
//!
//! Two transactions conflict when their access lists share at least one
//! account. Edges are never materialized: a hot account touched by every
//! transaction would force C(n,2) pairs. Instead each transaction is
//! unioned with the previous toucher of each of its accounts, which yields
//! the same connected components in O(total accesses * alpha(n)).

use std::collections::HashMap;

use thiserror::Error;

use crate::scalar::GasScalar;
use crate::trace::{Account, BlockTrace};
use crate::Gas;

/// Disjoint-set forest with union by size and path halving.
struct Dsu {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }
}

/// Partition of a block's transactions into conflict components.
///
/// Component ids are the smallest member position, so ids are stable under
/// rebuilding and independent of union order.
#[derive(Clone, Debug)]
pub struct ConflictGraph<G: GasScalar = Gas> {
    component_of: Vec<usize>,
    /// Component ids in ascending order, paired with total gas.
    component_gas: Vec<(usize, G)>,
    accounts: Vec<std::collections::BTreeSet<Account>>,
    total_gas: G,
}

impl<G: GasScalar> ConflictGraph<G> {
    pub fn build(block: &BlockTrace<G>) -> Self {
        let n = block.transactions.len();
        let mut dsu = Dsu::new(n);
        let mut last_toucher: HashMap<Account, usize> = HashMap::new();
        for (pos, tx) in block.transactions.iter().enumerate() {
            for account in &tx.accounts {
                if let Some(&prev) = last_toucher.get(account) {
                    dsu.union(prev, pos);
                }
                last_toucher.insert(*account, pos);
            }
        }

        // Canonical id = smallest member; ascending scan sees it first.
        let mut canonical: HashMap<usize, usize> = HashMap::new();
        let mut component_of = vec![0usize; n];
        let mut gas_by_id: Vec<(usize, G)> = Vec::new();
        for (pos, assigned) in component_of.iter_mut().enumerate() {
            let root = dsu.find(pos);
            let id = *canonical.entry(root).or_insert(pos);
            *assigned = id;
            if id == pos {
                gas_by_id.push((id, G::zero()));
            }
            let slot = gas_by_id
                .iter_mut()
                .rfind(|(cid, _)| *cid == id)
                .expect("id registered on first sight");
            slot.1 = slot.1 + block.transactions[pos].gas_used;
        }

        ConflictGraph {
            component_of,
            component_gas: gas_by_id,
            accounts: block.transactions.iter().map(|tx| tx.accounts.clone()).collect(),
            total_gas: block.total_gas(),
        }
    }

    pub fn n(&self) -> usize {
        self.component_of.len()
    }

    /// Pair query: true iff the two access lists intersect.
    pub fn conflicts(&self, i: usize, j: usize) -> bool {
        if i == j {
            return false;
        }
        let (a, b) = (&self.accounts[i], &self.accounts[j]);
        let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
        small.iter().any(|acct| large.contains(acct))
    }

    pub fn component_of(&self, pos: usize) -> usize {
        self.component_of[pos]
    }

    pub fn component_count(&self) -> usize {
        self.component_gas.len()
    }

    /// Members grouped by component, ids ascending, members ascending.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut by_id: HashMap<usize, Vec<usize>> = HashMap::new();
        for (pos, &id) in self.component_of.iter().enumerate() {
            by_id.entry(id).or_default().push(pos);
        }
        self.component_gas
            .iter()
            .map(|(id, _)| by_id.remove(id).expect("every id has members"))
            .collect()
    }

    pub fn component_gas(&self) -> &[(usize, G)] {
        &self.component_gas
    }

    pub fn total_gas(&self) -> G {
        self.total_gas
    }
}

/// Largest-cluster bound: serialize every component, run all components in
/// parallel on unlimited threads. The heaviest component sets the makespan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterMetric<G: GasScalar = Gas> {
    pub makespan: G,
    pub speedup: f64,
    pub largest_component_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("empty block has no cluster metric")]
pub struct EmptyBlock;

pub fn largest_cluster_metric<G: GasScalar>(
    graph: &ConflictGraph<G>,
) -> Result<ClusterMetric<G>, EmptyBlock> {
    if graph.n() == 0 {
        return Err(EmptyBlock);
    }
    // Ids ascend, so strict comparison keeps the lowest-id component on ties.
    let (heaviest_id, makespan) = graph
        .component_gas
        .iter()
        .copied()
        .fold(None::<(usize, G)>, |best, (id, gas)| match best {
            Some((_, best_gas)) if gas <= best_gas => best,
            _ => Some((id, gas)),
        })
        .expect("non-empty graph has components");
    let size = graph
        .component_of
        .iter()
        .filter(|&&id| id == heaviest_id)
        .count();
    Ok(ClusterMetric {
        makespan,
        speedup: graph.total_gas.as_f64() / makespan.as_f64(),
        largest_component_size: size,
    })
}
