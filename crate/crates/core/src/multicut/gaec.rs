use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use super::{check_feasible, EdgeLabeling, Problem};

/// Inter-cluster totals; `base` marks base adjacency.
#[derive(Debug, Clone, Copy, Default)]
struct Link {
    cost: f64,
    base: bool,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: f64,
    a: usize,
    b: usize,
    stamp_a: u64,
    stamp_b: u64,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    /// Larger cost first, then the smaller `(a, b)` pair.
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then_with(|| (other.a, other.b).cmp(&(self.a, self.b)))
    }
}

/// Greedy additive edge contraction. Repeatedly merges the base-adjacent
/// cluster pair with the largest summed base and lifted cost while it is
/// positive. Clusters are named by their smallest node. Returns the labeling
/// and the number of contractions.
pub fn gaec(problem: &Problem) -> (EdgeLabeling, usize) {
    let n = problem.n;
    let mut links: Vec<BTreeMap<usize, Link>> = vec![BTreeMap::new(); n];
    for (e, is_base) in problem
        .base
        .iter()
        .map(|e| (e, true))
        .chain(problem.lifted.iter().map(|e| (e, false)))
    {
        for (x, y) in [(e.u, e.v), (e.v, e.u)] {
            let l = links[x].entry(y).or_default();
            l.cost += e.cost;
            l.base |= is_base;
        }
    }
    let mut stamp = vec![0u64; n];
    let mut parent: Vec<usize> = (0..n).collect();
    let mut heap = BinaryHeap::new();
    for (a, row) in links.iter().enumerate() {
        for (&b, l) in row.range(a + 1..) {
            if l.base && l.cost > 0.0 {
                heap.push(Candidate {
                    cost: l.cost,
                    a,
                    b,
                    stamp_a: 0,
                    stamp_b: 0,
                });
            }
        }
    }

    let mut contractions = 0;
    while let Some(c) = heap.pop() {
        if parent[c.a] != c.a || parent[c.b] != c.b || stamp[c.a] != c.stamp_a || stamp[c.b] != c.stamp_b {
            continue;
        }
        // c.a < c.b: keep the smaller name
        let (keep, gone) = (c.a, c.b);
        parent[gone] = keep;
        contractions += 1;
        stamp[keep] += 1;
        stamp[gone] += 1;
        let moved = std::mem::take(&mut links[gone]);
        links[keep].remove(&gone);
        for (x, l) in moved {
            if x == keep {
                continue;
            }
            let back = links[x].remove(&gone).expect("symmetric links");
            let entry = links[keep].entry(x).or_default();
            entry.cost += l.cost;
            entry.base |= l.base;
            let rev = links[x].entry(keep).or_default();
            rev.cost += back.cost;
            rev.base |= back.base;
        }
        for (&x, l) in &links[keep] {
            if l.base && l.cost > 0.0 {
                let (a, b) = (keep.min(x), keep.max(x));
                heap.push(Candidate {
                    cost: l.cost,
                    a,
                    b,
                    stamp_a: stamp[a],
                    stamp_b: stamp[b],
                });
            }
        }
    }

    let find = |mut v: usize| {
        while parent[v] != v {
            v = parent[v];
        }
        v
    };
    let labels: Vec<usize> = (0..n).map(find).collect();
    let y = check_feasible(problem, &labels).expect("contraction keeps clusters base-connected");
    (y, contractions)
}
