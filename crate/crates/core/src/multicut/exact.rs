use super::{check_feasible, EdgeLabeling, MulticutError, Problem};

/// Largest instance the exhaustive oracle accepts.
pub const EXACT_MAX_NODES: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct ExactResult {
    pub labeling: EdgeLabeling,
    pub objective: f64,
    /// All set partitions visited.
    pub partitions_enumerated: u64,
    /// Partitions whose blocks are all base-connected.
    pub feasible_partitions: u64,
}

struct Search<'a> {
    n: usize,
    /// Edges to earlier nodes, per node: (earlier node, cost).
    back: Vec<Vec<(usize, f64)>>,
    problem: &'a Problem,
    labels: Vec<usize>,
    best: Option<(f64, Vec<usize>)>,
    enumerated: u64,
    feasible: u64,
}

impl Search<'_> {
    /// Each block is base-connected iff the unions inside blocks leave exactly
    /// one node-level component per block.
    fn connected(&self) -> bool {
        fn find(p: &mut [usize], mut v: usize) -> usize {
            while p[v] != v {
                p[v] = p[p[v]];
                v = p[v];
            }
            v
        }
        let mut parent: Vec<usize> = (0..self.n).collect();
        let mut unions = 0;
        for e in &self.problem.base {
            if self.labels[e.u] == self.labels[e.v] {
                let (a, b) = (find(&mut parent, e.u), find(&mut parent, e.v));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                    unions += 1;
                }
            }
        }
        let blocks = self.labels.iter().max().map_or(0, |m| m + 1);
        self.n - unions == blocks
    }

    /// Restricted growth strings in lexicographic order.
    fn visit(&mut self, i: usize, max_label: usize, cost: f64) {
        if i == self.n {
            self.enumerated += 1;
            if !self.connected() {
                return;
            }
            self.feasible += 1;
            if self.best.as_ref().is_none_or(|(b, _)| cost < *b) {
                self.best = Some((cost, self.labels.clone()));
            }
            return;
        }
        let limit = if i == 0 { 0 } else { max_label + 1 };
        for l in 0..=limit {
            self.labels[i] = l;
            let added: f64 = self.back[i]
                .iter()
                .filter(|&&(j, _)| self.labels[j] != l)
                .map(|&(_, c)| c)
                .sum();
            self.visit(i + 1, max_label.max(l), cost + added);
        }
    }
}

/// Exhaustive minimum over all partitions into base-connected blocks. Ties
/// keep the lexicographically smallest canonical labeling.
pub fn exact_optimal(problem: &Problem) -> Result<ExactResult, MulticutError> {
    if problem.n > EXACT_MAX_NODES {
        return Err(MulticutError::TooLarge(problem.n));
    }
    if problem.n == 0 {
        return Ok(ExactResult {
            labeling: check_feasible(problem, &[])?,
            objective: 0.0,
            partitions_enumerated: 1,
            feasible_partitions: 1,
        });
    }
    let mut back = vec![Vec::new(); problem.n];
    for e in problem.edges() {
        let (lo, hi) = (e.u.min(e.v), e.u.max(e.v));
        back[hi].push((lo, e.cost));
    }
    let mut s = Search {
        n: problem.n,
        back,
        problem,
        labels: vec![0; problem.n],
        best: None,
        enumerated: 0,
        feasible: 0,
    };
    s.visit(0, 0, 0.0);
    let (objective, labels) = s.best.expect("singletons are always feasible");
    Ok(ExactResult {
        labeling: check_feasible(problem, &labels)?,
        objective,
        partitions_enumerated: s.enumerated,
        feasible_partitions: s.feasible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multicut::partition_objective;

    #[test]
    fn single_node() {
        let p = Problem::from_triples(1, &[], &[]).unwrap();
        let r = exact_optimal(&p).unwrap();
        assert_eq!(r.objective, 0.0);
        assert_eq!(r.labeling.partition, vec![0]);
    }

    #[test]
    fn triangle_optimum() {
        let p = Problem::from_triples(3, &[(0, 1, 5.0), (0, 2, 3.0), (1, 2, -10.0)], &[]).unwrap();
        let r = exact_optimal(&p).unwrap();
        assert_eq!(r.objective, -7.0);
        assert_eq!(r.labeling.partition, vec![0, 0, 1]);
        assert_eq!(r.partitions_enumerated, 5);
        assert_eq!(r.feasible_partitions, 5);
    }

    #[test]
    fn bell_ten_on_complete_graph() {
        let mut base = Vec::new();
        for u in 0..10 {
            for v in u + 1..10 {
                base.push((u, v, 0.0));
            }
        }
        let p = Problem::from_triples(10, &base, &[]).unwrap();
        let r = exact_optimal(&p).unwrap();
        assert_eq!(r.partitions_enumerated, 115_975);
        assert_eq!(r.feasible_partitions, 115_975);
    }

    #[test]
    fn path_filters_disconnected_blocks() {
        // of the 5 partitions of a 3-path only {0,2}{1} is disconnected
        let p = Problem::from_triples(3, &[(0, 1, 1.0), (1, 2, 1.0)], &[]).unwrap();
        let r = exact_optimal(&p).unwrap();
        assert_eq!(r.feasible_partitions, 4);
    }

    #[test]
    fn matches_brute_force_objective() {
        let p = Problem::from_triples(4, &[(0, 1, 0.5), (1, 2, -0.2), (2, 3, 0.7)], &[(0, 3, -0.9)]).unwrap();
        let r = exact_optimal(&p).unwrap();
        assert!((partition_objective(&p, &r.labeling.partition) - r.objective).abs() < 1e-12);
    }

    #[test]
    fn too_large() {
        let p = Problem::from_triples(13, &[], &[]).unwrap();
        assert_eq!(exact_optimal(&p), Err(MulticutError::TooLarge(13)));
    }
}
