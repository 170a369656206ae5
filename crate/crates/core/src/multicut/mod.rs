//! Lifted multicut: objective, feasibility, greedy additive edge contraction,
//! Kernighan-Lin local search, exhaustive oracle and the two-stage re-solve.
//!
//! Edge costs are join attractions: the objective sums the costs of cut edges
//! and is minimized. A partition is feasible when every component is connected
//! by base edges; lifted edges never connect anything by themselves.

mod exact;
mod gaec;
mod kl;
mod two_stage;

use std::collections::VecDeque;

use serde::Serialize;
use thiserror::Error;

pub use exact::{exact_optimal, ExactResult, EXACT_MAX_NODES};
pub use gaec::gaec;
pub use kl::{kl_local, KlStats};
pub use two_stage::{merge_clusters, two_stage_solve, TwoStageParams, TwoStageResult};

/// Minimum objective decrease accepted as an improvement.
pub const IMPROVEMENT_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MulticutError {
    #[error("labeling has {got} entries for {expected} nodes")]
    InconsistentLabeling { expected: usize, got: usize },
    #[error("component {0:?} is not connected by base edges")]
    InfeasibleInput(Vec<usize>),
    #[error("{0} nodes exceed the exhaustive limit of {EXACT_MAX_NODES}")]
    TooLarge(usize),
    #[error("edge ({u}, {v}) is invalid for {n} nodes")]
    InvalidEdge { u: usize, v: usize, n: usize },
    #[error("constraint edge ({u}, {v}) joined")]
    ConstraintViolated { u: usize, v: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedEdge {
    pub u: usize,
    pub v: usize,
    pub cost: f64,
    /// Must end up cut.
    pub constraint: bool,
}

impl WeightedEdge {
    pub fn new(u: usize, v: usize, cost: f64) -> Self {
        Self {
            u,
            v,
            cost,
            constraint: false,
        }
    }
}

/// A lifted multicut instance over nodes `0..n`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Problem {
    pub n: usize,
    pub base: Vec<WeightedEdge>,
    pub lifted: Vec<WeightedEdge>,
}

impl Problem {
    pub fn new(n: usize, base: Vec<WeightedEdge>, lifted: Vec<WeightedEdge>) -> Result<Self, MulticutError> {
        for e in base.iter().chain(&lifted) {
            if e.u == e.v || e.u >= n || e.v >= n {
                return Err(MulticutError::InvalidEdge { u: e.u, v: e.v, n });
            }
        }
        Ok(Self { n, base, lifted })
    }

    /// Convenience constructor from `(u, v, cost)` triples.
    pub fn from_triples(n: usize, base: &[(usize, usize, f64)], lifted: &[(usize, usize, f64)]) -> Result<Self, MulticutError> {
        let conv = |es: &[(usize, usize, f64)]| es.iter().map(|&(u, v, c)| WeightedEdge::new(u, v, c)).collect();
        Self::new(n, conv(base), conv(lifted))
    }

    pub fn edges(&self) -> impl Iterator<Item = &WeightedEdge> {
        self.base.iter().chain(&self.lifted)
    }

    /// Base adjacency lists, neighbours ascending.
    pub fn base_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for e in &self.base {
            adj[e.u].push(e.v);
            adj[e.v].push(e.u);
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }
}

/// Renumbers labels by first occurrence in node order.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// A feasible solution: a canonical node partition and the edge labels it induces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeLabeling {
    /// Component per node, numbered by first occurrence.
    pub partition: Vec<usize>,
    /// `true` = cut, parallel to `Problem::base`.
    pub base_cut: Vec<bool>,
    /// `true` = cut, parallel to `Problem::lifted`.
    pub lifted_cut: Vec<bool>,
}

impl EdgeLabeling {
    pub fn components(&self) -> usize {
        self.partition.iter().max().map_or(0, |m| m + 1)
    }
}

/// Nodes of the first component (in canonical order) not connected by base
/// edges inside itself, or `None` if all are.
pub fn disconnected_component(problem: &Problem, labels: &[usize]) -> Option<Vec<usize>> {
    let adj = problem.base_adjacency();
    let canon = canonical_labels(labels);
    let k = canon.iter().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); k];
    for (v, &c) in canon.iter().enumerate() {
        members[c].push(v);
    }
    let mut seen = vec![false; problem.n];
    for comp in members {
        let mut queue = VecDeque::from([comp[0]]);
        seen[comp[0]] = true;
        let mut reached = 1;
        while let Some(x) = queue.pop_front() {
            for &y in &adj[x] {
                if !seen[y] && canon[y] == canon[x] {
                    seen[y] = true;
                    reached += 1;
                    queue.push_back(y);
                }
            }
        }
        if reached != comp.len() {
            return Some(comp);
        }
    }
    None
}

/// Checks that every component is base-connected and derives the edge labels;
/// otherwise returns the offending component as a witness.
pub fn check_feasible(problem: &Problem, labels: &[usize]) -> Result<EdgeLabeling, MulticutError> {
    if labels.len() != problem.n {
        return Err(MulticutError::InconsistentLabeling {
            expected: problem.n,
            got: labels.len(),
        });
    }
    if let Some(witness) = disconnected_component(problem, labels) {
        return Err(MulticutError::InfeasibleInput(witness));
    }
    let partition = canonical_labels(labels);
    let cut = |e: &WeightedEdge| partition[e.u] != partition[e.v];
    Ok(EdgeLabeling {
        base_cut: problem.base.iter().map(cut).collect(),
        lifted_cut: problem.lifted.iter().map(cut).collect(),
        partition,
    })
}

/// Sum of the costs of cut edges.
pub fn objective(problem: &Problem, y: &EdgeLabeling) -> Result<f64, MulticutError> {
    if y.partition.len() != problem.n
        || y.base_cut.len() != problem.base.len()
        || y.lifted_cut.len() != problem.lifted.len()
    {
        return Err(MulticutError::InconsistentLabeling {
            expected: problem.n,
            got: y.partition.len(),
        });
    }
    for (e, &c) in problem.edges().zip(y.base_cut.iter().chain(&y.lifted_cut)) {
        if c != (y.partition[e.u] != y.partition[e.v]) {
            return Err(MulticutError::InconsistentLabeling {
                expected: problem.n,
                got: y.partition.len(),
            });
        }
    }
    Ok(partition_objective(problem, &y.partition))
}

/// Objective of a node labeling, without feasibility checks.
pub fn partition_objective(problem: &Problem, labels: &[usize]) -> f64 {
    problem
        .edges()
        .filter(|e| labels[e.u] != labels[e.v])
        .map(|e| e.cost)
        .sum()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SolveIterations {
    pub gaec_contractions: usize,
    pub kl_passes: usize,
    pub kl_moves: usize,
    pub kl_joins: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SolveReport {
    pub objective: f64,
    pub gaec_objective: f64,
    pub improved_by_kl: f64,
    pub iterations: SolveIterations,
    pub feasible: bool,
    pub components: usize,
}

/// GAEC followed by Kernighan-Lin local search.
pub fn solve(problem: &Problem) -> Result<(EdgeLabeling, SolveReport), MulticutError> {
    let (initial, contractions) = gaec(problem);
    let gaec_objective = partition_objective(problem, &initial.partition);
    let (y, stats) = kl_local(problem, &initial)?;
    let objective = objective(problem, &y)?;
    for (e, &cut) in problem.base.iter().zip(&y.base_cut) {
        if e.constraint && !cut {
            return Err(MulticutError::ConstraintViolated { u: e.u, v: e.v });
        }
    }
    let report = SolveReport {
        objective,
        gaec_objective,
        improved_by_kl: gaec_objective - objective,
        iterations: SolveIterations {
            gaec_contractions: contractions,
            kl_passes: stats.passes,
            kl_moves: stats.moves,
            kl_joins: stats.joins,
        },
        feasible: true,
        components: y.components(),
    };
    Ok((y, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn triangle() -> Problem {
        Problem::from_triples(3, &[(0, 1, 5.0), (0, 2, 3.0), (1, 2, -10.0)], &[]).unwrap()
    }

    #[test]
    fn objective_extremes() {
        let p = triangle();
        let one = check_feasible(&p, &[0, 0, 0]).unwrap();
        assert_eq!(objective(&p, &one).unwrap(), 0.0);
        let all = check_feasible(&p, &[0, 1, 2]).unwrap();
        assert_eq!(objective(&p, &all).unwrap(), -2.0);
        let y = check_feasible(&p, &[0, 0, 1]).unwrap();
        assert_eq!(objective(&p, &y).unwrap(), -7.0);
    }

    #[test]
    fn path_witness() {
        let p = Problem::from_triples(3, &[(0, 1, 1.0), (1, 2, 1.0)], &[]).unwrap();
        assert_eq!(
            check_feasible(&p, &[0, 1, 0]),
            Err(MulticutError::InfeasibleInput(vec![0, 2]))
        );
        assert!(check_feasible(&p, &[0, 0, 1]).is_ok());
        assert!(check_feasible(&p, &[0, 0]).is_err());
    }

    #[test]
    fn lifted_edges_do_not_connect() {
        let p = Problem::from_triples(2, &[], &[(0, 1, 3.0)]).unwrap();
        assert!(check_feasible(&p, &[0, 0]).is_err());
        let y = check_feasible(&p, &[0, 1]).unwrap();
        assert_eq!(objective(&p, &y).unwrap(), 3.0);
    }

    #[test]
    fn inconsistent_labels_rejected() {
        let p = triangle();
        let mut y = check_feasible(&p, &[0, 0, 1]).unwrap();
        y.base_cut[0] = true;
        assert!(objective(&p, &y).is_err());
    }

    #[test]
    fn invalid_edges_rejected() {
        assert!(Problem::from_triples(2, &[(0, 0, 1.0)], &[]).is_err());
        assert!(Problem::from_triples(2, &[(0, 2, 1.0)], &[]).is_err());
    }

    #[test]
    fn solve_examples() {
        let (y, r) = solve(&Problem::default()).unwrap();
        assert!(y.partition.is_empty());
        assert_eq!(r.objective, 0.0);

        let (y, r) = solve(&triangle()).unwrap();
        assert_eq!(y.partition, vec![0, 0, 1]);
        assert_eq!(r.objective, -7.0);

        let mut p = Problem::from_triples(2, &[(0, 1, -4.0)], &[]).unwrap();
        p.base[0].constraint = true;
        p.base.push(WeightedEdge::new(0, 1, 3.0));
        let (y, _) = solve(&p).unwrap();
        assert_eq!(y.partition, vec![0, 1]);
    }

    #[test]
    fn canonical_relabeling() {
        assert_eq!(canonical_labels(&[5, 5, 2, 9, 2]), vec![0, 0, 1, 2, 1]);
    }
}
