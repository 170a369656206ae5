use std::collections::BTreeMap;

use thiserror::Error;

use super::{canonical_labels, solve, MulticutError, SolveReport};
use crate::affinity::AffinityContext;
use crate::graph::{build_graph, EdgeWeights, GraphError, GraphParams};
use crate::tracklets::Tracklet;

pub const DEFAULT_MAX_ROUNDS: usize = 4;

#[derive(Debug, Error)]
pub enum TwoStageError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Multicut(#[from] MulticutError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TwoStageParams {
    /// Upper bound on solves, the first one included.
    pub max_rounds: usize,
}

impl Default for TwoStageParams {
    fn default() -> Self {
        Self {
            max_rounds: DEFAULT_MAX_ROUNDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageResult {
    /// Canonical component per input tracklet.
    pub labels: Vec<usize>,
    pub rounds: usize,
    pub converged: bool,
    pub reports: Vec<SolveReport>,
    /// Component count after each round.
    pub components: Vec<usize>,
}

/// Merges the tracklets of each cluster camera by camera into one node per
/// (cluster, camera), detections in time order. Returns the merged nodes,
/// numbered from 0, and the node index of every input tracklet.
pub fn merge_clusters(
    ctx: &AffinityContext<'_>,
    tracklets: &[Tracklet],
    labels: &[usize],
) -> (Vec<Tracklet>, Vec<usize>) {
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, (t, &l)) in tracklets.iter().zip(labels).enumerate() {
        groups.entry((l, t.cam)).or_default().push(i);
    }
    let mut nodes = Vec::with_capacity(groups.len());
    let mut owner = vec![0; tracklets.len()];
    for (k, ((_, cam), members)) in groups.into_iter().enumerate() {
        let mut dets: Vec<u64> = members
            .iter()
            .flat_map(|&i| tracklets[i].detections.iter().copied())
            .collect();
        dets.sort_by_key(|&d| (ctx.scene.det(d).frame, d));
        for &i in &members {
            owner[i] = k;
        }
        nodes.push(Tracklet::new(k as u64, cam, dets));
    }
    (nodes, owner)
}

/// Solves on the tracklets, then repeatedly re-solves with each cluster's
/// per-camera tracklets merged into single nodes, until the partition of the
/// input tracklets stops changing or `max_rounds` solves were made.
pub fn two_stage_solve(
    tracklets: &[Tracklet],
    ctx: &AffinityContext<'_>,
    weights: EdgeWeights<'_>,
    graph_params: &GraphParams,
    params: &TwoStageParams,
) -> Result<TwoStageResult, TwoStageError> {
    let mut result = TwoStageResult {
        labels: Vec::new(),
        rounds: 0,
        converged: false,
        reports: Vec::new(),
        components: Vec::new(),
    };
    if tracklets.is_empty() {
        result.converged = true;
        return Ok(result);
    }
    let graph = build_graph(tracklets, ctx, weights, graph_params)?;
    let (y, report) = solve(&graph.problem())?;
    result.labels = y.partition;
    result.rounds = 1;
    result.components.push(report.components);
    result.reports.push(report);

    while result.rounds < params.max_rounds.max(1) {
        let (nodes, owner) = merge_clusters(ctx, tracklets, &result.labels);
        let graph = build_graph(&nodes, ctx, weights, graph_params)?;
        let (y, report) = solve(&graph.problem())?;
        let labels = canonical_labels(&owner.iter().map(|&k| y.partition[k]).collect::<Vec<_>>());
        result.rounds += 1;
        result.components.push(report.components);
        result.reports.push(report);
        if labels == result.labels {
            result.converged = true;
            break;
        }
        result.labels = labels;
    }
    Ok(result)
}
