//! End-to-end driver: pre-clustering, tracklet splitting, graph construction,
//! two-stage multicut, 3D interpolation and optional evaluation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::affinity::{AffinityContext, CombinerKind, CombinerWeights};
use crate::config::{Association, PipelineConfig};
use crate::evaluation::{evaluate_mot, ground_truth_frames, prediction_frames, MotReport};
use crate::graph::{build_graph, EdgeClass, EdgeWeights, GraphParams, TrackingGraph};
use crate::io::SceneBundle;
use crate::multicut::{canonical_labels, merge_clusters, solve, two_stage_solve, TwoStageResult};
use crate::precluster::{precluster_scene, SceneClusters};
use crate::tracklets::{split_tracklets, Tracklet};
use crate::trajectories::{clusters_to_trajectories, Trajectory};

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Precluster,
    Split,
    BuildGraph,
    Solve,
    Track,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Precluster,
        Stage::Split,
        Stage::BuildGraph,
        Stage::Solve,
        Stage::Track,
        Stage::Eval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Precluster => "precluster",
            Stage::Split => "split",
            Stage::BuildGraph => "build-graph",
            Stage::Solve => "solve",
            Stage::Track => "track",
            Stage::Eval => "eval",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Error)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    fn at(stage: Stage) -> impl FnOnce(String) -> Self {
        move |message| Self { stage, message }
    }
}

fn fail<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError {
        stage,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineWeights {
    pub temporal: Option<CombinerWeights>,
    pub spatial: Option<CombinerWeights>,
    pub split: Option<CombinerWeights>,
}

impl PipelineWeights {
    pub fn edge_weights(&self) -> EdgeWeights<'_> {
        EdgeWeights {
            temporal: self.temporal.as_ref(),
            spatial: self.spatial.as_ref(),
        }
    }
}

/// Reads one weight file and checks its kind.
pub fn read_weights(path: &Path, kind: CombinerKind) -> Result<CombinerWeights, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let w = CombinerWeights::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if w.kind != kind {
        return Err(format!("{}: expected {kind} weights, found {}", path.display(), w.kind));
    }
    Ok(w)
}

/// Loads the weight files named in the config.
pub fn load_weights(cfg: &PipelineConfig) -> Result<PipelineWeights, String> {
    let load = |p: &Option<std::path::PathBuf>, kind| p.as_deref().map(|p| read_weights(p, kind)).transpose();
    Ok(PipelineWeights {
        temporal: load(&cfg.weights_temporal, CombinerKind::Temporal)?,
        spatial: load(&cfg.weights_spatial, CombinerKind::Spatial)?,
        split: load(&cfg.weights_split, CombinerKind::Split)?,
    })
}

/// Artifacts of every stage that ran.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub clusters: SceneClusters,
    /// Input tracklets after splitting.
    pub tracklets: Option<Vec<Tracklet>>,
    /// First-round tracking graph.
    pub graph: Option<TrackingGraph>,
    pub solution: Option<TwoStageResult>,
    pub trajectories: Option<Vec<Trajectory>>,
    pub report: Option<MotReport>,
}

/// Runs the stages up to and including `stop_after`. Evaluation runs only
/// when the scene carries ground truth.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    scene: &SceneBundle,
    weights: &PipelineWeights,
    stop_after: Stage,
) -> Result<PipelineOutput, PipelineError> {
    let clusters = precluster_scene(scene, &cfg.precluster);
    let mut out = PipelineOutput {
        clusters,
        tracklets: None,
        graph: None,
        solution: None,
        trajectories: None,
        report: None,
    };
    if stop_after == Stage::Precluster {
        return Ok(out);
    }
    let ctx = AffinityContext::new(scene, &out.clusters, cfg.affinity);

    let input = scene
        .tracklets
        .as_deref()
        .ok_or_else(|| PipelineError::at(Stage::Split)("scene has no tracklets".into()))?;
    let tracklets = if cfg.split_enabled {
        let w = weights
            .split
            .as_ref()
            .ok_or_else(|| PipelineError::at(Stage::Split)("split weights required (or set split = false)".into()))?;
        split_tracklets(input, &ctx, w, cfg.split_threshold).map_err(fail(Stage::Split))?
    } else {
        input.to_vec()
    };
    if stop_after == Stage::Split {
        out.tracklets = Some(tracklets);
        return Ok(out);
    }

    let graph = build_graph(&tracklets, &ctx, weights.edge_weights(), &cfg.graph).map_err(fail(Stage::BuildGraph))?;
    if stop_after == Stage::BuildGraph {
        out.tracklets = Some(tracklets);
        out.graph = Some(graph);
        return Ok(out);
    }

    let solution = match cfg.association {
        Association::Joint => two_stage_solve(&tracklets, &ctx, weights.edge_weights(), &cfg.graph, &cfg.two_stage)
            .map_err(fail(Stage::Solve))?,
        Association::PerCameraThenLink => {
            per_camera_then_link(&tracklets, &ctx, weights.edge_weights(), &cfg.graph).map_err(fail(Stage::Solve))?
        }
    };
    let labels = solution.labels.clone();
    out.tracklets = Some(tracklets);
    out.graph = Some(graph);
    out.solution = Some(solution);
    if stop_after == Stage::Solve {
        return Ok(out);
    }

    let tracklets = out.tracklets.as_deref().expect("set above");
    let trajectories =
        clusters_to_trajectories(scene, tracklets, &labels, &cfg.interpolation).map_err(fail(Stage::Track))?;
    if stop_after >= Stage::Eval {
        if let Some(gt) = &scene.ground_truth {
            let report = evaluate_mot(
                &ground_truth_frames(gt),
                &prediction_frames(&trajectories),
                cfg.match_threshold,
            )
            .map_err(fail(Stage::Eval))?;
            out.report = Some(report);
        }
    }
    out.trajectories = Some(trajectories);
    Ok(out)
}

/// Ablation of the joint solve: links tracklets over time inside each camera
/// with temporal edges only, then links the resulting per-camera tracks
/// across cameras with spatial (and constraint) edges only.
pub fn per_camera_then_link(
    tracklets: &[Tracklet],
    ctx: &AffinityContext<'_>,
    weights: EdgeWeights<'_>,
    params: &GraphParams,
) -> Result<TwoStageResult, String> {
    let mut result = TwoStageResult {
        labels: vec![0; tracklets.len()],
        rounds: 0,
        converged: true,
        reports: Vec::new(),
        components: Vec::new(),
    };
    if tracklets.is_empty() {
        return Ok(result);
    }
    let mut cams: Vec<usize> = tracklets.iter().map(|t| t.cam).collect();
    cams.sort_unstable();
    cams.dedup();

    let temporal_only = EdgeWeights {
        temporal: weights.temporal,
        spatial: None,
    };
    let mut offset = 0;
    let mut stage_one = crate::multicut::SolveReport::default();
    for cam in cams {
        let idx: Vec<usize> = (0..tracklets.len()).filter(|&i| tracklets[i].cam == cam).collect();
        let subset: Vec<Tracklet> = idx.iter().map(|&i| tracklets[i].clone()).collect();
        let graph = build_graph(&subset, ctx, temporal_only, params).map_err(|e| e.to_string())?;
        let (y, report) = solve(&graph.problem()).map_err(|e| e.to_string())?;
        for (&i, &l) in idx.iter().zip(&y.partition) {
            result.labels[i] = offset + l;
        }
        offset += y.components();
        stage_one.objective += report.objective;
        stage_one.gaec_objective += report.gaec_objective;
        stage_one.improved_by_kl += report.improved_by_kl;
        stage_one.components += report.components;
        stage_one.feasible = report.feasible;
    }
    result.labels = canonical_labels(&result.labels);
    result.components.push(stage_one.components);
    result.reports.push(stage_one);

    let (nodes, owner) = merge_clusters(ctx, tracklets, &result.labels);
    let mut graph = build_graph(&nodes, ctx, weights, params).map_err(|e| e.to_string())?;
    graph
        .base_edges
        .retain(|e| matches!(e.class, EdgeClass::Spatial | EdgeClass::Constraint));
    graph.lifted_edges.clear();
    let (y, report) = solve(&graph.problem()).map_err(|e| e.to_string())?;
    result.labels = canonical_labels(&owner.iter().map(|&k| y.partition[k]).collect::<Vec<_>>());
    result.components.push(report.components);
    result.reports.push(report);
    result.rounds = 2;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
        }
        assert!("interpolate".parse::<Stage>().is_err());
        assert!(Stage::Precluster < Stage::Eval);
    }
}
