//! Spatial-temporal tracking graph over tracklets.
//!
//! Same-camera pairs that follow each other in time get temporal edges (base
//! up to `t_base` seconds, lifted up to `t_max`), cross-camera pairs sharing a
//! frame get spatial edges, and same-camera pairs overlapping in time get a
//! constraint edge with a cost negative enough that it is always cut.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::affinity::{
    spatial_edge_cost, temporal_edge_cost, AffinityContext, AffinityError, CombinerKind, CombinerWeights,
};
use crate::io::SceneBundle;
use crate::multicut::{Problem, WeightedEdge};
use crate::tracklets::Tracklet;

pub const DEFAULT_T_BASE: f64 = 5.0;
pub const DEFAULT_T_MAX: f64 = 10.0;
pub const DEFAULT_FPS: f64 = 10.0;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("missing {0} weights")]
    MissingWeights(CombinerKind),
    #[error(transparent)]
    Affinity(#[from] AffinityError),
    #[error("invalid graph parameters: {0}")]
    InvalidParams(String),
    #[error("graph dump line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeClass {
    TemporalBase,
    TemporalLifted,
    Spatial,
    Constraint,
}

impl EdgeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeClass::TemporalBase => "temporal_base",
            EdgeClass::TemporalLifted => "temporal_lifted",
            EdgeClass::Spatial => "spatial",
            EdgeClass::Constraint => "constraint",
        }
    }

    pub fn is_lifted(self) -> bool {
        self == EdgeClass::TemporalLifted
    }
}

impl FromStr for EdgeClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "temporal_base" => Ok(Self::TemporalBase),
            "temporal_lifted" => Ok(Self::TemporalLifted),
            "spatial" => Ok(Self::Spatial),
            "constraint" => Ok(Self::Constraint),
            other => Err(format!("unknown edge class `{other}`")),
        }
    }
}

/// Which time difference decides temporal edge membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TemporalWindow {
    /// `max time(later) - min time(earlier)`.
    #[default]
    Span,
    /// `min time(later) - max time(earlier)`.
    Gap,
}

impl FromStr for TemporalWindow {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "span" => Ok(Self::Span),
            "gap" => Ok(Self::Gap),
            other => Err(format!("unknown temporal window `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphParams {
    /// Seconds.
    pub t_base: f64,
    /// Seconds.
    pub t_max: f64,
    pub fps: f64,
    pub temporal_window: TemporalWindow,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            t_base: DEFAULT_T_BASE,
            t_max: DEFAULT_T_MAX,
            fps: DEFAULT_FPS,
            temporal_window: TemporalWindow::Span,
        }
    }
}

impl GraphParams {
    fn validate(&self) -> Result<(), GraphError> {
        if !(self.fps > 0.0 && self.t_base >= 0.0 && self.t_max >= self.t_base) {
            return Err(GraphError::InvalidParams(format!(
                "need fps > 0 and 0 <= t_base <= t_max, got fps={} t_base={} t_max={}",
                self.fps, self.t_base, self.t_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphNode {
    /// Tracklet id.
    pub id: u64,
    pub cam: usize,
    pub t_min: u32,
    pub t_max: u32,
}

/// Edge between node indices `u < v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphEdge {
    pub u: usize,
    pub v: usize,
    pub cost: f64,
    pub class: EdgeClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingGraph {
    pub nodes: Vec<GraphNode>,
    /// Temporal-base, spatial and constraint edges.
    pub base_edges: Vec<GraphEdge>,
    /// Temporal-lifted edges.
    pub lifted_edges: Vec<GraphEdge>,
    pub params: GraphParams,
    /// Cost of every constraint edge.
    pub big_m: f64,
}

/// Structural class of a node pair, or `None` when no edge is created.
pub fn classify_pair(a: &GraphNode, b: &GraphNode, shares_frame: bool, params: &GraphParams) -> Option<EdgeClass> {
    let overlap = a.t_min <= b.t_max && b.t_min <= a.t_max;
    if a.cam != b.cam {
        return (overlap && shares_frame).then_some(EdgeClass::Spatial);
    }
    if overlap {
        return Some(EdgeClass::Constraint);
    }
    let (early, late) = if a.t_max < b.t_min { (a, b) } else { (b, a) };
    let measure = match params.temporal_window {
        TemporalWindow::Span => f64::from(late.t_max - early.t_min),
        TemporalWindow::Gap => f64::from(late.t_min - early.t_max),
    };
    if measure <= 0.0 {
        None
    } else if measure <= params.t_base * params.fps {
        Some(EdgeClass::TemporalBase)
    } else if measure <= params.t_max * params.fps {
        Some(EdgeClass::TemporalLifted)
    } else {
        None
    }
}

fn shares_frame(a: &[u32], b: &[u32]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

/// Combiner weights for the two edge families.
#[derive(Debug, Clone, Copy)]
pub struct EdgeWeights<'a> {
    pub temporal: Option<&'a CombinerWeights>,
    pub spatial: Option<&'a CombinerWeights>,
}

/// Builds the tracking graph; node `i` is `tracklets[i]`.
pub fn build_graph(
    tracklets: &[Tracklet],
    ctx: &AffinityContext<'_>,
    weights: EdgeWeights<'_>,
    params: &GraphParams,
) -> Result<TrackingGraph, GraphError> {
    params.validate()?;
    let scene: &SceneBundle = ctx.scene;
    let frames: Vec<Vec<u32>> = tracklets.iter().map(|t| t.frames(scene)).collect();
    let nodes: Vec<GraphNode> = tracklets
        .iter()
        .zip(&frames)
        .map(|(t, f)| GraphNode {
            id: t.id,
            cam: t.cam,
            t_min: f[0],
            t_max: f[f.len() - 1],
        })
        .collect();

    let mut candidates: Vec<(usize, usize, EdgeClass)> = Vec::new();
    for u in 0..nodes.len() {
        for v in u + 1..nodes.len() {
            let shared = nodes[u].cam != nodes[v].cam && shares_frame(&frames[u], &frames[v]);
            if let Some(class) = classify_pair(&nodes[u], &nodes[v], shared, params) {
                candidates.push((u, v, class));
            }
        }
    }
    let needs = |class: EdgeClass| candidates.iter().any(|c| c.2 == class);
    let temporal_w = match weights.temporal {
        Some(w) => Some(w),
        None if needs(EdgeClass::TemporalBase) || needs(EdgeClass::TemporalLifted) => {
            return Err(GraphError::MissingWeights(CombinerKind::Temporal))
        }
        None => None,
    };
    let spatial_w = match weights.spatial {
        Some(w) => Some(w),
        None if needs(EdgeClass::Spatial) => return Err(GraphError::MissingWeights(CombinerKind::Spatial)),
        None => None,
    };

    let costs: Vec<f64> = candidates
        .par_iter()
        .map(|&(u, v, class)| -> Result<f64, AffinityError> {
            match class {
                EdgeClass::Constraint => Ok(0.0),
                EdgeClass::Spatial => {
                    let f = ctx.spatial_features(&tracklets[u], &tracklets[v])?;
                    spatial_edge_cost(&f, spatial_w.expect("checked above"))
                }
                EdgeClass::TemporalBase | EdgeClass::TemporalLifted => {
                    let (a, b) = if nodes[u].t_max < nodes[v].t_min { (u, v) } else { (v, u) };
                    let f = ctx.temporal_features(&tracklets[a], &tracklets[b])?;
                    temporal_edge_cost(&f, temporal_w.expect("checked above"))
                }
            }
        })
        .collect::<Result<_, _>>()?;

    let total: f64 = candidates
        .iter()
        .zip(&costs)
        .filter(|(c, _)| c.2 != EdgeClass::Constraint)
        .map(|(_, cost)| cost.abs())
        .sum();
    let big_m = -(total + 1.0);

    let mut graph = TrackingGraph {
        nodes,
        base_edges: Vec::new(),
        lifted_edges: Vec::new(),
        params: *params,
        big_m,
    };
    for ((u, v, class), cost) in candidates.into_iter().zip(costs) {
        let cost = if class == EdgeClass::Constraint { big_m } else { cost };
        let e = GraphEdge { u, v, cost, class };
        if class.is_lifted() {
            graph.lifted_edges.push(e);
        } else {
            graph.base_edges.push(e);
        }
    }
    Ok(graph)
}

impl TrackingGraph {
    pub fn edges(&self) -> impl Iterator<Item = &GraphEdge> {
        self.base_edges.iter().chain(&self.lifted_edges)
    }

    pub fn count(&self, class: EdgeClass) -> usize {
        self.edges().filter(|e| e.class == class).count()
    }

    /// The lifted multicut instance of this graph.
    pub fn problem(&self) -> Problem {
        let convert = |e: &GraphEdge| WeightedEdge {
            u: e.u,
            v: e.v,
            cost: e.cost,
            constraint: e.class == EdgeClass::Constraint,
        };
        Problem {
            n: self.nodes.len(),
            base: self.base_edges.iter().map(convert).collect(),
            lifted: self.lifted_edges.iter().map(convert).collect(),
        }
    }

    /// Text dump: a parameter comment, `node id cam t_min t_max` lines, then
    /// `class u v cost` lines with `u`, `v` given as node ids.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = &self.params;
        let window = match p.temporal_window {
            TemporalWindow::Span => "span",
            TemporalWindow::Gap => "gap",
        };
        let _ = writeln!(
            s,
            "# fps={} t_base={} t_max={} temporal_window={} big_m={}",
            p.fps, p.t_base, p.t_max, window, self.big_m
        );
        for n in &self.nodes {
            let _ = writeln!(s, "node {} {} {} {}", n.id, n.cam, n.t_min, n.t_max);
        }
        for e in self.edges() {
            let _ = writeln!(
                s,
                "{} {} {} {}",
                e.class.as_str(),
                self.nodes[e.u].id,
                self.nodes[e.v].id,
                e.cost
            );
        }
        s
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(self.to_text().as_bytes())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self, GraphError> {
        let mut params = GraphParams::default();
        let mut big_m = None;
        let mut nodes = Vec::new();
        let mut index: HashMap<u64, usize> = HashMap::new();
        let mut base_edges = Vec::new();
        let mut lifted_edges = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let err = |message: String| GraphError::Parse { line: lineno, message };
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(comment) = trimmed.strip_prefix('#') {
                for kv in comment.split_whitespace() {
                    let Some((k, v)) = kv.split_once('=') else { continue };
                    let num = || v.parse::<f64>().map_err(|e| err(format!("{k}: {e}")));
                    match k {
                        "fps" => params.fps = num()?,
                        "t_base" => params.t_base = num()?,
                        "t_max" => params.t_max = num()?,
                        "big_m" => big_m = Some(num()?),
                        "temporal_window" => params.temporal_window = v.parse().map_err(err)?,
                        _ => {}
                    }
                }
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields[0] == "node" {
                if fields.len() != 5 {
                    return Err(err("node line needs `node id cam t_min t_max`".into()));
                }
                let parse_u64 = |s: &str| s.parse::<u64>().map_err(|e| err(format!("`{s}`: {e}")));
                let id = parse_u64(fields[1])?;
                let node = GraphNode {
                    id,
                    cam: parse_u64(fields[2])? as usize,
                    t_min: parse_u64(fields[3])? as u32,
                    t_max: parse_u64(fields[4])? as u32,
                };
                if index.insert(id, nodes.len()).is_some() {
                    return Err(err(format!("duplicate node {id}")));
                }
                nodes.push(node);
                continue;
            }
            if fields.len() != 4 {
                return Err(err("edge line needs `class u v cost`".into()));
            }
            let class: EdgeClass = fields[0].parse().map_err(err)?;
            let lookup = |s: &str| -> Result<usize, GraphError> {
                let id: u64 = s.parse().map_err(|e| err(format!("`{s}`: {e}")))?;
                index.get(&id).copied().ok_or_else(|| err(format!("unknown node {id}")))
            };
            let (a, b) = (lookup(fields[1])?, lookup(fields[2])?);
            if a == b {
                return Err(err("self edge".into()));
            }
            let cost: f64 = fields[3].parse().map_err(|e| err(format!("cost: {e}")))?;
            if !cost.is_finite() {
                return Err(err("non-finite cost".into()));
            }
            let e = GraphEdge {
                u: a.min(b),
                v: a.max(b),
                cost,
                class,
            };
            if class.is_lifted() {
                lifted_edges.push(e);
            } else {
                base_edges.push(e);
            }
        }
        let big_m = big_m.unwrap_or_else(|| {
            base_edges
                .iter()
                .find(|e: &&GraphEdge| e.class == EdgeClass::Constraint)
                .map_or(-1.0, |e| e.cost)
        });
        Ok(Self {
            nodes,
            base_edges,
            lifted_edges,
            params,
            big_m,
        })
    }
}
