//! Pairwise affinity features between detections and tracklets, and the
//! logistic combiners that turn them into signed edge costs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{solve_lap, CostMatrix, Direction};
use crate::geometry::GroundPoint;
use crate::io::{similarity, SceneBundle};
use crate::precluster::SceneClusters;
use crate::tracklets::Tracklet;

pub const DEFAULT_VELOCITY_WINDOW: usize = 5;
pub const DEFAULT_AGREEMENT_PRIOR: f64 = 0.8;
pub const DEFAULT_L2: f64 = 1e-3;
pub const FIT_MAX_ITERATIONS: usize = 100;
pub const MIN_SAMPLES_PER_CLASS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AffinityError {
    #[error("empty cluster")]
    EmptyCluster,
    #[error("tracklet {first} does not end before tracklet {second} starts")]
    NotSequential { first: u64, second: u64 },
    #[error("tracklets {first} and {second} share no timepoint")]
    NoOverlap { first: u64, second: u64 },
    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),
    #[error("training data holds a single class")]
    DegenerateData,
    #[error("{class} class has {got} samples, need at least {MIN_SAMPLES_PER_CLASS}")]
    InsufficientSamples { class: &'static str, got: usize },
}

/// Which extremum the `best` statistic takes over all cluster pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BestMode {
    /// Largest similarity over all pairs.
    #[default]
    Max,
    /// Smallest similarity over all pairs.
    MinLiteral,
}

/// Similarity statistics between two detection clusters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MatchStats {
    pub best: f64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Sum of squared deviations from `mean` over the matches.
    pub var: f64,
}

impl MatchStats {
    pub fn to_array(&self) -> [f64; 5] {
        [self.best, self.min, self.max, self.mean, self.var]
    }

    /// Standard deviation of the matched similarities.
    pub fn std(&self) -> f64 {
        self.var.sqrt()
    }
}

/// Match statistics from two lists of unit embeddings.
pub fn match_stats(a: &[&[f32]], b: &[&[f32]], mode: BestMode) -> Result<MatchStats, AffinityError> {
    if a.is_empty() || b.is_empty() {
        return Err(AffinityError::EmptyCluster);
    }
    let d: Vec<f64> = a
        .iter()
        .flat_map(|x| b.iter().map(move |y| similarity(x, y)))
        .collect();
    let best = match mode {
        BestMode::Max => d.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        BestMode::MinLiteral => d.iter().copied().fold(f64::INFINITY, f64::min),
    };
    let matched: Vec<f64> = if a.len() == 1 || b.len() == 1 {
        // a single row or column: the assignment picks the largest entry
        let mut top = 0;
        for (i, v) in d.iter().enumerate() {
            if *v > d[top] {
                top = i;
            }
        }
        vec![d[top]]
    } else {
        let costs = CostMatrix::new(a.len(), b.len(), d.clone(), Direction::Maximize)
            .map_err(|_| AffinityError::EmptyCluster)?;
        let m = solve_lap(&costs).map_err(|_| AffinityError::EmptyCluster)?;
        m.pairs.iter().map(|&(r, c)| d[r * b.len() + c]).collect()
    };
    let n = matched.len() as f64;
    let mean = matched.iter().sum::<f64>() / n;
    Ok(MatchStats {
        best,
        min: matched.iter().copied().fold(f64::INFINITY, f64::min),
        max: matched.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean,
        var: matched.iter().map(|v| (v - mean) * (v - mean)).sum(),
    })
}

/// Match statistics between two detection sets of a scene.
pub fn cluster_match_stats(
    scene: &SceneBundle,
    ca: &BTreeSet<u64>,
    cb: &BTreeSet<u64>,
    mode: BestMode,
) -> Result<MatchStats, AffinityError> {
    let a: Vec<&[f32]> = ca.iter().map(|&d| scene.det(d).embedding.as_slice()).collect();
    let b: Vec<&[f32]> = cb.iter().map(|&d| scene.det(d).embedding.as_slice()).collect();
    match_stats(&a, &b, mode)
}

/// Mean per-frame ground displacement over the last `k` steps of a track.
fn tail_velocity(track: &[(u32, GroundPoint)], m: usize) -> (f64, f64) {
    let k = m.min(track.len().saturating_sub(1));
    if k == 0 {
        return (0.0, 0.0);
    }
    let (t1, p1) = track[track.len() - 1];
    let (t0, p0) = track[track.len() - 1 - k];
    let dt = f64::from(t1 - t0);
    ((p1.x - p0.x) / dt, (p1.y - p0.y) / dt)
}

/// Mean per-frame ground displacement over the first `k` steps of a track.
fn head_velocity(track: &[(u32, GroundPoint)], m: usize) -> (f64, f64) {
    let k = m.min(track.len().saturating_sub(1));
    if k == 0 {
        return (0.0, 0.0);
    }
    let (t0, p0) = track[0];
    let (t1, p1) = track[k];
    let dt = f64::from(t1 - t0);
    ((p1.x - p0.x) / dt, (p1.y - p0.y) / dt)
}

fn extrapolate(p: GroundPoint, v: (f64, f64), dt: f64) -> GroundPoint {
    GroundPoint::new(p.x + v.0 * dt, p.y + v.1 * dt)
}

/// `(frame, foot point)` sequence of a tracklet.
pub fn ground_track(scene: &SceneBundle, t: &Tracklet) -> Vec<(u32, GroundPoint)> {
    t.detections
        .iter()
        .map(|&d| {
            let det = scene.det(d);
            (det.frame, det.foot)
        })
        .collect()
}

/// Forward and backward motion residuals of `tau` followed by `next` in one camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalMotion {
    pub fw: f64,
    pub bw: f64,
    /// Frames between the last detection of the first and the first of the second.
    pub gap: f64,
}

/// Motion residuals for two time-ordered ground tracks.
pub fn temporal_motion(
    tau: &[(u32, GroundPoint)],
    next: &[(u32, GroundPoint)],
    m: usize,
) -> Option<TemporalMotion> {
    let (&(t_end, p_end), &(t_start, p_start)) = (tau.last()?, next.first()?);
    if t_end >= t_start {
        return None;
    }
    let gap = f64::from(t_start - t_end);
    let fw = extrapolate(p_end, tail_velocity(tau, m), gap).distance(p_start);
    let bw = extrapolate(p_start, head_velocity(next, m), -gap).distance(p_end);
    Some(TemporalMotion { fw, bw, gap })
}

/// Temporal motion affinity between two same-camera tracklets.
pub fn temporal_motion_affinity(
    scene: &SceneBundle,
    tau: &Tracklet,
    next: &Tracklet,
    m: usize,
) -> Result<TemporalMotion, AffinityError> {
    temporal_motion(&ground_track(scene, tau), &ground_track(scene, next), m).ok_or(
        AffinityError::NotSequential {
            first: tau.id,
            second: next.id,
        },
    )
}

fn ranges_overlap(a: &[(u32, GroundPoint)], b: &[(u32, GroundPoint)]) -> bool {
    match (a.first(), a.last(), b.first(), b.last()) {
        (Some(a0), Some(a1), Some(b0), Some(b1)) => a0.0 <= b1.0 && b0.0 <= a1.0,
        _ => false,
    }
}

/// Spatial forward/backward residuals for two time-overlapping ground tracks.
///
/// Forward: the track ending first is extrapolated from its last point to the
/// other track's first point after that time (or, if there is none, its last
/// point at or before it). Backward mirrors this with the track starting last,
/// extrapolated backwards with its own head velocity.
pub fn spatial_motion(a: &[(u32, GroundPoint)], b: &[(u32, GroundPoint)], m: usize) -> Option<(f64, f64)> {
    if !ranges_overlap(a, b) {
        return None;
    }
    let (early, other) = if a.last()?.0 <= b.last()?.0 { (a, b) } else { (b, a) };
    let (t_end, p_end) = *early.last()?;
    let target = other
        .iter()
        .find(|(t, _)| *t > t_end)
        .or_else(|| other.iter().rev().find(|(t, _)| *t <= t_end))?;
    let fw = extrapolate(p_end, tail_velocity(early, m), f64::from(target.0) - f64::from(t_end))
        .distance(target.1);

    let (late, other) = if a.first()?.0 > b.first()?.0 { (a, b) } else { (b, a) };
    let (t_start, p_start) = late[0];
    let target = other
        .iter()
        .rev()
        .find(|(t, _)| *t < t_start)
        .or_else(|| other.iter().find(|(t, _)| *t >= t_start))?;
    let bw = extrapolate(p_start, head_velocity(late, m), f64::from(target.0) - f64::from(t_start))
        .distance(target.1);
    Some((fw, bw))
}

pub fn spatial_motion_affinity(
    scene: &SceneBundle,
    tau: &Tracklet,
    other: &Tracklet,
    m: usize,
) -> Result<(f64, f64), AffinityError> {
    spatial_motion(&ground_track(scene, tau), &ground_track(scene, other), m).ok_or(
        AffinityError::NoOverlap {
            first: tau.id,
            second: other.id,
        },
    )
}

/// Detection pairs of two tracklets at shared frames.
pub fn shared_timepoints(scene: &SceneBundle, a: &Tracklet, b: &Tracklet) -> Vec<(u64, u64)> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.detections.len() && j < b.detections.len() {
        let (fa, fb) = (scene.det(a.detections[i]).frame, scene.det(b.detections[j]).frame);
        match fa.cmp(&fb) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push((a.detections[i], b.detections[j]));
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Mean ground distance between the tracklets over their shared frames.
pub fn avg_3d_distance(scene: &SceneBundle, a: &Tracklet, b: &Tracklet) -> Result<f64, AffinityError> {
    let shared = shared_timepoints(scene, a, b);
    if shared.is_empty() {
        return Err(AffinityError::NoOverlap {
            first: a.id,
            second: b.id,
        });
    }
    let total: f64 = shared
        .iter()
        .map(|&(x, y)| scene.det(x).foot.distance(scene.det(y).foot))
        .sum();
    Ok(total / shared.len() as f64)
}

/// Mean over shared frames of `p` when both detections have the same
/// pre-cluster and `1 - p` otherwise.
pub fn precluster_agreement(
    scene: &SceneBundle,
    clusters: &SceneClusters,
    a: &Tracklet,
    b: &Tracklet,
    p: f64,
) -> Result<f64, AffinityError> {
    let shared = shared_timepoints(scene, a, b);
    if shared.is_empty() {
        return Err(AffinityError::NoOverlap {
            first: a.id,
            second: b.id,
        });
    }
    let total: f64 = shared
        .iter()
        .map(|&(x, y)| {
            if clusters.members(x) == clusters.members(y) {
                p
            } else {
                1.0 - p
            }
        })
        .sum();
    Ok(total / shared.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinityParams {
    /// Velocity window in frames.
    pub velocity_window: usize,
    /// Prior of the pre-clustering agreement feature.
    pub agreement_prior: f64,
    pub best_mode: BestMode,
}

impl Default for AffinityParams {
    fn default() -> Self {
        Self {
            velocity_window: DEFAULT_VELOCITY_WINDOW,
            agreement_prior: DEFAULT_AGREEMENT_PRIOR,
            best_mode: BestMode::Max,
        }
    }
}

/// Feature extraction over one pre-clustered scene.
#[derive(Debug, Clone, Copy)]
pub struct AffinityContext<'a> {
    pub scene: &'a SceneBundle,
    pub clusters: &'a SceneClusters,
    pub params: AffinityParams,
}

impl<'a> AffinityContext<'a> {
    pub fn new(scene: &'a SceneBundle, clusters: &'a SceneClusters, params: AffinityParams) -> Self {
        Self {
            scene,
            clusters,
            params,
        }
    }

    fn visible_embeddings(&self, det: u64) -> Vec<&'a [f32]> {
        self.clusters
            .visible_or_self(det)
            .into_iter()
            .map(|d| self.scene.det(d).embedding.as_slice())
            .collect()
    }

    /// Match statistics between the visible clusters of two detections.
    pub fn split_features(&self, b: u64, b_next: u64) -> MatchStats {
        match_stats(
            &self.visible_embeddings(b),
            &self.visible_embeddings(b_next),
            self.params.best_mode,
        )
        .expect("visible clusters are never empty")
    }

    /// Match statistics averaged over all detection pairs of two tracklets.
    pub fn appearance_affinity(&self, a: &Tracklet, b: &Tracklet) -> MatchStats {
        let ea: Vec<Vec<&[f32]>> = a.detections.iter().map(|&d| self.visible_embeddings(d)).collect();
        let eb: Vec<Vec<&[f32]>> = b.detections.iter().map(|&d| self.visible_embeddings(d)).collect();
        let mut sum = [0.0; 5];
        for x in &ea {
            for y in &eb {
                let s = match_stats(x, y, self.params.best_mode).expect("non-empty");
                for (acc, v) in sum.iter_mut().zip(s.to_array()) {
                    *acc += v;
                }
            }
        }
        let n = (ea.len() * eb.len()) as f64;
        MatchStats {
            best: sum[0] / n,
            min: sum[1] / n,
            max: sum[2] / n,
            mean: sum[3] / n,
            var: sum[4] / n,
        }
    }

    /// Mean cosine similarity between the tracklets' own visible detections.
    /// Falls back to all detections of a tracklet when none is visible.
    pub fn own_camera_appearance(&self, a: &Tracklet, b: &Tracklet) -> f64 {
        let mean = |t: &Tracklet| -> Vec<f64> {
            let mut ids: Vec<u64> = t
                .detections
                .iter()
                .copied()
                .filter(|&d| self.clusters.is_visible(d))
                .collect();
            if ids.is_empty() {
                ids = t.detections.clone();
            }
            let dim = self.scene.embedding_dim();
            let mut acc = vec![0.0; dim];
            for d in &ids {
                for (s, v) in acc.iter_mut().zip(&self.scene.det(*d).embedding) {
                    *s += f64::from(*v);
                }
            }
            acc.iter().map(|s| s / ids.len() as f64).collect()
        };
        mean(a).iter().zip(mean(b)).map(|(x, y)| x * y).sum()
    }

    pub fn temporal_features(&self, a: &Tracklet, b: &Tracklet) -> Result<TemporalFeatures, AffinityError> {
        let motion = temporal_motion_affinity(self.scene, a, b, self.params.velocity_window)?;
        Ok(TemporalFeatures {
            app: self.appearance_affinity(a, b),
            motion,
        })
    }

    pub fn spatial_features(&self, a: &Tracklet, b: &Tracklet) -> Result<SpatialFeatures, AffinityError> {
        let (fw, bw) = spatial_motion_affinity(self.scene, a, b, self.params.velocity_window)?;
        Ok(SpatialFeatures {
            fw,
            bw,
            app: self.own_camera_appearance(a, b),
            avg3d: avg_3d_distance(self.scene, a, b)?,
            pc: precluster_agreement(self.scene, self.clusters, a, b, self.params.agreement_prior)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalFeatures {
    pub app: MatchStats,
    pub motion: TemporalMotion,
}

impl TemporalFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.app.to_array().to_vec();
        v.extend([self.motion.fw, self.motion.bw, self.motion.gap]);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialFeatures {
    pub fw: f64,
    pub bw: f64,
    pub app: f64,
    pub avg3d: f64,
    pub pc: f64,
}

impl SpatialFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.fw, self.bw, self.app, self.avg3d, self.pc]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombinerKind {
    Temporal,
    Spatial,
    Split,
}

impl CombinerKind {
    pub const TEMPORAL_FEATURES: [&'static str; 8] =
        ["app_best", "app_min", "app_max", "app_mean", "app_var", "fw", "bw", "gap"];
    pub const SPATIAL_FEATURES: [&'static str; 5] = ["fw", "bw", "app", "avg3d", "pc"];
    pub const SPLIT_FEATURES: [&'static str; 5] = ["best", "min", "max", "mean", "var"];

    /// Input signature, in the order feature vectors are laid out.
    pub fn feature_names(self) -> &'static [&'static str] {
        match self {
            CombinerKind::Temporal => &Self::TEMPORAL_FEATURES,
            CombinerKind::Spatial => &Self::SPATIAL_FEATURES,
            CombinerKind::Split => &Self::SPLIT_FEATURES,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CombinerKind::Temporal => "temporal",
            CombinerKind::Spatial => "spatial",
            CombinerKind::Split => "split",
        }
    }
}

impl fmt::Display for CombinerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CombinerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "temporal" => Ok(Self::Temporal),
            "spatial" => Ok(Self::Spatial),
            "split" => Ok(Self::Split),
            other => Err(format!("unknown combiner kind `{other}`")),
        }
    }
}

/// Logistic combiner: `bias + w . x` is the log-odds of "same identity".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinerWeights {
    pub kind: CombinerKind,
    pub bias: f64,
    pub weights: BTreeMap<String, f64>,
}

impl CombinerWeights {
    pub fn zeros(kind: CombinerKind) -> Self {
        Self {
            kind,
            bias: 0.0,
            weights: kind.feature_names().iter().map(|n| (n.to_string(), 0.0)).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), AffinityError> {
        let names = self.kind.feature_names();
        if self.weights.len() != names.len() || names.iter().any(|n| !self.weights.contains_key(*n)) {
            return Err(AffinityError::FeatureMismatch(format!(
                "{} combiner needs features {names:?}, got {:?}",
                self.kind,
                self.weights.keys().collect::<Vec<_>>()
            )));
        }
        if !self.bias.is_finite() || self.weights.values().any(|w| !w.is_finite()) {
            return Err(AffinityError::FeatureMismatch("non-finite weight".into()));
        }
        Ok(())
    }

    /// Weights in signature order.
    pub fn ordered(&self) -> Vec<f64> {
        self.kind
            .feature_names()
            .iter()
            .map(|n| self.weights.get(*n).copied().unwrap_or(0.0))
            .collect()
    }

    /// Log-odds for a feature vector laid out in signature order.
    pub fn score(&self, features: &[f64]) -> Result<f64, AffinityError> {
        let names = self.kind.feature_names();
        if features.len() != names.len() {
            return Err(AffinityError::FeatureMismatch(format!(
                "{} combiner takes {} features, got {}",
                self.kind,
                names.len(),
                features.len()
            )));
        }
        Ok(self.bias + self.ordered().iter().zip(features).map(|(w, x)| w * x).sum::<f64>())
    }

    fn expect_kind(&self, kind: CombinerKind) -> Result<(), AffinityError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(AffinityError::FeatureMismatch(format!(
                "expected {kind} weights, got {}",
                self.kind
            )))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weights serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, String> {
        let w: Self = serde_json::from_str(s).map_err(|e| e.to_string())?;
        w.validate().map_err(|e| e.to_string())?;
        Ok(w)
    }
}

pub fn temporal_edge_cost(f: &TemporalFeatures, w: &CombinerWeights) -> Result<f64, AffinityError> {
    w.expect_kind(CombinerKind::Temporal)?;
    w.score(&f.to_vec())
}

pub fn spatial_edge_cost(f: &SpatialFeatures, w: &CombinerWeights) -> Result<f64, AffinityError> {
    w.expect_kind(CombinerKind::Spatial)?;
    w.score(&f.to_vec())
}

pub fn split_score(f: &MatchStats, w: &CombinerWeights) -> Result<f64, AffinityError> {
    w.expect_kind(CombinerKind::Split)?;
    w.score(&f.to_array())
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Fits a logistic combiner on all features of `kind`.
pub fn fit_combiner(
    pos: &[Vec<f64>],
    neg: &[Vec<f64>],
    kind: CombinerKind,
) -> Result<CombinerWeights, AffinityError> {
    let active = vec![true; kind.feature_names().len()];
    fit_combiner_masked(pos, neg, kind, &active)
}

/// Fits a logistic combiner using only the features flagged in `active`;
/// the others keep weight zero.
///
/// Minimizes the class-balanced mean log loss plus `DEFAULT_L2 / 2 * |w|^2`
/// by damped Newton steps on standardized features, starting from zero.
pub fn fit_combiner_masked(
    pos: &[Vec<f64>],
    neg: &[Vec<f64>],
    kind: CombinerKind,
    active: &[bool],
) -> Result<CombinerWeights, AffinityError> {
    let names = kind.feature_names();
    if active.len() != names.len() {
        return Err(AffinityError::FeatureMismatch(format!(
            "mask has {} entries for {} features",
            active.len(),
            names.len()
        )));
    }
    if let Some(row) = pos.iter().chain(neg).find(|r| r.len() != names.len()) {
        return Err(AffinityError::FeatureMismatch(format!(
            "sample has {} features, {kind} combiner takes {}",
            row.len(),
            names.len()
        )));
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(AffinityError::DegenerateData);
    }
    for (class, n) in [("positive", pos.len()), ("negative", neg.len())] {
        if n < MIN_SAMPLES_PER_CLASS {
            return Err(AffinityError::InsufficientSamples { class, got: n });
        }
    }

    let cols: Vec<usize> = (0..names.len()).filter(|&j| active[j]).collect();
    let p = cols.len() + 1;
    let rows: Vec<(&Vec<f64>, f64, f64)> = pos
        .iter()
        .map(|r| (r, 1.0, 0.5 / pos.len() as f64))
        .chain(neg.iter().map(|r| (r, 0.0, 0.5 / neg.len() as f64)))
        .collect();

    let mut mu = vec![0.0; cols.len()];
    let mut sd = vec![0.0; cols.len()];
    for (k, &j) in cols.iter().enumerate() {
        mu[k] = rows.iter().map(|(r, _, c)| c * r[j]).sum();
        let v: f64 = rows.iter().map(|(r, _, c)| c * (r[j] - mu[k]).powi(2)).sum();
        sd[k] = if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 };
    }
    let design: Vec<(DVector<f64>, f64, f64)> = rows
        .iter()
        .map(|(r, y, c)| {
            let mut x = DVector::zeros(p);
            x[0] = 1.0;
            for (k, &j) in cols.iter().enumerate() {
                x[k + 1] = (r[j] - mu[k]) / sd[k];
            }
            (x, *y, *c)
        })
        .collect();

    let loss = |theta: &DVector<f64>| -> f64 {
        let data: f64 = design
            .iter()
            .map(|(x, y, c)| {
                let z = x.dot(theta);
                // log(1 + e^z) - y z, computed stably
                c * (z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z)
            })
            .sum();
        data + 0.5 * DEFAULT_L2 * theta.rows(1, p - 1).norm_squared()
    };

    let mut theta = DVector::zeros(p);
    let mut current = loss(&theta);
    for _ in 0..FIT_MAX_ITERATIONS {
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        for (x, y, c) in &design {
            let s = sigmoid(x.dot(&theta));
            grad.axpy(c * (s - y), x, 1.0);
            hess.ger(c * s * (1.0 - s), x, x, 1.0);
        }
        for k in 1..p {
            grad[k] += DEFAULT_L2 * theta[k];
            hess[(k, k)] += DEFAULT_L2;
        }
        hess[(0, 0)] += 1e-12;
        let Some(chol) = hess.cholesky() else {
            break;
        };
        let step = chol.solve(&grad);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = &theta - &step * scale;
            let value = loss(&candidate);
            if value <= current {
                theta = candidate;
                current = value;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted || step.amax() * scale < 1e-12 {
            break;
        }
    }

    let mut weights: BTreeMap<String, f64> = names.iter().map(|n| (n.to_string(), 0.0)).collect();
    let mut bias = theta[0];
    for (k, &j) in cols.iter().enumerate() {
        let w = theta[k + 1] / sd[k];
        weights.insert(names[j].to_string(), w);
        bias -= w * mu[k];
    }
    Ok(CombinerWeights { kind, bias, weights })
}

/// Fraction of samples on the correct side of the zero log-odds boundary.
pub fn accuracy(w: &CombinerWeights, pos: &[Vec<f64>], neg: &[Vec<f64>]) -> f64 {
    let total = pos.len() + neg.len();
    if total == 0 {
        return 0.0;
    }
    let right = pos
        .iter()
        .filter(|x| w.score(x).is_ok_and(|s| s > 0.0))
        .count()
        + neg
            .iter()
            .filter(|x| w.score(x).is_ok_and(|s| s <= 0.0))
            .count();
    right as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(v: &[f32]) -> Vec<f32> {
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn self_similarity_stats() {
        let e = unit(&[1.0, 2.0, 2.0]);
        let s = match_stats(&[&e], &[&e], BestMode::Max).unwrap();
        for v in [s.best, s.min, s.max, s.mean] {
            assert!((v - 1.0).abs() < 1e-6);
        }
        assert_eq!(s.var, 0.0);
    }

    #[test]
    fn orthogonal_stats_are_zero() {
        let s = match_stats(&[&[1.0, 0.0]], &[&[0.0, 1.0]], BestMode::Max).unwrap();
        assert_eq!(s, MatchStats::default());
    }

    #[test]
    fn empty_cluster_rejected() {
        assert_eq!(
            match_stats(&[], &[&[1.0]], BestMode::Max),
            Err(AffinityError::EmptyCluster)
        );
    }

    /// Embeddings realizing D = [[0.9, 0.1], [0.2, 0.8]]: rows are unit
    /// vectors a_i, columns b_j, D_ij = <a_i, b_j>. Using an orthonormal basis
    /// with a_1 = e1, a_2 = e2 gives b_j = (D_1j, D_2j, rest) padded to unit norm.
    fn two_by_two() -> (Vec<Vec<f32>>, Vec<Vec<f32>>) {
        let pad = |x: f64, y: f64| (1.0 - x * x - y * y).sqrt();
        let a = vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]];
        let b = vec![
            vec![0.9, 0.2, pad(0.9, 0.2) as f32, 0.0],
            vec![0.1, 0.8, 0.0, pad(0.1, 0.8) as f32],
        ];
        (a, b)
    }

    #[test]
    fn two_by_two_hand_example() {
        let (a, b) = two_by_two();
        let ar: Vec<&[f32]> = a.iter().map(|v| v.as_slice()).collect();
        let br: Vec<&[f32]> = b.iter().map(|v| v.as_slice()).collect();
        let s = match_stats(&ar, &br, BestMode::Max).unwrap();
        // hand LAP: diagonal 0.9 + 0.8 = 1.7 beats 0.1 + 0.2 = 0.3
        assert!((s.min - 0.8).abs() < 1e-6);
        assert!((s.max - 0.9).abs() < 1e-6);
        assert!((s.mean - 0.85).abs() < 1e-6);
        assert!((s.var - 0.005).abs() < 1e-6);
        assert!((s.best - 0.9).abs() < 1e-6);
        let literal = match_stats(&ar, &br, BestMode::MinLiteral).unwrap();
        assert!((literal.best - 0.1).abs() < 1e-6);
    }

    fn track(points: &[(u32, f64, f64)]) -> Vec<(u32, GroundPoint)> {
        points.iter().map(|&(t, x, y)| (t, GroundPoint::new(x, y))).collect()
    }

    #[test]
    fn temporal_motion_examples() {
        let tau = track(&[(0, 0.0, 0.0), (1, 1.0, 0.0), (2, 2.0, 0.0), (3, 3.0, 0.0), (4, 4.0, 0.0), (5, 5.0, 0.0)]);
        let exact = track(&[(8, 8.0, 0.0), (9, 9.0, 0.0)]);
        let m = temporal_motion(&tau, &exact, 5).unwrap();
        assert!(m.fw.abs() < 1e-12);
        assert!(m.bw.abs() < 1e-12);
        assert_eq!(m.gap, 3.0);

        let offset = track(&[(8, 8.0, 1.0), (9, 9.0, 1.0)]);
        assert!((temporal_motion(&tau, &offset, 5).unwrap().fw - 1.0).abs() < 1e-12);

        // single detection: zero velocity, plain distance
        let single = track(&[(0, 0.0, 0.0)]);
        let later = track(&[(4, 3.0, 4.0)]);
        let m = temporal_motion(&single, &later, 5).unwrap();
        assert!((m.fw - 5.0).abs() < 1e-12);
        assert!((m.bw - 5.0).abs() < 1e-12);

        assert!(temporal_motion(&later, &single, 5).is_none());
        assert!(temporal_motion(&single, &single, 5).is_none());
    }

    #[test]
    fn velocity_window_limits_history() {
        // early wander is outside the 2-step window
        let tau = track(&[(0, 0.0, 9.0), (1, 0.0, 0.0), (2, 1.0, 0.0), (3, 2.0, 0.0)]);
        let next = track(&[(5, 4.0, 0.0)]);
        assert!(temporal_motion(&tau, &next, 2).unwrap().fw.abs() < 1e-12);
        assert!(temporal_motion(&tau, &next, 3).unwrap().fw > 0.1);
    }

    #[test]
    fn spatial_motion_examples() {
        let a = track(&[(0, 0.0, 0.0), (1, 1.0, 0.0), (2, 2.0, 0.0), (3, 3.0, 0.0)]);
        let (fw, bw) = spatial_motion(&a, &a, 5).unwrap();
        assert_eq!((fw, bw), (0.0, 0.0));

        let still = track(&[(0, 1.0, 1.0), (1, 1.0, 1.0), (2, 1.0, 1.0)]);
        assert_eq!(spatial_motion(&still, &still, 5).unwrap(), (0.0, 0.0));

        // b runs one frame longer and starts one frame later, offset 0.5 laterally
        let b = track(&[(1, 1.0, 0.5), (2, 2.0, 0.5), (3, 3.0, 0.5), (4, 4.0, 0.5)]);
        let (fw, bw) = spatial_motion(&a, &b, 5).unwrap();
        assert!((fw - 0.5).abs() < 1e-12);
        assert!((bw - 0.5).abs() < 1e-12);
        let (fw2, bw2) = spatial_motion(&b, &a, 5).unwrap();
        assert_eq!((fw, bw), (fw2, bw2));

        let far = track(&[(10, 0.0, 0.0)]);
        assert!(spatial_motion(&a, &far, 5).is_none());
    }

    #[test]
    fn logit_sigmoid() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(4.0) - 0.982_013_790_037_908_5).abs() < 1e-15);
        assert!((logit(sigmoid(1.3)) - 1.3).abs() < 1e-12);
        assert_eq!(sigmoid(-800.0), 0.0);
    }

    #[test]
    fn zero_and_bias_only_costs() {
        let f = SpatialFeatures {
            fw: 1.0,
            bw: 2.0,
            app: 0.5,
            avg3d: 0.3,
            pc: 0.8,
        };
        let mut w = CombinerWeights::zeros(CombinerKind::Spatial);
        assert_eq!(spatial_edge_cost(&f, &w).unwrap(), 0.0);
        w.bias = 4.0;
        assert_eq!(spatial_edge_cost(&f, &w).unwrap(), 4.0);
        let t = CombinerWeights::zeros(CombinerKind::Temporal);
        assert!(matches!(spatial_edge_cost(&f, &t), Err(AffinityError::FeatureMismatch(_))));
    }

    #[test]
    fn weights_json_round_trip() {
        let mut w = CombinerWeights::zeros(CombinerKind::Split);
        w.bias = -1.5;
        w.weights.insert("mean".into(), 3.25);
        let back = CombinerWeights::from_json(&w.to_json()).unwrap();
        assert_eq!(back, w);
        let broken = w.to_json().replace("\"var\"", "\"variance\"");
        assert!(CombinerWeights::from_json(&broken).is_err());
    }

    fn one_feature(values: &[f64]) -> Vec<Vec<f64>> {
        values.iter().map(|&v| vec![v, 0.0, 0.0, 0.0, 0.0]).collect()
    }

    #[test]
    fn fit_separable_sign() {
        let pos = one_feature(&(0..20).map(|i| 1.0 + f64::from(i) * 0.1).collect::<Vec<_>>());
        let neg = one_feature(&(0..20).map(|i| -1.0 - f64::from(i) * 0.1).collect::<Vec<_>>());
        let w = fit_combiner(&pos, &neg, CombinerKind::Split).unwrap();
        assert!(w.weights["best"] > 0.0);
        assert_eq!(accuracy(&w, &pos, &neg), 1.0);

        let w = fit_combiner(&neg, &pos, CombinerKind::Split).unwrap();
        assert!(w.weights["best"] < 0.0);
    }

    #[test]
    fn fit_uninformative_gives_zero_weights() {
        let rows = one_feature(&(0..20).map(f64::from).collect::<Vec<_>>());
        let w = fit_combiner(&rows, &rows, CombinerKind::Split).unwrap();
        for v in w.weights.values() {
            assert!(v.abs() < 1e-9);
        }
        assert!(w.bias.abs() < 1e-9);
    }

    #[test]
    fn fit_rejects_bad_data() {
        let rows = one_feature(&[0.0; 20]);
        assert_eq!(
            fit_combiner(&rows, &[], CombinerKind::Split),
            Err(AffinityError::DegenerateData)
        );
        assert!(matches!(
            fit_combiner(&rows, &rows[..3], CombinerKind::Split),
            Err(AffinityError::InsufficientSamples { class: "negative", got: 3 })
        ));
        assert!(fit_combiner(&rows, &rows, CombinerKind::Spatial).is_ok());
        assert!(matches!(
            fit_combiner(&rows, &rows, CombinerKind::Temporal),
            Err(AffinityError::FeatureMismatch(_))
        ));
    }

    #[test]
    fn masked_features_keep_zero_weight() {
        let pos: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0, f64::from(i), 0.0, 0.0, 0.0]).collect();
        let neg: Vec<Vec<f64>> = (0..20).map(|i| vec![-1.0, -f64::from(i), 0.0, 0.0, 0.0]).collect();
        let w = fit_combiner_masked(&pos, &neg, CombinerKind::Split, &[false, true, true, true, true]).unwrap();
        assert_eq!(w.weights["best"], 0.0);
        assert!(w.weights["min"] > 0.0);
    }

    #[test]
    fn fit_is_deterministic() {
        let pos: Vec<Vec<f64>> = (0..30).map(|i| vec![(f64::from(i) * 0.37).sin() + 0.5, 1.0, 0.0, 0.2, 0.1]).collect();
        let neg: Vec<Vec<f64>> = (0..30).map(|i| vec![(f64::from(i) * 0.91).cos() - 0.5, 0.0, 1.0, 0.2, 0.3]).collect();
        let a = fit_combiner(&pos, &neg, CombinerKind::Split).unwrap();
        let b = fit_combiner(&pos, &neg, CombinerKind::Split).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    fn embedding_set(max: usize) -> impl Strategy<Value = Vec<Vec<f32>>> {
        prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 4), 1..=max).prop_map(|vs| {
            vs.into_iter()
                .map(|v| {
                    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(1e-3);
                    v.iter().map(|x| x / n).collect()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn stats_symmetric_and_ordered(a in embedding_set(4), b in embedding_set(4)) {
            let ar: Vec<&[f32]> = a.iter().map(|v| v.as_slice()).collect();
            let br: Vec<&[f32]> = b.iter().map(|v| v.as_slice()).collect();
            let s = match_stats(&ar, &br, BestMode::Max).unwrap();
            let t = match_stats(&br, &ar, BestMode::Max).unwrap();
            prop_assert!((s.best - t.best).abs() < 1e-9);
            prop_assert!((s.mean - t.mean).abs() < 1e-9);
            prop_assert!((s.min - t.min).abs() < 1e-9);
            prop_assert!((s.max - t.max).abs() < 1e-9);
            prop_assert!((s.var - t.var).abs() < 1e-9);
            prop_assert!(s.min <= s.mean + 1e-12 && s.mean <= s.max + 1e-12);
            prop_assert!(s.var >= 0.0);
            prop_assert!(s.best >= s.max - 1e-12);
        }

        #[test]
        fn stats_invariant_under_reindexing(a in embedding_set(4), b in embedding_set(4), rot in 0usize..4) {
            let ar: Vec<&[f32]> = a.iter().map(|v| v.as_slice()).collect();
            let mut br: Vec<&[f32]> = b.iter().map(|v| v.as_slice()).collect();
            let s = match_stats(&ar, &br, BestMode::Max).unwrap();
            let k = rot % br.len();
            br.rotate_left(k);
            let t = match_stats(&ar, &br, BestMode::Max).unwrap();
            prop_assert!((s.mean - t.mean).abs() < 1e-9);
            prop_assert!((s.best - t.best).abs() < 1e-9);
        }
    }
}
