//! Tracklets, ID-switch splitting and training-pair sampling.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::affinity::{logit, split_score, AffinityContext, AffinityError, CombinerWeights};
use crate::io::SceneBundle;

pub const DEFAULT_SPLIT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackletError {
    #[error(transparent)]
    Affinity(#[from] AffinityError),
    #[error("split threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("not enough data to sample pairs: {0}")]
    InsufficientData(String),
}

/// Time-ordered detections of one camera.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Tracklet {
    pub id: u64,
    pub cam: usize,
    pub detections: Vec<u64>,
}

impl Tracklet {
    pub fn new(id: u64, cam: usize, detections: Vec<u64>) -> Self {
        Self { id, cam, detections }
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn frames(&self, scene: &SceneBundle) -> Vec<u32> {
        self.detections.iter().map(|&d| scene.det(d).frame).collect()
    }

    /// First and last frame.
    pub fn time_range(&self, scene: &SceneBundle) -> (u32, u32) {
        let first = self.detections.first().expect("non-empty tracklet");
        let last = self.detections.last().expect("non-empty tracklet");
        (scene.det(*first).frame, scene.det(*last).frame)
    }
}

fn check_threshold(theta: f64) -> Result<f64, TrackletError> {
    if (0.0..=1.0).contains(&theta) {
        Ok(logit(theta))
    } else {
        Err(TrackletError::InvalidThreshold(theta))
    }
}

/// Indices `i` such that the tracklet is cut between detections `i` and `i + 1`.
pub fn split_positions(
    t: &Tracklet,
    ctx: &AffinityContext<'_>,
    w_split: &CombinerWeights,
    theta: f64,
) -> Result<Vec<usize>, TrackletError> {
    let cut_below = check_threshold(theta)?;
    let mut cuts = Vec::new();
    for (i, pair) in t.detections.windows(2).enumerate() {
        let score = split_score(&ctx.split_features(pair[0], pair[1]), w_split)?;
        if score < cut_below {
            cuts.push(i);
        }
    }
    Ok(cuts)
}

/// Cuts every tracklet where the split combiner's same-object probability
/// falls below `theta`. Uncut tracklets keep their id; pieces of cut ones get
/// fresh ids above the largest input id, in input order.
pub fn split_tracklets(
    tracklets: &[Tracklet],
    ctx: &AffinityContext<'_>,
    w_split: &CombinerWeights,
    theta: f64,
) -> Result<Vec<Tracklet>, TrackletError> {
    check_threshold(theta)?;
    let cuts: Vec<Vec<usize>> = tracklets
        .par_iter()
        .map(|t| split_positions(t, ctx, w_split, theta))
        .collect::<Result<_, _>>()?;
    let mut next_id = tracklets.iter().map(|t| t.id + 1).max().unwrap_or(0);
    let mut out = Vec::with_capacity(tracklets.len());
    for (t, cut) in tracklets.iter().zip(cuts) {
        if cut.is_empty() {
            out.push(t.clone());
            continue;
        }
        let mut start = 0;
        for end in cut.into_iter().map(|i| i + 1).chain([t.len()]) {
            out.push(Tracklet::new(next_id, t.cam, t.detections[start..end].to_vec()));
            next_id += 1;
            start = end;
        }
    }
    Ok(out)
}

/// Consecutive detection pairs of all tracklets with a same-identity label,
/// for fitting the split combiner. Pairs touching clutter are labeled negative.
pub fn consecutive_pairs(scene: &SceneBundle, tracklets: &[Tracklet]) -> Vec<(u64, u64, bool)> {
    tracklets
        .iter()
        .flat_map(|t| t.detections.windows(2))
        .map(|w| {
            let same = match (scene.identity(w[0]), scene.identity(w[1])) {
                (Some(a), Some(b)) => a == b,
                _ => false,
            };
            (w[0], w[1], same)
        })
        .collect()
}

/// A tracklet whose detections all carry one ground-truth identity.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTracklet {
    pub identity: u64,
    pub tracklet: Tracklet,
}

/// Whole per-camera ground-truth trajectories, one per (identity, camera).
pub fn ground_truth_tracklets(scene: &SceneBundle) -> Vec<LabeledTracklet> {
    let mut groups: BTreeMap<(u64, usize), Vec<u64>> = BTreeMap::new();
    for d in &scene.detections {
        if let Some(id) = scene.identity(d.det_id) {
            groups.entry((id, d.cam)).or_default().push(d.det_id);
        }
    }
    groups
        .into_iter()
        .enumerate()
        .map(|(i, ((identity, cam), dets))| LabeledTracklet {
            identity,
            tracklet: Tracklet::new(i as u64, cam, dets),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairKind {
    Temporal,
    Spatial,
}

impl PairKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PairKind::Temporal => "temporal",
            PairKind::Spatial => "spatial",
        }
    }
}

/// A contiguous piece of a labeled tracklet.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub identity: u64,
    /// Detections of the piece; `id` is the source tracklet's id.
    pub tracklet: Tracklet,
    pub frames: Vec<u32>,
}

impl Fragment {
    pub fn cam(&self) -> usize {
        self.tracklet.cam
    }

    pub fn t_min(&self) -> u32 {
        self.frames[0]
    }

    pub fn t_max(&self) -> u32 {
        self.frames[self.frames.len() - 1]
    }

    pub fn shares_frame(&self, other: &Fragment) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.frames.len() && j < other.frames.len() {
            match self.frames[i].cmp(&other.frames[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }

    pub fn precedes(&self, other: &Fragment) -> bool {
        self.t_max() < other.t_min()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub kind: PairKind,
    pub positive: bool,
    pub x: Fragment,
    pub y: Fragment,
    /// Sampling round that emitted the pair.
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairSamples {
    pub positives: Vec<PairSample>,
    pub negatives: Vec<PairSample>,
    /// `(positives, negatives)` emitted per round.
    pub per_round: Vec<(usize, usize)>,
}

/// Removes a random interval from a tracklet: with 1-based
/// `i ~ Uni{1..n}` and `k ~ Uni{i..n-i-1}`, returns `(b_1..b_{i-1}, b_{i+k+1}..b_n)`.
/// `None` when the range for `k` is empty or either piece is empty.
fn remove_interval(
    rng: &mut ChaCha8Rng,
    scene: &SceneBundle,
    lt: &LabeledTracklet,
) -> Option<(Fragment, Fragment)> {
    let n = lt.tracklet.len() as i64;
    let i = rng.random_range(1..=n);
    let hi = n - i - 1;
    if hi < i {
        return None;
    }
    let k = rng.random_range(i..=hi);
    let x_end = (i - 1) as usize;
    let y_start = (i + k) as usize;
    if x_end == 0 || y_start >= n as usize {
        return None;
    }
    let piece = |range: std::ops::Range<usize>| {
        let dets = lt.tracklet.detections[range].to_vec();
        let frames = dets.iter().map(|&d| scene.det(d).frame).collect();
        Fragment {
            identity: lt.identity,
            tracklet: Tracklet::new(lt.tracklet.id, lt.tracklet.cam, dets),
            frames,
        }
    };
    Some((piece(0..x_end), piece(y_start..n as usize)))
}

fn cameras_of(tracks: &[LabeledTracklet]) -> Vec<usize> {
    let mut cams: Vec<usize> = tracks.iter().map(|t| t.tracklet.cam).collect();
    cams.sort_unstable();
    cams.dedup();
    cams
}

/// Temporal training pairs. Each round picks one camera, cuts an interval out
/// of each of its tracklets to get a positive (prefix, suffix) pair, then pairs
/// fragments of different identities whose time ranges are disjoint as
/// negatives, never emitting more negatives than positives in the round.
pub fn sample_temporal_pairs(
    scene: &SceneBundle,
    tracks: &[LabeledTracklet],
    n: usize,
    seed: u64,
) -> Result<PairSamples, TrackletError> {
    let cams = cameras_of(tracks);
    if n == 0 || cams.is_empty() {
        return Err(TrackletError::InsufficientData(
            "need at least one round and one labeled tracklet".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = PairSamples::default();
    for round in 0..n {
        let j = cams[rng.random_range(0..cams.len())];
        let mut balance = 0usize;
        let mut pieces: Vec<(u64, Fragment, Fragment)> = Vec::new();
        let mut emitted = (0, 0);
        for lt in tracks.iter().filter(|t| t.tracklet.cam == j) {
            if let Some((x, y)) = remove_interval(&mut rng, scene, lt) {
                out.positives.push(PairSample {
                    kind: PairKind::Temporal,
                    positive: true,
                    x: x.clone(),
                    y: y.clone(),
                    round,
                });
                pieces.push((lt.identity, x, y));
                balance += 1;
                emitted.0 += 1;
            }
        }
        'neg: for a in 0..pieces.len() {
            for b in a + 1..pieces.len() {
                if pieces[a].0 == pieces[b].0 {
                    continue;
                }
                for x in [&pieces[a].1, &pieces[a].2] {
                    for y in [&pieces[b].1, &pieces[b].2] {
                        let ordered = if x.precedes(y) {
                            (x, y)
                        } else if y.precedes(x) {
                            (y, x)
                        } else {
                            continue;
                        };
                        if balance == 0 {
                            break 'neg;
                        }
                        out.negatives.push(PairSample {
                            kind: PairKind::Temporal,
                            positive: false,
                            x: ordered.0.clone(),
                            y: ordered.1.clone(),
                            round,
                        });
                        balance -= 1;
                        emitted.1 += 1;
                    }
                }
            }
        }
        out.per_round.push(emitted);
    }
    Ok(out)
}

/// Spatial training pairs. Each round cuts an interval out of every tracklet,
/// then pairs fragments of cross-camera tracklets that overlap in time:
/// same identity gives positives, different identity negatives, capped by the
/// round's positive count. Fragment pairs sharing no frame are skipped.
pub fn sample_spatial_pairs(
    scene: &SceneBundle,
    tracks: &[LabeledTracklet],
    n: usize,
    seed: u64,
) -> Result<PairSamples, TrackletError> {
    if n == 0 || cameras_of(tracks).len() < 2 {
        return Err(TrackletError::InsufficientData(
            "need at least one round and two cameras".into(),
        ));
    }
    let frames: Vec<Fragment> = tracks
        .iter()
        .map(|lt| Fragment {
            identity: lt.identity,
            tracklet: lt.tracklet.clone(),
            frames: lt.tracklet.frames(scene),
        })
        .collect();
    let mut overlapping: Vec<(usize, usize)> = Vec::new();
    for a in 0..tracks.len() {
        for b in a + 1..tracks.len() {
            if frames[a].cam() != frames[b].cam() && frames[a].shares_frame(&frames[b]) {
                overlapping.push((a, b));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = PairSamples::default();
    for round in 0..n {
        let pieces: Vec<Option<(Fragment, Fragment)>> = tracks
            .iter()
            .map(|lt| remove_interval(&mut rng, scene, lt))
            .collect();
        let mut balance = 0usize;
        let mut emitted = (0, 0);
        for positive in [true, false] {
            for &(a, b) in &overlapping {
                if (tracks[a].identity == tracks[b].identity) != positive {
                    continue;
                }
                let (Some(pa), Some(pb)) = (&pieces[a], &pieces[b]) else {
                    continue;
                };
                for x in [&pa.0, &pa.1] {
                    for y in [&pb.0, &pb.1] {
                        if !x.shares_frame(y) {
                            continue;
                        }
                        if !positive {
                            if balance == 0 {
                                continue;
                            }
                            balance -= 1;
                        } else {
                            balance += 1;
                        }
                        let sample = PairSample {
                            kind: PairKind::Spatial,
                            positive,
                            x: x.clone(),
                            y: y.clone(),
                            round,
                        };
                        if positive {
                            emitted.0 += 1;
                            out.positives.push(sample);
                        } else {
                            emitted.1 += 1;
                            out.negatives.push(sample);
                        }
                    }
                }
            }
        }
        out.per_round.push(emitted);
    }
    Ok(out)
}
