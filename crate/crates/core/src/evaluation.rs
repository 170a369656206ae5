//! CLEAR-MOT and identity metrics on the ground plane, and pairwise accuracy
//! of pre-clustering.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::assignment::{solve_lap, CostMatrix, Direction};
use crate::geometry::GroundPoint;
use crate::io::{GtRecord, SceneBundle};
use crate::precluster::SceneClusters;
use crate::trajectories::Trajectory;

pub const DEFAULT_MATCH_THRESHOLD: f64 = 1.0;
pub const MOSTLY_TRACKED: f64 = 0.8;
pub const MOSTLY_LOST: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("detection {0} has no ground-truth identity")]
    MissingIdentity(u64),
    #[error("match threshold must be positive, got {0}")]
    InvalidThreshold(f64),
}

/// Ground-truth positions per frame and identity.
pub type GroundTruthFrames = BTreeMap<u32, BTreeMap<u64, GroundPoint>>;

/// Collapses per-camera ground-truth records to one position per identity and frame.
pub fn ground_truth_frames(records: &[GtRecord]) -> GroundTruthFrames {
    let mut out: GroundTruthFrames = BTreeMap::new();
    for r in records {
        out.entry(r.frame).or_default().entry(r.identity).or_insert(r.ground());
    }
    out
}

/// Predicted positions per frame and track.
pub fn prediction_frames(trajectories: &[Trajectory]) -> GroundTruthFrames {
    let mut out: GroundTruthFrames = BTreeMap::new();
    for t in trajectories {
        for p in &t.points {
            out.entry(p.frame)
                .or_default()
                .insert(t.track_id, GroundPoint::new(p.position.x, p.position.y));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameMatches {
    pub frame: u32,
    /// `(gt identity, track id, distance)`.
    pub matches: Vec<(u64, u64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MotReport {
    pub mota: f64,
    /// `1 - mean matched distance / threshold`.
    pub motp: f64,
    pub idf1: f64,
    pub mt: f64,
    pub ml: f64,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ids: usize,
    pub gt_boxes: usize,
    pub predicted_boxes: usize,
    pub matches: usize,
    pub idtp: usize,
    pub gt_identities: usize,
    #[serde(skip)]
    pub per_frame: Vec<FrameMatches>,
}

impl MotReport {
    /// Fixed-order `key: value` lines.
    pub fn to_key_values(&self) -> String {
        format!(
            "MOTA: {:.6}\nMOTP: {:.6}\nIDF1: {:.6}\nMT: {:.6}\nML: {:.6}\nFP: {}\nFN: {}\nIDs: {}\nGT: {}\nPRED: {}\n",
            self.mota,
            self.motp,
            self.idf1,
            self.mt,
            self.ml,
            self.fp,
            self.fn_,
            self.ids,
            self.gt_boxes,
            self.predicted_boxes
        )
    }
}

/// Min-cost matching between `gt` and `hyp` under the threshold.
fn match_frame(gt: &[(u64, GroundPoint)], hyp: &[(u64, GroundPoint)], threshold: f64) -> Vec<(usize, usize)> {
    if gt.is_empty() || hyp.is_empty() {
        return Vec::new();
    }
    // pairs beyond the threshold cost more than any full set of valid ones,
    // so the assignment always prefers more valid matches
    let forbidden = (gt.len().min(hyp.len()) + 1) as f64 * threshold;
    let costs = CostMatrix::from_fn(gt.len(), hyp.len(), Direction::Minimize, |r, c| {
        let d = gt[r].1.distance(hyp[c].1);
        if d <= threshold {
            d
        } else {
            forbidden
        }
    })
    .expect("finite distances");
    solve_lap(&costs)
        .expect("non-empty matrix")
        .pairs
        .into_iter()
        .filter(|&(r, c)| gt[r].1.distance(hyp[c].1) <= threshold)
        .collect()
}

/// CLEAR-MOT counts with correspondences carried over from earlier frames
/// first, then a min-cost assignment of the rest; IDF1 from the global
/// identity-to-track assignment maximizing co-located frames.
pub fn evaluate_mot(gt: &GroundTruthFrames, pred: &GroundTruthFrames, threshold: f64) -> Result<MotReport, EvalError> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(EvalError::InvalidThreshold(threshold));
    }
    let gt_boxes: usize = gt.values().map(BTreeMap::len).sum();
    if gt_boxes == 0 {
        return Err(EvalError::EmptyGroundTruth);
    }
    let predicted_boxes: usize = pred.values().map(BTreeMap::len).sum();
    let empty = BTreeMap::new();

    let mut last_match: HashMap<u64, u64> = HashMap::new();
    let mut current: HashMap<u64, u64> = HashMap::new();
    let mut covered: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    let (mut fp, mut fn_, mut ids, mut matched, mut dist_sum) = (0, 0, 0, 0, 0.0);
    let mut per_frame = Vec::new();

    let frames: std::collections::BTreeSet<u32> = gt.keys().chain(pred.keys()).copied().collect();
    for f in frames {
        let g = gt.get(&f).unwrap_or(&empty);
        let h = pred.get(&f).unwrap_or(&empty);
        let mut pairs: Vec<(u64, u64, f64)> = Vec::new();
        let mut used_h = std::collections::HashSet::new();
        // keep still-valid correspondences from the previous frame
        for (&o, p) in g {
            if let Some(&t) = current.get(&o) {
                if let Some(q) = h.get(&t) {
                    let d = p.distance(*q);
                    if d <= threshold && used_h.insert(t) {
                        pairs.push((o, t, d));
                    }
                }
            }
        }
        let rest_g: Vec<(u64, GroundPoint)> = g
            .iter()
            .filter(|(o, _)| !pairs.iter().any(|m| m.0 == **o))
            .map(|(o, p)| (*o, *p))
            .collect();
        let rest_h: Vec<(u64, GroundPoint)> = h
            .iter()
            .filter(|(t, _)| !used_h.contains(*t))
            .map(|(t, p)| (*t, *p))
            .collect();
        for (r, c) in match_frame(&rest_g, &rest_h, threshold) {
            pairs.push((rest_g[r].0, rest_h[c].0, rest_g[r].1.distance(rest_h[c].1)));
        }
        pairs.sort_by_key(|m| m.0);

        current.clear();
        for &(o, t, d) in &pairs {
            if last_match.get(&o).is_some_and(|&prev| prev != t) {
                ids += 1;
            }
            last_match.insert(o, t);
            current.insert(o, t);
            dist_sum += d;
        }
        for &o in g.keys() {
            let c = covered.entry(o).or_default();
            c.1 += 1;
            if current.contains_key(&o) {
                c.0 += 1;
            }
        }
        matched += pairs.len();
        fn_ += g.len() - pairs.len();
        fp += h.len() - pairs.len();
        per_frame.push(FrameMatches { frame: f, matches: pairs });
    }

    let n_ids = covered.len();
    let mt = covered
        .values()
        .filter(|(m, n)| *m as f64 >= MOSTLY_TRACKED * *n as f64)
        .count();
    let ml = covered
        .values()
        .filter(|(m, n)| *m as f64 <= MOSTLY_LOST * *n as f64)
        .count();

    let idtp = identity_true_positives(gt, pred, threshold);
    Ok(MotReport {
        mota: 1.0 - (fn_ + fp + ids) as f64 / gt_boxes as f64,
        motp: if matched == 0 {
            0.0
        } else {
            1.0 - dist_sum / (matched as f64 * threshold)
        },
        idf1: 2.0 * idtp as f64 / (gt_boxes + predicted_boxes) as f64,
        mt: mt as f64 / n_ids as f64,
        ml: ml as f64 / n_ids as f64,
        fp,
        fn_,
        ids,
        gt_boxes,
        predicted_boxes,
        matches: matched,
        idtp,
        gt_identities: n_ids,
        per_frame,
    })
}

/// Frames co-located within the threshold, summed over the best one-to-one
/// identity-to-track assignment.
fn identity_true_positives(gt: &GroundTruthFrames, pred: &GroundTruthFrames, threshold: f64) -> usize {
    let gt_ids: Vec<u64> = {
        let mut v: Vec<u64> = gt.values().flat_map(|m| m.keys().copied()).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let tr_ids: Vec<u64> = {
        let mut v: Vec<u64> = pred.values().flat_map(|m| m.keys().copied()).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    if gt_ids.is_empty() || tr_ids.is_empty() {
        return 0;
    }
    let gi: HashMap<u64, usize> = gt_ids.iter().enumerate().map(|(i, &g)| (g, i)).collect();
    let ti: HashMap<u64, usize> = tr_ids.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let mut counts = vec![0.0; gt_ids.len() * tr_ids.len()];
    for (f, g) in gt {
        let Some(h) = pred.get(f) else { continue };
        for (o, p) in g {
            for (t, q) in h {
                if p.distance(*q) <= threshold {
                    counts[gi[o] * tr_ids.len() + ti[t]] += 1.0;
                }
            }
        }
    }
    let costs = CostMatrix::new(gt_ids.len(), tr_ids.len(), counts.clone(), Direction::Maximize).expect("finite counts");
    solve_lap(&costs)
        .expect("non-empty")
        .pairs
        .iter()
        .map(|&(r, c)| counts[r * tr_ids.len() + c] as usize)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

/// Pairwise correspondence quality over all same-frame, cross-camera
/// detection pairs. A pair is predicted positive when the two detections are
/// in each other's pre-cluster and is truly positive when both have the same
/// identity. `None` identities mark clutter. Precision and recall are 1 when
/// their denominator is zero.
pub fn evaluate_preclustering(
    scene: &SceneBundle,
    clusters: &SceneClusters,
    identities: &BTreeMap<u64, Option<u64>>,
) -> Result<PairMetrics, EvalError> {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (_, dets) in scene.frames() {
        for (i, a) in dets.iter().enumerate() {
            let ia = *identities.get(&a.det_id).ok_or(EvalError::MissingIdentity(a.det_id))?;
            for b in &dets[i + 1..] {
                if a.cam == b.cam {
                    continue;
                }
                let ib = *identities.get(&b.det_id).ok_or(EvalError::MissingIdentity(b.det_id))?;
                let truth = ia.is_some() && ia == ib;
                let predicted = clusters.members(a.det_id).contains(&b.det_id);
                match (predicted, truth) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => tn += 1,
                }
            }
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    Ok(PairMetrics {
        accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        tp,
        fp,
        fn_,
        tn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;
    use crate::io::Detection;
    use crate::precluster::PreCluster;
    use std::collections::BTreeSet;

    fn frames(rows: &[(u32, u64, f64, f64)]) -> GroundTruthFrames {
        let mut out: GroundTruthFrames = BTreeMap::new();
        for &(f, id, x, y) in rows {
            out.entry(f).or_default().insert(id, GroundPoint::new(x, y));
        }
        out
    }

    #[test]
    fn perfect_tracking() {
        let gt = frames(&[(0, 1, 0.0, 0.0), (0, 2, 5.0, 0.0), (1, 1, 0.1, 0.0), (1, 2, 5.1, 0.0)]);
        let r = evaluate_mot(&gt, &gt, 1.0).unwrap();
        assert_eq!((r.mota, r.idf1, r.mt, r.ml, r.motp), (1.0, 1.0, 1.0, 0.0, 1.0));
        assert_eq!((r.fp, r.fn_, r.ids), (0, 0, 0));
    }

    #[test]
    fn one_switch_in_hundred_boxes() {
        let gt = frames(&(0..100).map(|f| (f, 7, f64::from(f) * 0.1, 0.0)).collect::<Vec<_>>());
        let pred = frames(
            &(0..100)
                .map(|f| (f, if f < 50 { 1 } else { 2 }, f64::from(f) * 0.1, 0.0))
                .collect::<Vec<_>>(),
        );
        let r = evaluate_mot(&gt, &pred, 1.0).unwrap();
        assert_eq!(r.ids, 1);
        assert!((r.mota - 0.99).abs() < 1e-12);
        assert!((r.idf1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn misses_and_false_positives() {
        let gt = frames(&[(0, 1, 0.0, 0.0), (1, 1, 0.0, 0.0)]);
        let pred = frames(&[(0, 9, 0.5, 0.0), (1, 9, 3.0, 0.0)]);
        let r = evaluate_mot(&gt, &pred, 1.0).unwrap();
        assert_eq!((r.fp, r.fn_, r.ids, r.matches), (1, 1, 0, 1));
        assert_eq!(r.mota, 0.0);
        assert!((r.motp - 0.5).abs() < 1e-12);
        assert_eq!((r.mt, r.ml), (0.0, 0.0));
    }

    #[test]
    fn previous_matches_are_kept() {
        // in frame 1 track 5 is nearer to identity 1, but identity 0 keeps it
        let gt = frames(&[(0, 0, 0.0, 0.0), (1, 0, 0.0, 0.0), (1, 1, 0.8, 0.0)]);
        let pred = frames(&[(0, 5, 0.0, 0.0), (1, 5, 0.7, 0.0)]);
        let r = evaluate_mot(&gt, &pred, 1.0).unwrap();
        assert_eq!(r.per_frame[1].matches, vec![(0, 5, 0.7)]);
    }

    #[test]
    fn relabeling_predictions_is_invariant() {
        let gt = frames(&[(0, 1, 0.0, 0.0), (0, 2, 3.0, 0.0), (1, 1, 0.2, 0.0), (1, 2, 3.0, 0.5)]);
        let a = frames(&[(0, 10, 0.1, 0.0), (0, 11, 3.2, 0.0), (1, 10, 0.3, 0.0), (1, 11, 2.0, 0.0)]);
        let b = frames(&[(0, 40, 0.1, 0.0), (0, 3, 3.2, 0.0), (1, 40, 0.3, 0.0), (1, 3, 2.0, 0.0)]);
        let (ra, rb) = (evaluate_mot(&gt, &a, 1.0).unwrap(), evaluate_mot(&gt, &b, 1.0).unwrap());
        assert_eq!((ra.mota, ra.idf1, ra.ids), (rb.mota, rb.idf1, rb.ids));
    }

    #[test]
    fn errors() {
        assert_eq!(
            evaluate_mot(&BTreeMap::new(), &BTreeMap::new(), 1.0),
            Err(EvalError::EmptyGroundTruth)
        );
        let gt = frames(&[(0, 1, 0.0, 0.0)]);
        assert!(evaluate_mot(&gt, &gt, 0.0).is_err());
    }

    /// Six detections in one frame: cameras 0, 1, 2 each see identities A and B.
    /// Truth: 3 A-pairs and 3 B-pairs across cameras (6 positives) out of 12
    /// cross-camera pairs. Prediction clusters {a0,a1} {a2} {b0,b1,b2}:
    /// predicted pairs a0-a1, b0-b1, b0-b2, b1-b2 are all correct (tp 4, fp 0);
    /// a0-a2 and a1-a2 are missed (fn 2); remaining 6 pairs are tn.
    #[test]
    fn preclustering_hand_count() {
        let mut dets = Vec::new();
        let mut ids = BTreeMap::new();
        for cam in 0..3 {
            for who in 0..2u64 {
                let id = (cam * 2) as u64 + who;
                dets.push(Detection::new(id, cam, 0, BoundingBox::new(0.0, 0.0, 1.0, 1.0), vec![1.0]));
                ids.insert(id, Some(who));
            }
        }
        let cams: Vec<_> = (0..3)
            .map(|i| {
                crate::geometry::CameraModel::look_at(
                    i,
                    nalgebra::Matrix3::new(100.0, 0.0, 0.0, 0.0, 100.0, 0.0, 0.0, 0.0, 1.0),
                    nalgebra::Vector3::new(0.0, -10.0, 5.0),
                    nalgebra::Vector3::zeros(),
                )
                .unwrap()
            })
            .collect();
        let scene = SceneBundle::new(cams, dets, None, None, None).unwrap();
        // a_c = 2c, b_c = 2c + 1
        let groups: Vec<Vec<u64>> = vec![vec![0, 2], vec![4], vec![1, 3, 5]];
        let mut map = HashMap::new();
        for g in &groups {
            let members: BTreeSet<u64> = g.iter().copied().collect();
            for &d in g {
                map.insert(
                    d,
                    PreCluster {
                        anchor: d,
                        members: members.clone(),
                        visible_members: members.clone(),
                    },
                );
            }
        }
        let clusters = SceneClusters::from_parts(map, HashMap::new());
        let m = evaluate_preclustering(&scene, &clusters, &ids).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (4, 0, 2, 6));
        assert!((m.precision - 1.0).abs() < 1e-12);
        assert!((m.recall - 4.0 / 6.0).abs() < 1e-12);
        assert!((m.accuracy - 10.0 / 12.0).abs() < 1e-12);

        ids.remove(&3);
        assert_eq!(
            evaluate_preclustering(&scene, &clusters, &ids),
            Err(EvalError::MissingIdentity(3))
        );
    }
}
