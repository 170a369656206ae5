//! Per-frame geometric pre-clustering of detections across cameras and
//! visible-detection filtering.
//!
//! Two detections from different cameras are put into correspondence when each
//! picks the other in a foot-point distance assignment solved from its own
//! neighbourhood ("confident connection"). Within one camera, overlapping boxes
//! are resolved in favour of the one nearest to the camera.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rayon::prelude::*;

use crate::assignment::{solve_lap, CostMatrix, Direction};
use crate::geometry::CameraModel;
use crate::io::{Detection, SceneBundle};

pub const DEFAULT_RADIUS: f64 = 0.5;
pub const DEFAULT_VISIBLE_IOU: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreclusterParams {
    /// Scan radius around a foot point, meters.
    pub radius: f64,
    /// IoU at which two same-camera boxes compete for visibility.
    pub visible_iou: f64,
}

impl Default for PreclusterParams {
    fn default() -> Self {
        Self {
            radius: DEFAULT_RADIUS,
            visible_iou: DEFAULT_VISIBLE_IOU,
        }
    }
}

/// Cluster anchored at one detection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreCluster {
    pub anchor: u64,
    /// Confidently connected detections, anchor included.
    pub members: BTreeSet<u64>,
    /// Members that are their own visible detection.
    pub visible_members: BTreeSet<u64>,
}

/// Confident-connection clusters for the detections of one frame.
pub fn precluster_frame(dets: &[&Detection], radius: f64) -> BTreeMap<u64, BTreeSet<u64>> {
    let mut cams: Vec<usize> = dets.iter().map(|d| d.cam).collect();
    cams.sort_unstable();
    cams.dedup();

    let candidates = |b: &Detection, cam: usize| -> Vec<&Detection> {
        dets.iter()
            .copied()
            .filter(|d| d.cam == cam && d.foot.distance(b.foot) <= radius)
            .collect()
    };

    // one-way matches I_b
    let mut one_way: HashMap<u64, BTreeSet<u64>> = HashMap::with_capacity(dets.len());
    for b in dets {
        let own = candidates(b, b.cam);
        let row = own
            .iter()
            .position(|d| d.det_id == b.det_id)
            .expect("a detection is its own candidate");
        let mut matched = BTreeSet::new();
        for &other_cam in cams.iter().filter(|&&c| c != b.cam) {
            let other = candidates(b, other_cam);
            if other.is_empty() {
                continue;
            }
            let costs = CostMatrix::from_fn(own.len(), other.len(), Direction::Minimize, |r, c| {
                own[r].foot.distance(other[c].foot)
            })
            .expect("finite foot points");
            let m = solve_lap(&costs).expect("non-empty candidate sets");
            if let Some(col) = m.col_of(row) {
                matched.insert(other[col].det_id);
            }
        }
        one_way.insert(b.det_id, matched);
    }

    dets.iter()
        .map(|b| {
            let mut members: BTreeSet<u64> = one_way[&b.det_id]
                .iter()
                .copied()
                .filter(|o| one_way[o].contains(&b.det_id))
                .collect();
            members.insert(b.det_id);
            (b.det_id, members)
        })
        .collect()
}

/// The detection among `same_view` (same frame and camera as `b`) overlapping
/// `b` with IoU >= `iou_threshold` whose foot point is nearest the camera.
pub fn visible(b: &Detection, same_view: &[&Detection], cam: &CameraModel, iou_threshold: f64) -> u64 {
    let mut best = (cam.distance_to(b.foot), b.det_id);
    for o in same_view {
        if o.det_id == b.det_id || o.bbox.iou(&b.bbox) < iou_threshold {
            continue;
        }
        let key = (cam.distance_to(o.foot), o.det_id);
        if key.0 < best.0 || (key.0 == best.0 && key.1 < best.1) {
            best = key;
        }
    }
    best.1
}

/// Members of `cluster` that are their own visible detection.
pub fn visible_cluster(cluster: &BTreeSet<u64>, visibility: &HashMap<u64, u64>) -> BTreeSet<u64> {
    cluster
        .iter()
        .copied()
        .filter(|d| visibility.get(d) == Some(d))
        .collect()
}

/// Visibility map for one frame: det_id -> visible(det_id).
pub fn frame_visibility(
    dets: &[&Detection],
    cameras: &[CameraModel],
    iou_threshold: f64,
) -> HashMap<u64, u64> {
    let mut out = HashMap::with_capacity(dets.len());
    for cam in cameras {
        let view: Vec<&Detection> = dets.iter().copied().filter(|d| d.cam == cam.id).collect();
        for b in &view {
            out.insert(b.det_id, visible(b, &view, cam, iou_threshold));
        }
    }
    out
}

/// Pre-clusters for every detection of a scene.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneClusters {
    clusters: HashMap<u64, PreCluster>,
    visibility: HashMap<u64, u64>,
}

impl SceneClusters {
    pub fn from_parts(clusters: HashMap<u64, PreCluster>, visibility: HashMap<u64, u64>) -> Self {
        Self {
            clusters,
            visibility,
        }
    }

    pub fn get(&self, det_id: u64) -> Option<&PreCluster> {
        self.clusters.get(&det_id)
    }

    pub fn members(&self, det_id: u64) -> &BTreeSet<u64> {
        &self.clusters[&det_id].members
    }

    pub fn is_visible(&self, det_id: u64) -> bool {
        self.visibility.get(&det_id) == Some(&det_id)
    }

    pub fn visibility(&self) -> &HashMap<u64, u64> {
        &self.visibility
    }

    /// `C'_b`, or `{b}` when every member of `C_b` is occluded.
    pub fn visible_or_self(&self, det_id: u64) -> BTreeSet<u64> {
        let c = &self.clusters[&det_id];
        if c.visible_members.is_empty() {
            BTreeSet::from([det_id])
        } else {
            c.visible_members.clone()
        }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Iterates clusters in det_id order.
    pub fn iter_sorted(&self) -> impl Iterator<Item = &PreCluster> {
        let mut ids: Vec<&u64> = self.clusters.keys().collect();
        ids.sort_unstable();
        ids.into_iter().map(move |id| &self.clusters[id])
    }
}

/// Runs pre-clustering and visibility filtering over all frames.
pub fn precluster_scene(scene: &SceneBundle, params: &PreclusterParams) -> SceneClusters {
    let frames: Vec<(u32, Vec<&Detection>)> = scene
        .frames()
        .map(|(f, dets)| (f, dets.iter().collect()))
        .collect();
    let per_frame: Vec<(Vec<PreCluster>, HashMap<u64, u64>)> = frames
        .par_iter()
        .map(|(_, dets)| {
            let vis = frame_visibility(dets, &scene.cameras, params.visible_iou);
            let clusters = precluster_frame(dets, params.radius)
                .into_iter()
                .map(|(anchor, members)| {
                    let visible_members = visible_cluster(&members, &vis);
                    PreCluster {
                        anchor,
                        members,
                        visible_members,
                    }
                })
                .collect();
            (clusters, vis)
        })
        .collect();

    let mut clusters = HashMap::with_capacity(scene.detections.len());
    let mut visibility = HashMap::with_capacity(scene.detections.len());
    for (cs, vis) in per_frame {
        for c in cs {
            clusters.insert(c.anchor, c);
        }
        visibility.extend(vis);
    }
    SceneClusters {
        clusters,
        visibility,
    }
}

/// Dumps clusters as `frame,anchor_det,member_det,visible` rows.
pub fn write_clusters_csv<W: Write>(
    scene: &SceneBundle,
    clusters: &SceneClusters,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "frame,anchor_det,member_det,visible")?;
    for d in &scene.detections {
        let Some(c) = clusters.get(d.det_id) else {
            continue;
        };
        for m in &c.members {
            let vis = u8::from(c.visible_members.contains(m));
            writeln!(out, "{},{},{},{}", d.frame, c.anchor, m, vis)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundingBox, GroundPoint};
    use nalgebra::{Matrix3, Vector3};

    fn det_at(id: u64, cam: usize, x: f64, y: f64) -> Detection {
        let mut d = Detection::new(id, cam, 0, BoundingBox::new(0.0, 0.0, 10.0, 30.0), vec![1.0]);
        d.foot = GroundPoint::new(x, y);
        d
    }

    fn refs(v: &[Detection]) -> Vec<&Detection> {
        v.iter().collect()
    }

    fn set(ids: &[u64]) -> BTreeSet<u64> {
        ids.iter().copied().collect()
    }

    #[test]
    fn coincident_detections_cluster() {
        let dets = vec![det_at(1, 0, 2.0, 3.0), det_at(2, 1, 2.0, 3.0)];
        let c = precluster_frame(&refs(&dets), 0.5);
        assert_eq!(c[&1], set(&[1, 2]));
        assert_eq!(c[&2], set(&[1, 2]));
    }

    #[test]
    fn distant_objects_never_merge() {
        let dets = vec![
            det_at(1, 0, 0.0, 0.0),
            det_at(2, 1, 0.0, 0.0),
            det_at(3, 0, 2.0, 0.0),
            det_at(4, 1, 2.0, 0.0),
        ];
        let c = precluster_frame(&refs(&dets), 0.5);
        assert_eq!(c[&1], set(&[1, 2]));
        assert_eq!(c[&3], set(&[3, 4]));
    }

    /// Hand trace with r = 0.35 on the line y = 0:
    /// cam 0 has b1 at 0.0 and b2 at 0.4, cam 1 has b3 at 0.3, cam 2 has b4 at 0.1,
    /// and a second object at (5, 5) is seen by all three cameras (b5, b6, b7).
    ///
    /// * b1: cam 1 candidates {b3} -> b1-b3; cam 2 {b4} -> b1-b4.
    /// * b2: own {b2}; cam 1 {b3} -> b2-b3; cam 2 {b4} -> b2-b4.
    /// * b3: own {b3}; cam 0 {b1 (0.3), b2 (0.1)} -> b3-b2; cam 2 {b4} -> b3-b4.
    /// * b4: own {b4}; cam 0 {b1 (0.1), b2 (0.3)} -> b4-b1; cam 1 {b3} -> b4-b3.
    ///
    /// b1 -> b3 is one-way only, so b3 is not in C_b1 although it is in I_b1.
    #[test]
    fn one_way_match_is_dropped() {
        let dets = vec![
            det_at(1, 0, 0.0, 0.0),
            det_at(2, 0, 0.4, 0.0),
            det_at(3, 1, 0.3, 0.0),
            det_at(4, 2, 0.1, 0.0),
            det_at(5, 0, 5.0, 5.0),
            det_at(6, 1, 5.0, 5.0),
            det_at(7, 2, 5.0, 5.0),
        ];
        let c = precluster_frame(&refs(&dets), 0.35);
        assert_eq!(c[&1], set(&[1, 4]));
        assert_eq!(c[&2], set(&[2, 3]));
        assert_eq!(c[&3], set(&[2, 3, 4]));
        assert_eq!(c[&4], set(&[1, 3, 4]));
        for id in 5..=7 {
            assert_eq!(c[&id], set(&[5, 6, 7]));
        }
    }

    fn camera() -> CameraModel {
        CameraModel::look_at(
            0,
            Matrix3::new(1000.0, 0.0, 960.0, 0.0, 1000.0, 540.0, 0.0, 0.0, 1.0),
            Vector3::new(0.0, -10.0, 5.0),
            Vector3::zeros(),
        )
        .unwrap()
    }

    fn boxed(id: u64, b: BoundingBox, foot_y: f64) -> Detection {
        let mut d = Detection::new(id, 0, 0, b, vec![1.0]);
        d.foot = GroundPoint::new(0.0, foot_y);
        d
    }

    #[test]
    fn visibility_rule() {
        let cam = camera();
        let a = boxed(1, BoundingBox::new(0.0, 0.0, 100.0, 100.0), 0.0);
        assert_eq!(visible(&a, &[&a], &cam, 0.6), 1);

        // IoU 0.8 (area 100x100 vs 100x80 inside): the one 2 m closer wins.
        let b = boxed(2, BoundingBox::new(0.0, 0.0, 100.0, 80.0), -2.0);
        assert!((a.bbox.iou(&b.bbox) - 0.8).abs() < 1e-12);
        assert_eq!(visible(&a, &[&a, &b], &cam, 0.6), 2);
        assert_eq!(visible(&b, &[&a, &b], &cam, 0.6), 2);

        // IoU 0.3: both keep themselves.
        let c = boxed(3, BoundingBox::new(0.0, 0.0, 100.0, 30.0), -2.0);
        assert_eq!(visible(&a, &[&a, &c], &cam, 0.6), 1);
        assert_eq!(visible(&c, &[&a, &c], &cam, 0.6), 3);
    }

    #[test]
    fn visible_cluster_filters_occluded() {
        let vis: HashMap<u64, u64> = [(1, 1), (2, 2), (3, 9), (9, 9)].into_iter().collect();
        assert_eq!(visible_cluster(&set(&[1, 2]), &vis), set(&[1, 2]));
        assert_eq!(visible_cluster(&set(&[1, 2, 3]), &vis), set(&[1, 2]));
    }
}
