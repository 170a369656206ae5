//! Per-identity 3D trajectories from solved tracklet clusters.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{person_box, GroundPoint, PersonCylinder};
use crate::io::{Detection, SceneBundle};
use crate::tracklets::Tracklet;

pub const DEFAULT_SEARCH_RADIUS: f64 = 0.5;
pub const DEFAULT_GRID_STEP: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("cluster has no detections")]
    EmptyCluster,
    #[error("invalid interpolation parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub frame: u32,
    /// Ground position, `z = 0`.
    pub position: Vector3<f64>,
    /// Cameras that contributed a detection, ascending.
    pub cams: Vec<usize>,
    pub det_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub track_id: u64,
    /// Strictly increasing frames.
    pub points: Vec<TrajectoryPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolationParams {
    /// Search radius around the mean foot point, meters.
    pub radius: f64,
    pub grid_step: f64,
    pub cylinder_radius: f64,
    pub cylinder_height: f64,
}

impl Default for InterpolationParams {
    fn default() -> Self {
        Self {
            radius: DEFAULT_SEARCH_RADIUS,
            grid_step: DEFAULT_GRID_STEP,
            cylinder_radius: PersonCylinder::DEFAULT_RADIUS,
            cylinder_height: PersonCylinder::DEFAULT_HEIGHT,
        }
    }
}

impl InterpolationParams {
    fn validate(&self) -> Result<(), TrajectoryError> {
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(TrajectoryError::InvalidParams(format!("radius {}", self.radius)));
        }
        if !(self.grid_step > 0.0 && self.grid_step.is_finite()) {
            return Err(TrajectoryError::InvalidParams(format!("grid step {}", self.grid_step)));
        }
        if !(self.cylinder_radius > 0.0 && self.cylinder_height > 0.0) {
            return Err(TrajectoryError::InvalidParams("cylinder size".into()));
        }
        Ok(())
    }
}

/// Sum of squared IoU between the person box rendered at `p` and each detection.
pub fn reprojection_score(scene: &SceneBundle, dets: &[&Detection], p: GroundPoint, params: &InterpolationParams) -> f64 {
    dets.iter()
        .map(|d| {
            let cam = scene.camera(d.cam).expect("validated camera");
            match person_box(cam, p, params.cylinder_radius, params.cylinder_height) {
                Ok(b) => b.iou(&d.bbox).powi(2),
                Err(_) => 0.0,
            }
        })
        .sum()
}

/// Grid offsets `(i, j) * step` with norm at most `radius`, origin included.
pub fn grid_offsets(radius: f64, step: f64) -> Vec<(f64, f64)> {
    let n = (radius / step).floor() as i64;
    let mut out = Vec::new();
    for i in -n..=n {
        for j in -n..=n {
            let (dx, dy) = (i as f64 * step, j as f64 * step);
            if (dx * dx + dy * dy).sqrt() <= radius {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Position for one frame: best-scoring grid point around the mean foot point.
/// Ties go to the candidate nearest the mean, then the smaller `(x, y)`.
pub fn interpolate_frame(
    scene: &SceneBundle,
    dets: &[&Detection],
    offsets: &[(f64, f64)],
    params: &InterpolationParams,
) -> GroundPoint {
    let n = dets.len() as f64;
    let avg = GroundPoint::new(
        dets.iter().map(|d| d.foot.x).sum::<f64>() / n,
        dets.iter().map(|d| d.foot.y).sum::<f64>() / n,
    );
    let mut best: Option<(f64, f64, GroundPoint)> = None;
    for &(dx, dy) in offsets {
        let p = GroundPoint::new(avg.x + dx, avg.y + dy);
        let score = reprojection_score(scene, dets, p, params);
        let dist = (dx * dx + dy * dy).sqrt();
        let better = match best {
            None => true,
            Some((s, d, q)) => {
                score > s || (score == s && (dist < d || (dist == d && (p.x, p.y) < (q.x, q.y))))
            }
        };
        if better {
            best = Some((score, dist, p));
        }
    }
    best.map_or(avg, |b| b.2)
}

/// Interpolates one trajectory from the detections of a cluster.
pub fn interpolate_3d(
    scene: &SceneBundle,
    det_ids: &[u64],
    track_id: u64,
    params: &InterpolationParams,
) -> Result<Trajectory, TrajectoryError> {
    params.validate()?;
    if det_ids.is_empty() {
        return Err(TrajectoryError::EmptyCluster);
    }
    let mut by_frame: BTreeMap<u32, Vec<&Detection>> = BTreeMap::new();
    for &id in det_ids {
        let d = scene.det(id);
        by_frame.entry(d.frame).or_default().push(d);
    }
    let offsets = grid_offsets(params.radius, params.grid_step);
    let frames: Vec<(u32, Vec<&Detection>)> = by_frame.into_iter().collect();
    let points = frames
        .par_iter()
        .map(|(frame, dets)| {
            let mut dets = dets.clone();
            dets.sort_by_key(|d| (d.cam, d.det_id));
            let g = interpolate_frame(scene, &dets, &offsets, params);
            let mut cams: Vec<usize> = dets.iter().map(|d| d.cam).collect();
            cams.dedup();
            TrajectoryPoint {
                frame: *frame,
                position: g.to_world(),
                cams,
                det_ids: dets.iter().map(|d| d.det_id).collect(),
            }
        })
        .collect();
    Ok(Trajectory { track_id, points })
}

/// One trajectory per component; `labels[i]` is the component of `tracklets[i]`.
/// Track ids are the component labels.
pub fn clusters_to_trajectories(
    scene: &SceneBundle,
    tracklets: &[Tracklet],
    labels: &[usize],
    params: &InterpolationParams,
) -> Result<Vec<Trajectory>, TrajectoryError> {
    let mut groups: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    for (t, &label) in tracklets.iter().zip(labels) {
        groups.entry(label).or_default().extend(&t.detections);
    }
    groups
        .into_iter()
        .map(|(label, dets)| interpolate_3d(scene, &dets, label as u64, params))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundingBox, CameraModel};
    use nalgebra::Matrix3;

    fn cameras() -> Vec<CameraModel> {
        let k = Matrix3::new(1200.0, 0.0, 960.0, 0.0, 1200.0, 540.0, 0.0, 0.0, 1.0);
        vec![
            CameraModel::look_at(0, k, Vector3::new(-8.0, -8.0, 5.0), Vector3::zeros()).unwrap(),
            CameraModel::look_at(1, k, Vector3::new(8.0, -6.0, 5.0), Vector3::zeros()).unwrap(),
        ]
    }

    fn rendered_scene(truth: &[(u32, f64, f64)]) -> SceneBundle {
        let cams = cameras();
        let mut dets = Vec::new();
        for (i, &(f, x, y)) in truth.iter().enumerate() {
            for cam in &cams {
                let b = person_box(cam, GroundPoint::new(x, y), 0.3, 1.7).unwrap();
                dets.push(Detection::new((i * 2 + cam.id) as u64, cam.id, f, b, vec![1.0]));
            }
        }
        SceneBundle::new(cams, dets, None, None, None).unwrap()
    }

    #[test]
    fn single_detection_zero_radius() {
        let s = rendered_scene(&[(0, 0.7, -0.4)]);
        let params = InterpolationParams {
            radius: 0.0,
            ..Default::default()
        };
        let t = interpolate_3d(&s, &[0], 5, &params).unwrap();
        assert_eq!(t.track_id, 5);
        assert_eq!(t.points.len(), 1);
        let foot = s.det(0).foot;
        assert_eq!(t.points[0].position, Vector3::new(foot.x, foot.y, 0.0));
    }

    #[test]
    fn noiseless_frame_recovers_truth() {
        let s = rendered_scene(&[(0, 0.7, -0.4), (3, 1.0, 0.2)]);
        let t = interpolate_3d(&s, &[0, 1, 2, 3], 0, &InterpolationParams::default()).unwrap();
        assert_eq!(t.points.iter().map(|p| p.frame).collect::<Vec<_>>(), vec![0, 3]);
        assert!((t.points[0].position - Vector3::new(0.7, -0.4, 0.0)).norm() < DEFAULT_GRID_STEP);
        assert!((t.points[1].position - Vector3::new(1.0, 0.2, 0.0)).norm() < DEFAULT_GRID_STEP);
        assert_eq!(t.points[0].cams, vec![0, 1]);
        assert_eq!(t.points[0].position.z, 0.0);
    }

    #[test]
    fn offset_detection_pulls_toward_overlap() {
        // shift one box horizontally; the optimum stays within the search ball
        let mut s = rendered_scene(&[(0, 0.0, 0.0)]);
        let params = InterpolationParams::default();
        let mut d = s.detections.clone();
        d[0].bbox = BoundingBox::new(d[0].bbox.left + 15.0, d[0].bbox.top, d[0].bbox.width, d[0].bbox.height);
        s = SceneBundle::new(s.cameras.clone(), d, None, None, None).unwrap();
        let dets: Vec<&Detection> = s.detections.iter().collect();
        let offsets = grid_offsets(params.radius, params.grid_step);
        let p = interpolate_frame(&s, &dets, &offsets, &params);
        let n = dets.len() as f64;
        let avg = GroundPoint::new(
            dets.iter().map(|d| d.foot.x).sum::<f64>() / n,
            dets.iter().map(|d| d.foot.y).sum::<f64>() / n,
        );
        assert!(p.distance(avg) <= params.radius + 1e-12);
        assert!(reprojection_score(&s, &dets, p, &params) >= reprojection_score(&s, &dets, avg, &params));

        // independent brute force over the same candidates
        let mut best = f64::NEG_INFINITY;
        for &(dx, dy) in &offsets {
            best = best.max(reprojection_score(&s, &dets, GroundPoint::new(avg.x + dx, avg.y + dy), &params));
        }
        assert!((reprojection_score(&s, &dets, p, &params) - best).abs() < 1e-9);
    }

    #[test]
    fn grid_includes_origin_and_respects_radius() {
        let g = grid_offsets(0.5, 0.05);
        assert!(g.contains(&(0.0, 0.0)));
        assert!(g.iter().all(|(x, y)| (x * x + y * y).sqrt() <= 0.5));
        assert_eq!(grid_offsets(0.0, 0.05), vec![(0.0, 0.0)]);
    }

    #[test]
    fn errors() {
        let s = rendered_scene(&[(0, 0.0, 0.0)]);
        assert_eq!(
            interpolate_3d(&s, &[], 0, &InterpolationParams::default()),
            Err(TrajectoryError::EmptyCluster)
        );
        let bad = InterpolationParams {
            grid_step: 0.0,
            ..Default::default()
        };
        assert!(interpolate_3d(&s, &[0], 0, &bad).is_err());
    }
}
