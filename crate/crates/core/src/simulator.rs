//! Synthetic multi-camera scenes with ground truth.
//!
//! Pedestrians walk closed waypoint loops on a rectangular arena watched by
//! cameras on a circle. Each frame every camera sees every pedestrian whose box
//! fits in the image; a pedestrian whose box overlaps a nearer one with IoU at
//! least the visibility threshold is occluded and carries the occluder's
//! appearance. Detections get foot, pixel and embedding noise, misses and
//! clutter; tracklets are per-camera identity runs cut at gaps and random breaks.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::geometry::{person_box, BoundingBox, CameraModel, GeometryError, GroundPoint, PersonCylinder};
use crate::io::{Detection, GtRecord, IoError, SceneBundle};
use crate::tracklets::Tracklet;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_pedestrians: usize,
    pub n_cameras: usize,
    pub n_frames: u32,
    pub fps: f64,
    /// Arena `[0, width] x [0, depth]` in meters.
    pub arena_width: f64,
    pub arena_depth: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub waypoints: usize,
    /// Per-camera Gaussian jitter of the ground point a box is rendered at.
    pub foot_sigma: f64,
    /// Gaussian jitter of each box coordinate, pixels.
    pub pixel_sigma: f64,
    pub miss_rate: f64,
    /// Probability of one clutter detection per camera and frame.
    pub false_positive_rate: f64,
    pub embedding_dim: usize,
    /// Per-component Gaussian noise added to the identity prototype.
    pub embedding_sigma: f64,
    /// Probability per frame that a tracklet is cut.
    pub tracklet_break_rate: f64,
    /// Runs of one identity in one camera are cut at gaps longer than this.
    pub max_tracklet_gap: u32,
    pub id_switch_rate: f64,
    pub camera_height: f64,
    pub focal_length: f64,
    pub image_width: f64,
    pub image_height: f64,
    pub person_radius: f64,
    pub person_height: f64,
    pub visible_iou: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_pedestrians: 10,
            n_cameras: 4,
            n_frames: 200,
            fps: 10.0,
            arena_width: 12.0,
            arena_depth: 12.0,
            speed_min: 0.5,
            speed_max: 1.5,
            waypoints: 4,
            foot_sigma: 0.0,
            pixel_sigma: 0.0,
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            embedding_dim: 32,
            embedding_sigma: 0.05,
            tracklet_break_rate: 0.02,
            max_tracklet_gap: 5,
            id_switch_rate: 0.0,
            camera_height: 5.0,
            focal_length: 1500.0,
            image_width: 1920.0,
            image_height: 1080.0,
            person_radius: PersonCylinder::DEFAULT_RADIUS,
            person_height: PersonCylinder::DEFAULT_HEIGHT,
            visible_iou: 0.6,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        for (name, rate) in [
            ("miss_rate", self.miss_rate),
            ("false_positive_rate", self.false_positive_rate),
            ("tracklet_break_rate", self.tracklet_break_rate),
            ("id_switch_rate", self.id_switch_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return bad(&format!("{name} = {rate} outside [0, 1]"));
            }
        }
        for (name, sigma) in [
            ("foot_sigma", self.foot_sigma),
            ("pixel_sigma", self.pixel_sigma),
            ("embedding_sigma", self.embedding_sigma),
        ] {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return bad(&format!("{name} = {sigma} must be finite and >= 0"));
            }
        }
        for (name, v) in [
            ("fps", self.fps),
            ("arena_width", self.arena_width),
            ("arena_depth", self.arena_depth),
            ("speed_min", self.speed_min),
            ("camera_height", self.camera_height),
            ("focal_length", self.focal_length),
            ("image_width", self.image_width),
            ("image_height", self.image_height),
            ("person_radius", self.person_radius),
            ("person_height", self.person_height),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} = {v} must be positive"));
            }
        }
        if !(self.speed_max >= self.speed_min && self.speed_max.is_finite()) {
            return bad("speed_max must be >= speed_min");
        }
        if !(0.0..=1.0).contains(&self.visible_iou) {
            return bad("visible_iou outside [0, 1]");
        }
        if self.n_cameras == 0 || self.waypoints == 0 || self.embedding_dim == 0 {
            return bad("n_cameras, waypoints and embedding_dim must be positive");
        }
        Ok(())
    }

    fn center(&self) -> GroundPoint {
        GroundPoint::new(0.5 * self.arena_width, 0.5 * self.arena_depth)
    }

    fn random_point(&self, rng: &mut impl Rng) -> GroundPoint {
        GroundPoint::new(
            rng.random_range(0.0..=self.arena_width),
            rng.random_range(0.0..=self.arena_depth),
        )
    }
}

/// The consecutive pair of a tracklet across which the identity changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwitchPosition {
    pub tracklet_id: u64,
    pub before_det: u64,
    pub after_det: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub scene: SceneBundle,
    /// True ground position per frame, indexed by pedestrian.
    pub paths: Vec<Vec<GroundPoint>>,
    pub switches: Vec<SwitchPosition>,
}

// independent random streams so that e.g. changing noise keeps the paths
const STREAM_PATHS: u64 = 1;
const STREAM_APPEARANCE: u64 = 2;
const STREAM_DETECTIONS: u64 = 3;
const STREAM_TRACKLETS: u64 = 4;
const STREAM_SWITCHES: u64 = 5;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Cameras evenly spaced on a circle of radius 1.5x the arena diagonal,
/// looking at the arena center on the ground.
pub fn place_cameras(cfg: &SimConfig) -> Result<Vec<CameraModel>, SimError> {
    let c = cfg.center();
    let radius = 1.5 * cfg.arena_width.hypot(cfg.arena_depth);
    let k = Matrix3::new(
        cfg.focal_length,
        0.0,
        0.5 * cfg.image_width,
        0.0,
        cfg.focal_length,
        0.5 * cfg.image_height,
        0.0,
        0.0,
        1.0,
    );
    (0..cfg.n_cameras)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / cfg.n_cameras as f64;
            let center = Vector3::new(c.x + radius * a.cos(), c.y + radius * a.sin(), cfg.camera_height);
            CameraModel::look_at(i, k, center, c.to_world()).map_err(SimError::from)
        })
        .collect()
}

/// Walks the closed loop `start, w1, .., wn, start, ..` at constant speed,
/// one position per frame.
fn walk(start: GroundPoint, waypoints: &[GroundPoint], step: f64, n_frames: u32) -> Vec<GroundPoint> {
    let mut loop_pts = vec![start];
    loop_pts.extend_from_slice(waypoints);
    let perimeter: f64 = (0..loop_pts.len())
        .map(|i| loop_pts[i].distance(loop_pts[(i + 1) % loop_pts.len()]))
        .sum();
    let mut out = Vec::with_capacity(n_frames as usize);
    let mut pos = start;
    let mut target = 1 % loop_pts.len();
    for _ in 0..n_frames {
        out.push(pos);
        if perimeter <= 1e-12 {
            continue;
        }
        let mut left = step;
        loop {
            let goal = loop_pts[target];
            let d = pos.distance(goal);
            if d > left {
                let f = left / d;
                pos = GroundPoint::new(pos.x + f * (goal.x - pos.x), pos.y + f * (goal.y - pos.y));
                break;
            }
            left -= d;
            pos = goal;
            target = (target + 1) % loop_pts.len();
        }
    }
    out
}

fn unit_gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.iter().map(|x| (x / n) as f32).collect();
        }
    }
}

fn noisy_embedding(rng: &mut impl Rng, prototype: &[f32], sigma: f64) -> Vec<f32> {
    let mut v: Vec<f64> = prototype.iter().map(|&x| x as f64).collect();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("validated sigma");
        for x in &mut v {
            *x += normal.sample(rng);
        }
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| (x / n) as f32).collect()
}

fn inside(b: &BoundingBox, cfg: &SimConfig) -> bool {
    b.left >= 0.0 && b.top >= 0.0 && b.right() <= cfg.image_width && b.bottom() <= cfg.image_height
}

fn jitter(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("validated sigma").sample(rng)
    } else {
        0.0
    }
}

/// One pedestrian as seen by one camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderedPerson {
    pub pedestrian: usize,
    pub bbox: BoundingBox,
    pub distance: f64,
    /// Nearest pedestrian whose box overlaps this one enough to hide it.
    pub occluder: Option<usize>,
}

/// Noiseless boxes of the pedestrians fully inside the image, with occlusion:
/// among boxes overlapping with IoU at least `visible_iou`, only the one
/// nearest the camera is visible (ties to the lower index).
pub fn render_view(cfg: &SimConfig, cam: &CameraModel, positions: &[GroundPoint]) -> Vec<RenderedPerson> {
    let seen: Vec<(usize, BoundingBox, f64)> = positions
        .iter()
        .enumerate()
        .filter_map(|(p, &g)| {
            let b = person_box(cam, g, cfg.person_radius, cfg.person_height).ok()?;
            inside(&b, cfg).then(|| (p, b, cam.distance_to(g)))
        })
        .collect();
    seen.iter()
        .map(|&(p, b, dist)| {
            let occluder = seen
                .iter()
                .filter(|(q, c, _)| *q != p && b.iou(c) >= cfg.visible_iou)
                .min_by(|x, y| x.2.total_cmp(&y.2).then(x.0.cmp(&y.0)))
                .filter(|(q, _, d)| *d < dist || (*d == dist && *q < p))
                .map(|&(q, _, _)| q);
            RenderedPerson {
                pedestrian: p,
                bbox: b,
                distance: dist,
                occluder,
            }
        })
        .collect()
}

/// Generates a scene, deterministic in `cfg` including the seed.
pub fn simulate(cfg: &SimConfig) -> Result<Simulation, SimError> {
    cfg.validate()?;
    let cameras = place_cameras(cfg)?;

    let mut rng = rng_for(cfg.seed, STREAM_PATHS);
    let paths: Vec<Vec<GroundPoint>> = (0..cfg.n_pedestrians)
        .map(|_| {
            let start = cfg.random_point(&mut rng);
            let wps: Vec<GroundPoint> = (0..cfg.waypoints).map(|_| cfg.random_point(&mut rng)).collect();
            let speed = rng.random_range(cfg.speed_min..=cfg.speed_max);
            walk(start, &wps, speed / cfg.fps, cfg.n_frames)
        })
        .collect();

    let mut rng = rng_for(cfg.seed, STREAM_APPEARANCE);
    let prototypes: Vec<Vec<f32>> = (0..cfg.n_pedestrians)
        .map(|_| unit_gaussian(&mut rng, cfg.embedding_dim))
        .collect();

    let mut rng = rng_for(cfg.seed, STREAM_DETECTIONS);
    let mut detections = Vec::new();
    let mut identities = BTreeMap::new();
    let mut gt = Vec::new();
    let mut next_det = 0u64;
    for frame in 0..cfg.n_frames {
        for cam in &cameras {
            let positions: Vec<GroundPoint> = paths.iter().map(|path| path[frame as usize]).collect();
            let rendered = render_view(cfg, cam, &positions);
            for r in &rendered {
                let g = positions[r.pedestrian];
                gt.push(GtRecord {
                    identity: r.pedestrian as u64,
                    cam: cam.id,
                    frame,
                    left: r.bbox.left,
                    top: r.bbox.top,
                    width: r.bbox.width,
                    height: r.bbox.height,
                    gx: g.x,
                    gy: g.y,
                });
            }
            for r in &rendered {
                let (p, b) = (r.pedestrian, r.bbox);
                let missed = rng.random_bool(cfg.miss_rate);
                let g = paths[p][frame as usize];
                let g = GroundPoint::new(g.x + jitter(&mut rng, cfg.foot_sigma), g.y + jitter(&mut rng, cfg.foot_sigma));
                let mut bbox = if cfg.foot_sigma > 0.0 {
                    match person_box(cam, g, cfg.person_radius, cfg.person_height) {
                        Ok(x) => x,
                        Err(_) => continue,
                    }
                } else {
                    b
                };
                if cfg.pixel_sigma > 0.0 {
                    bbox = BoundingBox::new(
                        bbox.left + jitter(&mut rng, cfg.pixel_sigma),
                        bbox.top + jitter(&mut rng, cfg.pixel_sigma),
                        (bbox.width + jitter(&mut rng, cfg.pixel_sigma)).max(1.0),
                        (bbox.height + jitter(&mut rng, cfg.pixel_sigma)).max(1.0),
                    );
                }
                let emb = noisy_embedding(&mut rng, &prototypes[r.occluder.unwrap_or(p)], cfg.embedding_sigma);
                if missed {
                    continue;
                }
                detections.push(Detection::new(next_det, cam.id, frame, bbox, emb));
                identities.insert(next_det, Some(p as u64));
                next_det += 1;
            }
            if rng.random_bool(cfg.false_positive_rate) {
                let g = cfg.random_point(&mut rng);
                let emb = unit_gaussian(&mut rng, cfg.embedding_dim);
                if let Ok(b) = person_box(cam, g, cfg.person_radius, cfg.person_height) {
                    if inside(&b, cfg) {
                        detections.push(Detection::new(next_det, cam.id, frame, b, emb));
                        identities.insert(next_det, None);
                        next_det += 1;
                    }
                }
            }
        }
    }

    let tracklets = build_tracklets(cfg, &detections, &identities);
    let mut scene = SceneBundle::new(cameras, detections, None, Some(gt), Some(identities))?;
    let (tracklets, switches) = corrupt_tracklets(&scene, &tracklets, cfg.id_switch_rate, cfg.seed);
    scene.set_tracklets(tracklets)?;
    Ok(Simulation { scene, paths, switches })
}

/// [`simulate`] without the side outputs.
pub fn simulate_scene(cfg: &SimConfig) -> Result<SceneBundle, SimError> {
    simulate(cfg).map(|s| s.scene)
}

/// Per (identity, camera) runs of detections, cut at gaps longer than
/// `max_tracklet_gap` frames and at random breaks; clutter becomes singletons.
/// Ids follow `(cam, first frame, first detection)` order.
fn build_tracklets(cfg: &SimConfig, dets: &[Detection], ids: &BTreeMap<u64, Option<u64>>) -> Vec<Tracklet> {
    let mut rng = rng_for(cfg.seed, STREAM_TRACKLETS);
    let mut runs: BTreeMap<(usize, u64), Vec<&Detection>> = BTreeMap::new();
    let mut pieces: Vec<(usize, Vec<&Detection>)> = Vec::new();
    for d in dets {
        match ids[&d.det_id] {
            Some(p) => runs.entry((d.cam, p)).or_default().push(d),
            None => pieces.push((d.cam, vec![d])),
        }
    }
    for ((cam, _), run) in runs {
        let mut current: Vec<&Detection> = Vec::new();
        for d in run {
            if let Some(last) = current.last() {
                let broken = d.frame - last.frame > cfg.max_tracklet_gap || rng.random_bool(cfg.tracklet_break_rate);
                if broken {
                    pieces.push((cam, std::mem::take(&mut current)));
                }
            }
            current.push(d);
        }
        if !current.is_empty() {
            pieces.push((cam, current));
        }
    }
    pieces.sort_by_key(|(cam, ds)| (*cam, ds[0].frame, ds[0].det_id));
    pieces
        .into_iter()
        .enumerate()
        .map(|(i, (cam, ds))| Tracklet::new(i as u64, cam, ds.iter().map(|d| d.det_id).collect()))
        .collect()
}

/// Injects identity switches by swapping the tails of two same-camera,
/// time-overlapping tracklets of different identities at a random frame.
///
/// Candidate pairs are visited in id order; each identity-pure tracklet takes
/// part in at most one swap and each eligible pair is swapped with
/// probability `rate`. Both resulting tracklets keep their ids and each gets
/// one recorded switch.
pub fn corrupt_tracklets(
    scene: &SceneBundle,
    tracklets: &[Tracklet],
    rate: f64,
    seed: u64,
) -> (Vec<Tracklet>, Vec<SwitchPosition>) {
    let mut out = tracklets.to_vec();
    let mut switches = Vec::new();
    if rate <= 0.0 {
        return (out, switches);
    }
    let mut rng = rng_for(seed, STREAM_SWITCHES);
    let identity = |t: &Tracklet| -> Option<u64> {
        let first = scene.identity(*t.detections.first()?)?;
        t.detections
            .iter()
            .all(|&d| scene.identity(d) == Some(first))
            .then_some(first)
    };
    let ids: Vec<Option<u64>> = out.iter().map(identity).collect();
    let mut used = vec![false; out.len()];
    let mut order: Vec<usize> = (0..out.len()).collect();
    order.sort_by_key(|&i| out[i].id);
    for (x, &i) in order.iter().enumerate() {
        for &j in &order[x + 1..] {
            if used[i] {
                break;
            }
            if used[j] || out[i].cam != out[j].cam {
                continue;
            }
            let (Some(a), Some(b)) = (ids[i], ids[j]) else { continue };
            if a == b {
                continue;
            }
            let (ai, aj) = (out[i].time_range(scene), out[j].time_range(scene));
            // cut frame k: both need a detection before k and one at or after k
            let lo = ai.0.max(aj.0) + 1;
            let hi = ai.1.min(aj.1);
            if lo > hi || !rng.random_bool(rate) {
                continue;
            }
            let k = rng.random_range(lo..=hi);
            let split = |t: &Tracklet| t.detections.iter().position(|&d| scene.det(d).frame >= k).expect("k <= t_max");
            let (si, sj) = (split(&out[i]), split(&out[j]));
            let tail_i = out[i].detections.split_off(si);
            let tail_j = out[j].detections.split_off(sj);
            for (t, tail) in [(i, tail_j), (j, tail_i)] {
                let before = *out[t].detections.last().expect("head non-empty");
                switches.push(SwitchPosition {
                    tracklet_id: out[t].id,
                    before_det: before,
                    after_det: tail[0],
                });
                out[t].detections.extend(tail);
            }
            used[i] = true;
            used[j] = true;
        }
    }
    switches.sort_by_key(|s| s.tracklet_id);
    (out, switches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            n_pedestrians: 1,
            n_cameras: 1,
            n_frames: 30,
            ..SimConfig::default()
        }
    }

    #[test]
    fn noiseless_single_pedestrian_round_trip() {
        let sim = simulate(&small()).unwrap();
        assert_eq!(sim.scene.detections.len(), 30);
        for d in &sim.scene.detections {
            let truth = sim.paths[0][d.frame as usize];
            assert!(d.foot.distance(truth) < 1e-6, "frame {}", d.frame);
        }
    }

    #[test]
    fn full_miss_rate_gives_no_detections() {
        let sim = simulate(&SimConfig {
            miss_rate: 1.0,
            ..SimConfig::default()
        })
        .unwrap();
        assert!(sim.scene.detections.is_empty());
        assert!(!sim.scene.ground_truth.as_ref().unwrap().is_empty());
    }

    #[test]
    fn same_seed_same_scene() {
        let cfg = SimConfig {
            foot_sigma: 0.1,
            pixel_sigma: 1.0,
            miss_rate: 0.1,
            false_positive_rate: 0.1,
            id_switch_rate: 0.3,
            n_frames: 50,
            ..SimConfig::default()
        };
        assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
        let other = simulate(&SimConfig { seed: 1, ..cfg.clone() }).unwrap();
        assert_ne!(other.paths, simulate(&cfg).unwrap().paths);
    }

    #[test]
    fn paths_respect_max_speed() {
        let cfg = SimConfig::default();
        let sim = simulate(&cfg).unwrap();
        let limit = cfg.speed_max / cfg.fps + 1e-12;
        for path in &sim.paths {
            for w in path.windows(2) {
                assert!(w[0].distance(w[1]) <= limit);
            }
            for g in path {
                assert!((0.0..=cfg.arena_width).contains(&g.x) && (0.0..=cfg.arena_depth).contains(&g.y));
            }
        }
    }

    #[test]
    fn every_detection_has_identity_and_tracklet() {
        let cfg = SimConfig {
            false_positive_rate: 0.2,
            miss_rate: 0.2,
            n_frames: 60,
            ..SimConfig::default()
        };
        let scene = simulate_scene(&cfg).unwrap();
        let ids = scene.identities.as_ref().unwrap();
        let mut covered = std::collections::BTreeSet::new();
        for t in scene.tracklets.as_ref().unwrap() {
            covered.extend(t.detections.iter().copied());
        }
        for d in &scene.detections {
            assert!(ids.contains_key(&d.det_id));
            assert!(covered.contains(&d.det_id));
        }
        assert!(ids.values().any(Option::is_none));
    }

    #[test]
    fn cameras_see_the_whole_arena() {
        let cfg = SimConfig::default();
        let cams = place_cameras(&cfg).unwrap();
        for cam in &cams {
            for &(x, y) in &[(0.0, 0.0), (12.0, 0.0), (0.0, 12.0), (12.0, 12.0), (6.0, 6.0)] {
                let b = person_box(cam, GroundPoint::new(x, y), 0.3, 1.7).unwrap();
                assert!(inside(&b, &cfg));
            }
        }
    }

    #[test]
    fn nearer_pedestrian_occludes() {
        let cfg = SimConfig {
            n_cameras: 1,
            ..SimConfig::default()
        };
        let cam = &place_cameras(&cfg).unwrap()[0];
        // camera 0 sits on the +x side looking toward -x
        let near = GroundPoint::new(8.0, 6.0);
        let far = GroundPoint::new(7.8, 6.0);
        let aside = GroundPoint::new(8.0, 2.0);
        let r = render_view(&cfg, cam, &[far, near, aside]);
        assert!(r[0].bbox.iou(&r[1].bbox) >= 0.6);
        assert_eq!(r.iter().map(|x| x.occluder).collect::<Vec<_>>(), vec![Some(1), None, None]);
    }

    #[test]
    fn walk_stays_on_loop() {
        let pts = walk(
            GroundPoint::new(0.0, 0.0),
            &[GroundPoint::new(1.0, 0.0)],
            0.3,
            8,
        );
        let xs: Vec<f64> = pts.iter().map(|p| (p.x * 10.0).round() / 10.0).collect();
        assert_eq!(xs, vec![0.0, 0.3, 0.6, 0.9, 0.8, 0.5, 0.2, 0.1]);
    }

    #[test]
    fn corruption_rate_zero_is_identity() {
        let scene = simulate_scene(&SimConfig {
            n_frames: 40,
            ..SimConfig::default()
        })
        .unwrap();
        let ts = scene.tracklets.clone().unwrap();
        let (out, sw) = corrupt_tracklets(&scene, &ts, 0.0, 3);
        assert_eq!(out, ts);
        assert!(sw.is_empty());
    }

    #[test]
    fn switches_change_identity() {
        let cfg = SimConfig {
            n_frames: 80,
            id_switch_rate: 1.0,
            ..SimConfig::default()
        };
        let sim = simulate(&cfg).unwrap();
        assert!(!sim.switches.is_empty());
        let scene = &sim.scene;
        let by_id: BTreeMap<u64, &Tracklet> = scene.tracklets.as_ref().unwrap().iter().map(|t| (t.id, t)).collect();
        for s in &sim.switches {
            assert_ne!(scene.identity(s.before_det), scene.identity(s.after_det));
            let t = by_id[&s.tracklet_id];
            let i = t.detections.iter().position(|&d| d == s.before_det).unwrap();
            assert_eq!(t.detections[i + 1], s.after_det);
        }
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SimConfig {
                miss_rate: 1.5,
                ..SimConfig::default()
            },
            SimConfig {
                foot_sigma: -0.1,
                ..SimConfig::default()
            },
            SimConfig {
                n_cameras: 0,
                ..SimConfig::default()
            },
            SimConfig {
                speed_max: 0.1,
                ..SimConfig::default()
            },
        ] {
            assert!(matches!(simulate(&cfg), Err(SimError::InvalidConfig(_))));
        }
    }
}
