//! Scene data model and the on-disk formats.
//!
//! Layout of a scene directory:
//!
//! | file                | format                                                   |
//! |---------------------|----------------------------------------------------------|
//! | `calibration.json`  | `[{"id", "K": [9], "R": [9], "t": [3]}]`, row-major      |
//! | `detections.csv`    | `det_id,cam,frame,left,top,width,height`                 |
//! | `embeddings.bin`    | `LTRK`, u32 count, u32 dim, count*dim f32 (LE, det_id order) |
//! | `tracklets.csv`     | `tracklet_id,det_id` (optional)                          |
//! | `gt.csv`            | `identity,cam,frame,left,top,width,height,gx,gy` (optional) |
//! | `det_identity.csv`  | `det_id,identity`, identity empty for clutter (optional) |

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{foot_point, BoundingBox, CameraModel, GeometryError, GroundPoint};
use crate::tracklets::Tracklet;
use crate::trajectories::{Trajectory, TrajectoryPoint};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"LTRK";

pub const CALIBRATION_FILE: &str = "calibration.json";
pub const DETECTIONS_FILE: &str = "detections.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const TRACKLETS_FILE: &str = "tracklets.csv";
pub const GT_FILE: &str = "gt.csv";
pub const IDENTITY_FILE: &str = "det_identity.csv";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("tracklet {tracklet} references missing detection {det_id}")]
    DanglingReference { tracklet: u64, det_id: u64 },
    #[error("embedding row {row} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("{count} embeddings for {detections} detections")]
    EmbeddingCount { count: usize, detections: usize },
    #[error("detection {det_id} references unknown camera {cam}")]
    UnknownCamera { det_id: u64, cam: usize },
    #[error("duplicate {what} id {id}")]
    DuplicateId { what: &'static str, id: u64 },
    #[error("detection {det_id}: {source}")]
    Geometry {
        det_id: u64,
        #[source]
        source: GeometryError,
    },
    #[error("camera {cam}: {source}")]
    Camera {
        cam: usize,
        #[source]
        source: GeometryError,
    },
    #[error("detection {det_id}: invalid bounding box")]
    InvalidBox { det_id: u64 },
    #[error("tracklet {tracklet}: {reason}")]
    InvalidTracklet { tracklet: u64, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, err: csv::Error) -> IoError {
    let line = err.position().map_or(0, |p| p.line());
    match err.into_kind() {
        csv::ErrorKind::Io(source) => IoError::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => IoError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// One bounding box observed by one camera in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub det_id: u64,
    pub cam: usize,
    pub frame: u32,
    pub bbox: BoundingBox,
    /// Unit-norm appearance embedding.
    pub embedding: Vec<f32>,
    /// Ground-plane foot point, filled in by [`SceneBundle::new`].
    pub foot: GroundPoint,
}

impl Detection {
    pub fn new(det_id: u64, cam: usize, frame: u32, bbox: BoundingBox, embedding: Vec<f32>) -> Self {
        Self {
            det_id,
            cam,
            frame,
            bbox,
            embedding,
            foot: GroundPoint::new(f64::NAN, f64::NAN),
        }
    }
}

/// Cosine similarity of two unit embeddings, accumulated in f64.
pub fn similarity(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Scales to unit norm unless already unit within 1e-6; zero vectors are left alone.
pub fn normalize_embedding(v: &mut [f32]) {
    let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if norm > 0.0 && (norm - 1.0).abs() > 1e-6 {
        for x in v.iter_mut() {
            *x = (*x as f64 / norm) as f32;
        }
    }
}

/// One annotated ground-truth box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtRecord {
    pub identity: u64,
    pub cam: usize,
    pub frame: u32,
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    pub gx: f64,
    pub gy: f64,
}

impl GtRecord {
    pub fn ground(&self) -> GroundPoint {
        GroundPoint::new(self.gx, self.gy)
    }
}

/// Cameras, detections and the optional tracklets and annotations of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub cameras: Vec<CameraModel>,
    /// Sorted by `(frame, cam, det_id)`.
    pub detections: Vec<Detection>,
    pub tracklets: Option<Vec<Tracklet>>,
    pub ground_truth: Option<Vec<GtRecord>>,
    /// Ground-truth identity per detection; `None` marks clutter.
    pub identities: Option<BTreeMap<u64, Option<u64>>>,
    index: HashMap<u64, usize>,
    frames: Vec<(u32, Range<usize>)>,
}

impl SceneBundle {
    pub fn new(
        mut cameras: Vec<CameraModel>,
        mut detections: Vec<Detection>,
        tracklets: Option<Vec<Tracklet>>,
        ground_truth: Option<Vec<GtRecord>>,
        identities: Option<BTreeMap<u64, Option<u64>>>,
    ) -> Result<Self, IoError> {
        cameras.sort_by_key(|c| c.id);
        for w in cameras.windows(2) {
            if w[0].id == w[1].id {
                return Err(IoError::DuplicateId {
                    what: "camera",
                    id: w[0].id as u64,
                });
            }
        }

        detections.sort_by_key(|d| d.det_id);
        let dim = detections.first().map_or(0, |d| d.embedding.len());
        for (row, d) in detections.iter_mut().enumerate() {
            if d.embedding.len() != dim {
                return Err(IoError::DimensionMismatch {
                    row,
                    expected: dim,
                    got: d.embedding.len(),
                });
            }
            if !d.bbox.is_valid() {
                return Err(IoError::InvalidBox { det_id: d.det_id });
            }
            let cam = cameras
                .binary_search_by_key(&d.cam, |c| c.id)
                .map(|i| &cameras[i])
                .map_err(|_| IoError::UnknownCamera {
                    det_id: d.det_id,
                    cam: d.cam,
                })?;
            normalize_embedding(&mut d.embedding);
            d.foot = foot_point(cam, &d.bbox).map_err(|source| IoError::Geometry {
                det_id: d.det_id,
                source,
            })?;
        }
        for w in detections.windows(2) {
            if w[0].det_id == w[1].det_id {
                return Err(IoError::DuplicateId {
                    what: "detection",
                    id: w[0].det_id,
                });
            }
        }

        detections.sort_by_key(|d| (d.frame, d.cam, d.det_id));
        let index: HashMap<u64, usize> = detections
            .iter()
            .enumerate()
            .map(|(i, d)| (d.det_id, i))
            .collect();
        let mut frames: Vec<(u32, Range<usize>)> = Vec::new();
        for (i, d) in detections.iter().enumerate() {
            match frames.last_mut() {
                Some((f, range)) if *f == d.frame => range.end = i + 1,
                _ => frames.push((d.frame, i..i + 1)),
            }
        }

        let mut scene = Self {
            cameras,
            detections,
            tracklets: None,
            ground_truth,
            identities,
            index,
            frames,
        };
        if let Some(ts) = tracklets {
            scene.set_tracklets(ts)?;
        }
        Ok(scene)
    }

    /// Validates and installs tracklets, ordering each one by frame.
    pub fn set_tracklets(&mut self, mut tracklets: Vec<Tracklet>) -> Result<(), IoError> {
        tracklets.sort_by_key(|t| t.id);
        for w in tracklets.windows(2) {
            if w[0].id == w[1].id {
                return Err(IoError::DuplicateId {
                    what: "tracklet",
                    id: w[0].id,
                });
            }
        }
        for t in &mut tracklets {
            self.validate_tracklet(t)?;
        }
        self.tracklets = Some(tracklets);
        Ok(())
    }

    fn validate_tracklet(&self, t: &mut Tracklet) -> Result<(), IoError> {
        if t.detections.is_empty() {
            return Err(IoError::InvalidTracklet {
                tracklet: t.id,
                reason: "empty".into(),
            });
        }
        for &d in &t.detections {
            if !self.index.contains_key(&d) {
                return Err(IoError::DanglingReference {
                    tracklet: t.id,
                    det_id: d,
                });
            }
        }
        t.detections.sort_by_key(|&d| self.detection(d).map(|x| x.frame));
        t.cam = self.detection(t.detections[0]).map(|d| d.cam).unwrap_or(t.cam);
        for w in t.detections.windows(2) {
            let (a, b) = (&self.detections[self.index[&w[0]]], &self.detections[self.index[&w[1]]]);
            if a.frame == b.frame {
                return Err(IoError::InvalidTracklet {
                    tracklet: t.id,
                    reason: format!("two detections in frame {}", a.frame),
                });
            }
            if a.cam != b.cam {
                return Err(IoError::InvalidTracklet {
                    tracklet: t.id,
                    reason: format!("mixes cameras {} and {}", a.cam, b.cam),
                });
            }
        }
        Ok(())
    }

    pub fn detection(&self, det_id: u64) -> Option<&Detection> {
        self.index.get(&det_id).map(|&i| &self.detections[i])
    }

    /// Panicking lookup for ids already validated against this scene.
    pub fn det(&self, det_id: u64) -> &Detection {
        &self.detections[self.index[&det_id]]
    }

    pub fn camera(&self, id: usize) -> Option<&CameraModel> {
        self.cameras
            .binary_search_by_key(&id, |c| c.id)
            .ok()
            .map(|i| &self.cameras[i])
    }

    pub fn embedding_dim(&self) -> usize {
        self.detections.first().map_or(0, |d| d.embedding.len())
    }

    /// Detections grouped by frame, in frame order.
    pub fn frames(&self) -> impl Iterator<Item = (u32, &[Detection])> + '_ {
        self.frames
            .iter()
            .map(move |(f, r)| (*f, &self.detections[r.clone()]))
    }

    pub fn frame(&self, frame: u32) -> &[Detection] {
        match self.frames.binary_search_by_key(&frame, |(f, _)| *f) {
            Ok(i) => &self.detections[self.frames[i].1.clone()],
            Err(_) => &[],
        }
    }

    pub fn identity(&self, det_id: u64) -> Option<u64> {
        self.identities
            .as_ref()
            .and_then(|m| m.get(&det_id).copied().flatten())
    }
}

#[derive(Serialize, Deserialize)]
struct CalibrationEntry {
    id: usize,
    #[serde(rename = "K")]
    k: Vec<f64>,
    #[serde(rename = "R")]
    r: Vec<f64>,
    t: Vec<f64>,
}

fn mat3(path: &Path, name: &str, v: &[f64]) -> Result<Matrix3<f64>, IoError> {
    if v.len() != 9 {
        return Err(IoError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("{name} needs 9 values, got {}", v.len()),
        });
    }
    Ok(Matrix3::from_row_slice(v))
}

pub fn read_calibration(path: &Path) -> Result<Vec<CameraModel>, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let entries: Vec<CalibrationEntry> =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| IoError::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
    entries
        .iter()
        .map(|e| {
            let k = mat3(path, "K", &e.k)?;
            let r = mat3(path, "R", &e.r)?;
            if e.t.len() != 3 {
                return Err(IoError::Parse {
                    path: path.to_path_buf(),
                    line: 0,
                    message: format!("t needs 3 values, got {}", e.t.len()),
                });
            }
            CameraModel::new(e.id, k, r, Vector3::from_column_slice(&e.t))
                .map_err(|source| IoError::Camera { cam: e.id, source })
        })
        .collect()
}

pub fn write_calibration(cameras: &[CameraModel], path: &Path) -> Result<(), IoError> {
    let row_major = |m: &Matrix3<f64>| -> Vec<f64> {
        (0..3).flat_map(|r| (0..3).map(move |c| m[(r, c)])).collect()
    };
    let entries: Vec<CalibrationEntry> = cameras
        .iter()
        .map(|c| CalibrationEntry {
            id: c.id,
            k: row_major(&c.k),
            r: row_major(&c.r),
            t: c.t.iter().copied().collect(),
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&entries).expect("calibration serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

#[derive(Serialize, Deserialize)]
struct DetectionRow {
    det_id: u64,
    cam: usize,
    frame: u32,
    left: f64,
    top: f64,
    width: f64,
    height: f64,
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_err(path, e)))
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<(), IoError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(file));
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_embeddings(path: &Path) -> Result<(usize, Vec<Vec<f32>>), IoError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    let parse = |message: &str| IoError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: message.to_string(),
    };
    if bytes.len() < 12 || &bytes[0..4] != EMBEDDING_MAGIC {
        return Err(parse("missing LTRK header"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    let mut rows = Vec::with_capacity(count);
    for row in 0..count {
        let start = row * dim * 4;
        let available = body.len().saturating_sub(start) / 4;
        if available < dim {
            return Err(IoError::DimensionMismatch {
                row,
                expected: dim,
                got: available,
            });
        }
        let v = body[start..start + dim * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        rows.push(v);
    }
    if body.len() != count * dim * 4 {
        return Err(parse("trailing bytes after embeddings"));
    }
    Ok((dim, rows))
}

/// Writes embeddings in det_id order.
pub fn write_embeddings(detections: &[Detection], path: &Path) -> Result<(), IoError> {
    let mut sorted: Vec<&Detection> = detections.iter().collect();
    sorted.sort_by_key(|d| d.det_id);
    let dim = sorted.first().map_or(0, |d| d.embedding.len());
    let mut out = Vec::with_capacity(12 + sorted.len() * dim * 4);
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&(sorted.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for d in sorted {
        for x in &d.embedding {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(io_err(path))
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>, IoError> {
    let rows: Vec<DetectionRow> = read_csv(path)?;
    Ok(rows
        .into_iter()
        .map(|r| {
            Detection::new(
                r.det_id,
                r.cam,
                r.frame,
                BoundingBox::new(r.left, r.top, r.width, r.height),
                Vec::new(),
            )
        })
        .collect())
}

pub fn write_detections(detections: &[Detection], path: &Path) -> Result<(), IoError> {
    let mut sorted: Vec<&Detection> = detections.iter().collect();
    sorted.sort_by_key(|d| (d.frame, d.cam, d.det_id));
    write_csv(
        path,
        &["det_id", "cam", "frame", "left", "top", "width", "height"],
        sorted.into_iter().map(|d| DetectionRow {
            det_id: d.det_id,
            cam: d.cam,
            frame: d.frame,
            left: d.bbox.left,
            top: d.bbox.top,
            width: d.bbox.width,
            height: d.bbox.height,
        }),
    )
}

#[derive(Serialize, Deserialize)]
struct TrackletRow {
    tracklet_id: u64,
    det_id: u64,
}

/// Reads `tracklet_id,det_id` pairs; detections keep file order until validated.
pub fn read_tracklets(path: &Path) -> Result<Vec<Tracklet>, IoError> {
    let rows: Vec<TrackletRow> = read_csv(path)?;
    let mut grouped: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for r in rows {
        grouped.entry(r.tracklet_id).or_default().push(r.det_id);
    }
    Ok(grouped
        .into_iter()
        .map(|(id, dets)| Tracklet::new(id, 0, dets))
        .collect())
}

pub fn write_tracklets(tracklets: &[Tracklet], path: &Path) -> Result<(), IoError> {
    let mut sorted: Vec<&Tracklet> = tracklets.iter().collect();
    sorted.sort_by_key(|t| t.id);
    write_csv(
        path,
        &["tracklet_id", "det_id"],
        sorted.into_iter().flat_map(|t| {
            t.detections.iter().map(move |&d| TrackletRow {
                tracklet_id: t.id,
                det_id: d,
            })
        }),
    )
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GtRecord>, IoError> {
    read_csv(path)
}

pub fn write_ground_truth(gt: &[GtRecord], path: &Path) -> Result<(), IoError> {
    let mut sorted = gt.to_vec();
    sorted.sort_by_key(|g| (g.frame, g.cam, g.identity));
    write_csv(
        path,
        &["identity", "cam", "frame", "left", "top", "width", "height", "gx", "gy"],
        sorted,
    )
}

#[derive(Serialize, Deserialize)]
struct IdentityRow {
    det_id: u64,
    identity: Option<u64>,
}

pub fn read_identities(path: &Path) -> Result<BTreeMap<u64, Option<u64>>, IoError> {
    let rows: Vec<IdentityRow> = read_csv(path)?;
    Ok(rows.into_iter().map(|r| (r.det_id, r.identity)).collect())
}

pub fn write_identities(ids: &BTreeMap<u64, Option<u64>>, path: &Path) -> Result<(), IoError> {
    write_csv(
        path,
        &["det_id", "identity"],
        ids.iter().map(|(&det_id, &identity)| IdentityRow { det_id, identity }),
    )
}

/// Loads a scene from explicit paths: embeddings are L2-normalized and foot points computed.
pub fn load_scene(
    calib_path: &Path,
    detections_path: &Path,
    embeddings_path: &Path,
    tracklets_path: Option<&Path>,
) -> Result<SceneBundle, IoError> {
    let cameras = read_calibration(calib_path)?;
    let mut detections = read_detections(detections_path)?;
    let (_, embeddings) = read_embeddings(embeddings_path)?;
    if embeddings.len() != detections.len() {
        return Err(IoError::EmbeddingCount {
            count: embeddings.len(),
            detections: detections.len(),
        });
    }
    detections.sort_by_key(|d| d.det_id);
    for (d, e) in detections.iter_mut().zip(embeddings) {
        d.embedding = e;
    }
    let tracklets = tracklets_path.map(read_tracklets).transpose()?;
    SceneBundle::new(cameras, detections, tracklets, None, None)
}

/// Loads a scene directory; tracklets, ground truth and identity labels are optional.
pub fn load_scene_dir(dir: &Path) -> Result<SceneBundle, IoError> {
    let optional = |name: &str| {
        let p = dir.join(name);
        p.exists().then_some(p)
    };
    let tracklets = optional(TRACKLETS_FILE);
    let mut scene = load_scene(
        &dir.join(CALIBRATION_FILE),
        &dir.join(DETECTIONS_FILE),
        &dir.join(EMBEDDINGS_FILE),
        tracklets.as_deref(),
    )?;
    if let Some(p) = optional(GT_FILE) {
        scene.ground_truth = Some(read_ground_truth(&p)?);
    }
    if let Some(p) = optional(IDENTITY_FILE) {
        scene.identities = Some(read_identities(&p)?);
    }
    Ok(scene)
}

pub fn write_scene_dir(scene: &SceneBundle, dir: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_calibration(&scene.cameras, &dir.join(CALIBRATION_FILE))?;
    write_detections(&scene.detections, &dir.join(DETECTIONS_FILE))?;
    write_embeddings(&scene.detections, &dir.join(EMBEDDINGS_FILE))?;
    if let Some(t) = &scene.tracklets {
        write_tracklets(t, &dir.join(TRACKLETS_FILE))?;
    }
    if let Some(gt) = &scene.ground_truth {
        write_ground_truth(gt, &dir.join(GT_FILE))?;
    }
    if let Some(ids) = &scene.identities {
        write_identities(ids, &dir.join(IDENTITY_FILE))?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRow {
    track_id: u64,
    frame: u32,
    x: f64,
    y: f64,
    z: f64,
    cam_list: String,
}

/// Writes `track_id,frame,x,y,z,cam_list` rows sorted by `(track_id, frame)`.
pub fn write_trajectories(trajectories: &[Trajectory], path: &Path) -> Result<(), IoError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_trajectories_to(trajectories, BufWriter::new(file)).map_err(|e| csv_err(path, e))
}

pub fn write_trajectories_to<W: Write>(trajectories: &[Trajectory], out: W) -> Result<(), csv::Error> {
    let mut rows: Vec<TrajectoryRow> = trajectories
        .iter()
        .flat_map(|t| {
            t.points.iter().map(move |p| TrajectoryRow {
                track_id: t.track_id,
                frame: p.frame,
                x: p.position.x,
                y: p.position.y,
                z: p.position.z,
                cam_list: p
                    .cams
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
            })
        })
        .collect();
    rows.sort_by_key(|r| (r.track_id, r.frame));
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["track_id", "frame", "x", "y", "z", "cam_list"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>, IoError> {
    let rows: Vec<TrajectoryRow> = read_csv(path)?;
    let mut grouped: BTreeMap<u64, Vec<TrajectoryPoint>> = BTreeMap::new();
    for (i, r) in rows.into_iter().enumerate() {
        let cams = if r.cam_list.is_empty() {
            Vec::new()
        } else {
            r.cam_list
                .split(';')
                .map(|c| c.parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| IoError::Parse {
                    path: path.to_path_buf(),
                    line: i as u64 + 2,
                    message: format!("cam_list: {e}"),
                })?
        };
        grouped.entry(r.track_id).or_default().push(TrajectoryPoint {
            frame: r.frame,
            position: Vector3::new(r.x, r.y, r.z),
            cams,
            det_ids: Vec::new(),
        });
    }
    Ok(grouped
        .into_iter()
        .map(|(track_id, mut points)| {
            points.sort_by_key(|p| p.frame);
            Trajectory { track_id, points }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn camera(id: usize) -> CameraModel {
        CameraModel::look_at(
            id,
            Matrix3::new(1000.0, 0.0, 960.0, 0.0, 1000.0, 540.0, 0.0, 0.0, 1.0),
            Vector3::new(-10.0 + id as f64, -10.0, 5.0),
            Vector3::zeros(),
        )
        .unwrap()
    }

    fn det(id: u64, cam: usize, frame: u32, emb: Vec<f32>) -> Detection {
        Detection::new(id, cam, frame, BoundingBox::new(900.0, 400.0, 40.0, 120.0), emb)
    }

    #[test]
    fn embeddings_are_normalized() {
        let scene = SceneBundle::new(
            vec![camera(0)],
            vec![det(1, 0, 0, vec![3.0, 4.0])],
            None,
            None,
            None,
        )
        .unwrap();
        let e = &scene.det(1).embedding;
        assert!((similarity(e, e) - 1.0).abs() < 1e-6);
        assert!(scene.det(1).foot.x.is_finite());
    }

    #[test]
    fn dimension_mismatch_names_row() {
        let err = SceneBundle::new(
            vec![camera(0)],
            vec![
                det(1, 0, 0, vec![1.0, 0.0]),
                det(2, 0, 1, vec![1.0, 0.0]),
                det(3, 0, 2, vec![1.0, 0.0, 0.0]),
            ],
            None,
            None,
            None,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            IoError::DimensionMismatch { row: 2, expected: 2, got: 3 }
        ));
    }

    #[test]
    fn dangling_tracklet_reference() {
        let err = SceneBundle::new(
            vec![camera(0)],
            vec![det(1, 0, 0, vec![1.0])],
            Some(vec![Tracklet::new(7, 0, vec![1, 99])]),
            None,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, IoError::DanglingReference { tracklet: 7, det_id: 99 }));
    }

    #[test]
    fn unknown_camera() {
        let err = SceneBundle::new(vec![camera(0)], vec![det(1, 3, 0, vec![1.0])], None, None, None)
            .unwrap_err();
        assert!(matches!(err, IoError::UnknownCamera { det_id: 1, cam: 3 }));
    }

    #[test]
    fn shuffled_rows_give_same_bundle() {
        let dets = vec![
            det(4, 1, 1, vec![1.0, 0.0]),
            det(1, 0, 0, vec![0.0, 1.0]),
            det(3, 0, 1, vec![1.0, 0.0]),
            det(2, 1, 0, vec![0.6, 0.8]),
        ];
        let mut rev = dets.clone();
        rev.reverse();
        let a = SceneBundle::new(vec![camera(0), camera(1)], dets, None, None, None).unwrap();
        let b = SceneBundle::new(vec![camera(1), camera(0)], rev, None, None, None).unwrap();
        assert_eq!(a, b);
        let order: Vec<u64> = a.detections.iter().map(|d| d.det_id).collect();
        assert_eq!(order, vec![1, 2, 3, 4]);
        assert_eq!(a.frame(1).len(), 2);
        assert!(a.frame(9).is_empty());
    }

    #[test]
    fn empty_detection_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let scene = SceneBundle::new(vec![camera(0)], vec![], None, None, None).unwrap();
        write_scene_dir(&scene, dir.path()).unwrap();
        let loaded = load_scene_dir(dir.path()).unwrap();
        assert!(loaded.detections.is_empty());
        assert_eq!(loaded.cameras.len(), 1);
    }

    #[test]
    fn truncated_embeddings_name_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(EMBEDDING_MAGIC);
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        for x in [1.0f32, 0.0, 0.0, 1.0, 1.0] {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_embeddings(&path),
            Err(IoError::DimensionMismatch { row: 2, expected: 2, got: 1 })
        ));
    }

    #[test]
    fn parse_error_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(
            &path,
            "det_id,cam,frame,left,top,width,height\n1,0,0,1,2,3,4\n2,0,zero,1,2,3,4\n",
        )
        .unwrap();
        match read_detections(&path) {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn traj(id: u64, frames: &[u32]) -> Trajectory {
        Trajectory {
            track_id: id,
            points: frames
                .iter()
                .map(|&f| TrajectoryPoint {
                    frame: f,
                    position: Vector3::new(f as f64 * 0.1, -1.0 / 3.0, 0.0),
                    cams: vec![0, 2],
                    det_ids: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn trajectory_csv_shapes() {
        let mut buf = Vec::new();
        write_trajectories_to(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "track_id,frame,x,y,z,cam_list\n");

        let mut buf = Vec::new();
        write_trajectories_to(&[traj(5, &[3])], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.ends_with("5,3,0.30000000000000004,-0.3333333333333333,0.0,0;2\n"));
    }

    #[test]
    fn trajectory_write_load_write_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_trajectories(&[traj(2, &[5, 1, 3]), traj(1, &[0, 9])], &a).unwrap();
        let loaded = read_trajectories(&a).unwrap();
        write_trajectories(&loaded, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(loaded[0].track_id, 1);
        assert_eq!(loaded[1].points.iter().map(|p| p.frame).collect::<Vec<_>>(), vec![1, 3, 5]);
    }
}
