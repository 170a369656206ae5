//! Pinhole camera model: projection, camera-center recovery and back-projection
//! onto the ground plane `z = 0`, plus the cylinder box model used to score
//! 3D positions against observed bounding boxes.

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative threshold on `|det(M)|` below which a camera is rejected.
pub const SINGULAR_EPS: f64 = 1e-12;
/// Minimum `|z|` of the back-projected ray direction.
pub const RAY_EPS: f64 = 1e-9;
/// Default number of rim samples per circle in [`project_cylinder`].
pub const DEFAULT_RIM_SAMPLES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("camera matrix M = K R is singular (|det| = {det:e})")]
    SingularMatrix { det: f64 },
    #[error("point coincides with the camera center")]
    PointAtCamera,
    #[error("point lies behind the camera (depth {depth:e})")]
    PointBehindCamera { depth: f64 },
    #[error("back-projected ray is parallel to the ground plane")]
    RayParallelToGround,
    #[error("back-projected ray meets the ground behind the camera")]
    GroundBehindCamera,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// A pixel location; homogeneous coordinate is implicitly 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
}

impl ImagePoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// A point on the ground plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPoint {
    pub x: f64,
    pub y: f64,
}

impl GroundPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn to_world(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, 0.0)
    }

    pub fn distance(self, other: GroundPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned image box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn new(left: f64, top: f64, width: f64, height: f64) -> Self {
        Self {
            left,
            top,
            width,
            height,
        }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn is_valid(&self) -> bool {
        self.width > 0.0
            && self.height > 0.0
            && self.left.is_finite()
            && self.top.is_finite()
            && self.width.is_finite()
            && self.height.is_finite()
    }

    pub fn right(&self) -> f64 {
        self.left + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.top + self.height
    }

    pub fn area(&self) -> f64 {
        self.width.max(0.0) * self.height.max(0.0)
    }

    /// Center of the bottom edge.
    pub fn foot_pixel(&self) -> ImagePoint {
        ImagePoint::new(self.left + 0.5 * self.width, self.top + self.height)
    }

    pub fn contains(&self, p: ImagePoint) -> bool {
        p.u >= self.left && p.u <= self.right() && p.v >= self.top && p.v <= self.bottom()
    }

    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        other.left >= self.left
            && other.top >= self.top
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    /// Intersection over union; 0 when either box has zero area.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let iw = (self.right().min(other.right()) - self.left.max(other.left)).max(0.0);
        let ih = (self.bottom().min(other.bottom()) - self.top.max(other.top)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Vertical cylinder approximating a standing person.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersonCylinder {
    pub center: GroundPoint,
    pub radius: f64,
    pub height: f64,
}

impl PersonCylinder {
    pub const DEFAULT_RADIUS: f64 = 0.3;
    pub const DEFAULT_HEIGHT: f64 = 1.7;

    pub fn new(center: GroundPoint, radius: f64, height: f64) -> Self {
        Self {
            center,
            radius,
            height,
        }
    }

    pub fn standard(center: GroundPoint) -> Self {
        Self::new(center, Self::DEFAULT_RADIUS, Self::DEFAULT_HEIGHT)
    }
}

/// Calibrated pinhole camera `P = K [R | t] = [M | p4]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub id: usize,
    pub k: Matrix3<f64>,
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
    pub p: Matrix3x4<f64>,
    pub m: Matrix3<f64>,
    pub p4: Vector3<f64>,
    pub center: Vector3<f64>,
    m_inv: Matrix3<f64>,
    det_sign: f64,
}

impl CameraModel {
    pub fn new(
        id: usize,
        k: Matrix3<f64>,
        r: Matrix3<f64>,
        t: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        if k.iter().chain(r.iter()).chain(t.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("camera parameters"));
        }
        let m = k * r;
        let p4 = k * t;
        let mut p = Matrix3x4::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(&m);
        p.set_column(3, &p4);

        let det = m.determinant();
        let scale = m.amax().max(f64::MIN_POSITIVE);
        if !det.is_finite() || det.abs() <= SINGULAR_EPS * scale.powi(3) {
            return Err(GeometryError::SingularMatrix { det });
        }
        let m_inv = m
            .try_inverse()
            .ok_or(GeometryError::SingularMatrix { det })?;
        let center = -(m_inv * p4);
        Ok(Self {
            id,
            k,
            r,
            t,
            p,
            m,
            p4,
            center,
            m_inv,
            det_sign: det.signum(),
        })
    }

    /// Camera at `center` looking at `target`, x to the right and y down in the image.
    pub fn look_at(
        id: usize,
        k: Matrix3<f64>,
        center: Vector3<f64>,
        target: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let forward = (target - center).normalize();
        let mut up = Vector3::z();
        if forward.cross(&up).norm() < 1e-9 {
            up = Vector3::y();
        }
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * center);
        Self::new(id, k, r, t)
    }

    pub fn m_inverse(&self) -> &Matrix3<f64> {
        &self.m_inv
    }

    /// Signed depth of a world point; positive in front of the camera.
    pub fn depth(&self, x: &Vector3<f64>) -> f64 {
        let w = (self.p * Vector4::new(x.x, x.y, x.z, 1.0)).z;
        self.det_sign * w
    }

    pub fn project(&self, x: &Vector3<f64>) -> Result<ImagePoint, GeometryError> {
        project_point(self, x)
    }

    pub fn backproject(&self, x: ImagePoint) -> Result<GroundPoint, GeometryError> {
        ground_backproject(self, x)
    }

    /// Euclidean distance from a ground point to the camera center.
    pub fn distance_to(&self, g: GroundPoint) -> f64 {
        (g.to_world() - self.center).norm()
    }
}

/// Builds a camera from intrinsics `K`, rotation `R` and translation `t`.
pub fn build_camera(
    k: Matrix3<f64>,
    r: Matrix3<f64>,
    t: Vector3<f64>,
) -> Result<CameraModel, GeometryError> {
    CameraModel::new(0, k, r, t)
}

/// `x = P X`, dehomogenized. Points at or behind the camera are rejected.
pub fn project_point(cam: &CameraModel, x: &Vector3<f64>) -> Result<ImagePoint, GeometryError> {
    let offset = x - cam.center;
    if offset.norm() <= 1e-12 * (1.0 + cam.center.norm()) {
        return Err(GeometryError::PointAtCamera);
    }
    let h = cam.p * Vector4::new(x.x, x.y, x.z, 1.0);
    let depth = cam.det_sign * h.z;
    if depth <= 0.0 {
        return Err(GeometryError::PointBehindCamera { depth });
    }
    Ok(ImagePoint::new(h.x / h.z, h.y / h.z))
}

/// Intersects the viewing ray of `x` with the ground plane.
pub fn ground_backproject(cam: &CameraModel, x: ImagePoint) -> Result<GroundPoint, GeometryError> {
    if !x.u.is_finite() || !x.v.is_finite() {
        return Err(GeometryError::NonFinite("image point"));
    }
    let dir = cam.m_inv * Vector3::new(x.u, x.v, 1.0);
    if dir.z.abs() <= RAY_EPS {
        return Err(GeometryError::RayParallelToGround);
    }
    let scale = -cam.center.z / dir.z;
    // scale < 0 means the ray hits z = 0 behind the image plane
    if scale * cam.det_sign < 0.0 {
        return Err(GeometryError::GroundBehindCamera);
    }
    let g = dir * scale + cam.center;
    Ok(GroundPoint::new(g.x, g.y))
}

/// Ground point under the center of the box's bottom edge.
pub fn foot_point(cam: &CameraModel, b: &BoundingBox) -> Result<GroundPoint, GeometryError> {
    ground_backproject(cam, b.foot_pixel())
}

/// Bounding box of the projected rim polygons at the base and top of the cylinder.
///
/// The rim polygons circumscribe the circles, so the box contains the
/// projection of every point on the cylinder surface.
pub fn project_cylinder(
    cam: &CameraModel,
    cyl: &PersonCylinder,
) -> Result<BoundingBox, GeometryError> {
    project_cylinder_sampled(cam, cyl, DEFAULT_RIM_SAMPLES)
}

pub fn project_cylinder_sampled(
    cam: &CameraModel,
    cyl: &PersonCylinder,
    samples: usize,
) -> Result<BoundingBox, GeometryError> {
    let samples = samples.max(3);
    let rim = cyl.radius / (std::f64::consts::PI / samples as f64).cos();
    let (mut u0, mut v0) = (f64::INFINITY, f64::INFINITY);
    let (mut u1, mut v1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for level in [0.0, cyl.height] {
        for s in 0..samples {
            let a = 2.0 * std::f64::consts::PI * s as f64 / samples as f64;
            let p = Vector3::new(
                cyl.center.x + rim * a.cos(),
                cyl.center.y + rim * a.sin(),
                level,
            );
            let ip = project_point(cam, &p)?;
            u0 = u0.min(ip.u);
            v0 = v0.min(ip.v);
            u1 = u1.max(ip.u);
            v1 = v1.max(ip.v);
        }
    }
    Ok(BoundingBox::from_corners(u0, v0, u1, v1))
}

/// Box of a person standing at `ground`: the cylinder's projected extent, shifted
/// so that the bottom-edge center falls on the projection of `ground`.
///
/// This is the box model shared by the simulator and 3D interpolation; it keeps
/// [`foot_point`] an exact inverse for noiseless boxes.
pub fn person_box(
    cam: &CameraModel,
    ground: GroundPoint,
    radius: f64,
    height: f64,
) -> Result<BoundingBox, GeometryError> {
    let raw = project_cylinder(cam, &PersonCylinder::new(ground, radius, height))?;
    let foot = project_point(cam, &ground.to_world())?;
    Ok(BoundingBox::new(
        foot.u - 0.5 * raw.width,
        foot.v - raw.height,
        raw.width,
        raw.height,
    ))
}
