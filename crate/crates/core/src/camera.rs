//! Pinhole camera model, rays and point projection.
//!
//! Cameras look along `-z` in their own frame with `+x` to the right and `+y`
//! up; image `v` grows downward. Ray directions are scaled so that their
//! camera-frame `-z` component is exactly one, which makes the ray parameter
//! `t` equal to axial depth.

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("invalid intrinsics: {0}")]
    Intrinsics(String),
    #[error("cam_to_world rotation is not a proper rotation (orthonormality error {ortho:e}, det {det})")]
    NotRigid { ortho: f64, det: f64 },
    #[error("pixel ({u}, {v}) outside image of {width}x{height}")]
    PixelOutOfRange {
        u: f64,
        v: f64,
        width: u32,
        height: u32,
    },
    #[error("ray bounds must satisfy 0 < near < far (got near={near}, far={far})")]
    Bounds { near: f64, far: f64 },
    #[error("zero-norm quaternion")]
    ZeroQuaternion,
}

/// A ray `r(t) = origin + t * direction` restricted to `[near, far]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

/// Result of projecting a world point into a camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    /// Axial depth, `-z` in the camera frame.
    pub depth: f64,
    pub in_front: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRecord", into = "CameraRecord")]
pub struct Camera {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    rotation: Matrix3<f64>,
    center: Vector3<f64>,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        cam_to_world: &Matrix4<f64>,
    ) -> Result<Self, CameraError> {
        let rotation: Matrix3<f64> = cam_to_world.fixed_view::<3, 3>(0, 0).into_owned();
        let center: Vector3<f64> = cam_to_world.fixed_view::<3, 1>(0, 3).into_owned();
        Self::from_parts(fx, fy, cx, cy, width, height, rotation, center)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        rotation: Matrix3<f64>,
        center: Vector3<f64>,
    ) -> Result<Self, CameraError> {
        if width == 0 || height == 0 {
            return Err(CameraError::Intrinsics(format!(
                "image size must be positive, got {width}x{height}"
            )));
        }
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(CameraError::Intrinsics(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if !(0.0..f64::from(width)).contains(&cx) || !(0.0..f64::from(height)).contains(&cy) {
            return Err(CameraError::Intrinsics(format!(
                "principal point ({cx}, {cy}) outside image"
            )));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        let det = rotation.determinant();
        if !(ortho < ORTHO_TOL) || !(det > 0.0) || !center.iter().all(|c| c.is_finite()) {
            return Err(CameraError::NotRigid { ortho, det });
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            center,
        })
    }

    /// Camera at `eye` looking at `target`, with `up` roughly the image's up direction.
    pub fn look_at(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self, CameraError> {
        let back = (eye - target).normalize();
        let right = up.cross(&back);
        if right.norm() < 1e-12 {
            return Err(CameraError::Intrinsics(
                "up vector parallel to view direction".into(),
            ));
        }
        let right = right.normalize();
        let true_up = back.cross(&right);
        let rotation = Matrix3::from_columns(&[right, true_up, back]);
        Self::from_parts(fx, fy, cx, cy, width, height, rotation, eye)
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }
    pub fn center(&self) -> &Vector3<f64> {
        &self.center
    }

    pub fn cam_to_world(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.center);
        m
    }

    /// Ray through continuous pixel coordinates `(u, v)`; integer coordinates
    /// address pixel corners.
    pub fn make_ray(&self, u: f64, v: f64, near: f64, far: f64) -> Result<Ray, CameraError> {
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        if !(0.0..=w).contains(&u) || !(0.0..=h).contains(&v) {
            return Err(CameraError::PixelOutOfRange {
                u,
                v,
                width: self.width,
                height: self.height,
            });
        }
        if !(near > 0.0 && near < far && far.is_finite()) {
            return Err(CameraError::Bounds { near, far });
        }
        Ok(self.ray_unchecked(u, v, near, far))
    }

    /// Same as [`Camera::make_ray`] without range checks; callers guarantee validity.
    pub(crate) fn ray_unchecked(&self, u: f64, v: f64, near: f64, far: f64) -> Ray {
        let local = Vector3::new((u - self.cx) / self.fx, -(v - self.cy) / self.fy, -1.0);
        Ray {
            origin: self.center,
            direction: self.rotation * local,
            near,
            far,
        }
    }

    pub fn world_to_camera(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (x - self.center)
    }

    pub fn project_point_depth(&self, x: &Vector3<f64>) -> Projection {
        let p = self.world_to_camera(x);
        let depth = -p.z;
        Projection {
            u: self.cx + self.fx * p.x / depth,
            v: self.cy - self.fy * p.y / depth,
            depth,
            in_front: depth > 0.0,
        }
    }

    pub fn contains_pixel(&self, u: f64, v: f64) -> bool {
        (0.0..=f64::from(self.width)).contains(&u) && (0.0..=f64::from(self.height)).contains(&v)
    }

    /// The same camera with its image resolution and intrinsics scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, CameraError> {
        let width = (f64::from(self.width) * factor).round().max(1.0) as u32;
        let height = (f64::from(self.height) * factor).round().max(1.0) as u32;
        Self::from_parts(
            self.fx * factor,
            self.fy * factor,
            self.cx * factor,
            self.cy * factor,
            width,
            height,
            self.rotation,
            self.center,
        )
    }

    pub fn center_point(&self) -> Point3<f64> {
        Point3::from(self.center)
    }
}

/// Rotation matrix of the quaternion `(w, x, y, z)`, normalized first.
pub fn quat_to_rotation(q: [f64; 4]) -> Result<Matrix3<f64>, CameraError> {
    let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(CameraError::ZeroQuaternion);
    }
    let [w, x, y, z] = q.map(|c| c / norm);
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Unit quaternion `(w, x, y, z)` with non-negative `w` for a rotation matrix.
pub fn rotation_to_quat(r: &Matrix3<f64>) -> [f64; 4] {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
    let mut out = [q.w, q.i, q.j, q.k];
    if out[0] < 0.0 {
        out = out.map(|c| -c);
    }
    out
}

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    /// Row-major 4x4.
    cam_to_world: Vec<f64>,
}

impl TryFrom<CameraRecord> for Camera {
    type Error = CameraError;

    fn try_from(r: CameraRecord) -> Result<Self, Self::Error> {
        if r.cam_to_world.len() != 16 {
            return Err(CameraError::Intrinsics(format!(
                "cam_to_world needs 16 values, got {}",
                r.cam_to_world.len()
            )));
        }
        let m = Matrix4::from_row_slice(&r.cam_to_world);
        Camera::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height, &m)
    }
}

impl From<Camera> for CameraRecord {
    fn from(c: Camera) -> Self {
        let m = c.cam_to_world();
        let mut cam_to_world = Vec::with_capacity(16);
        for i in 0..4 {
            for j in 0..4 {
                cam_to_world.push(m[(i, j)]);
            }
        }
        CameraRecord {
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            cam_to_world,
        }
    }
}
