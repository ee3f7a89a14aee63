//! Back-projection of detection centroids onto the road plane.
//!
//! Conventions: the world frame is z-up; a camera looks along +z of its own
//! frame with +x to the right and +y down the image. [`CameraPose`] stores the
//! world-from-camera rotation. Images are assumed rectified.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::MarkingLabel;

/// Denominator threshold below which a ray is treated as parallel to the plane.
pub const PARALLEL_EPS: f64 = 1e-12;

const UNIT_NORM_TOL: f64 = 1e-9;

/// Pinhole intrinsics of a rectified camera, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(Error::invalid(format!(
                "cx={} outside [0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::invalid(format!(
                "cy={} outside [0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }

    /// Projects a point given in camera coordinates. Returns `None` for points
    /// at or behind the image plane or outside the image.
    pub fn project(&self, p_cam: &Vector3<f64>) -> Option<(f64, f64)> {
        if p_cam.z <= 0.0 {
            return None;
        }
        let u = self.fx * p_cam.x / p_cam.z + self.cx;
        let v = self.fy * p_cam.y / p_cam.z + self.cy;
        self.contains(u, v).then_some((u, v))
    }
}

/// Camera pose in the world frame (world-from-camera).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl CameraPose {
    /// Builds a pose from a position and a `[w, x, y, z]` quaternion, which
    /// must already have unit norm.
    pub fn from_wxyz(position: [f64; 3], q: [f64; 4]) -> Result<Self> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::invalid(format!(
                "orientation quaternion norm {norm} is not 1"
            )));
        }
        if position.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("camera position is not finite"));
        }
        Ok(Self {
            position: Vector3::from(position),
            orientation: UnitQuaternion::new_unchecked(quat),
        })
    }

    pub fn identity_at(position: Vector3<f64>) -> Self {
        Self {
            position,
            orientation: UnitQuaternion::identity(),
        }
    }

    /// Forward-facing vehicle camera: optical axis along heading `yaw`
    /// (radians from world +x towards +y), tilted `pitch_down` radians below
    /// the horizon, image x to the vehicle's right.
    pub fn forward_facing(position: Vector3<f64>, yaw: f64, pitch_down: f64) -> Self {
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = pitch_down.sin_cos();
        let forward = Vector3::new(cy * cp, sy * cp, -sp);
        let right = Vector3::new(sy, -cy, 0.0);
        let down = forward.cross(&right);
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[right, down, forward]));
        Self {
            position,
            orientation: UnitQuaternion::from_rotation_matrix(&rot),
        }
    }

    /// Quaternion as `[w, x, y, z]`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn world_to_camera(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.orientation
            .inverse_transform_vector(&(p_world - self.position))
    }
}

/// Road-surface model: points `p` with `normal · p = offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl GroundPlane {
    pub fn new(normal: Vector3<f64>, offset: f64) -> Result<Self> {
        let norm = normal.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::invalid(format!("plane normal norm {norm} is not 1")));
        }
        if !offset.is_finite() {
            return Err(Error::invalid("plane offset is not finite"));
        }
        Ok(Self { normal, offset })
    }

    /// Signed distance of `p` from the plane along the normal.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

impl Default for GroundPlane {
    /// The world `z = 0` plane.
    fn default() -> Self {
        Self {
            normal: Vector3::z(),
            offset: 0.0,
        }
    }
}

/// One detector output: a labelled bounding-box centroid in one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_id: u64,
    pub timestamp: f64,
    pub label: MarkingLabel,
    pub centroid: (f64, f64),
}

/// A detection localized on the ground plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation3D {
    pub frame_id: u64,
    pub label: MarkingLabel,
    pub position: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    /// Unit direction in the world frame.
    pub direction: Vector3<f64>,
}

/// World-frame viewing ray through pixel `(u, v)`.
pub fn pixel_ray(intr: &CameraIntrinsics, pose: &CameraPose, pixel: (f64, f64)) -> Result<Ray> {
    let (u, v) = pixel;
    if !intr.contains(u, v) {
        return Err(Error::invalid(format!(
            "pixel ({u}, {v}) outside {}x{} image",
            intr.width, intr.height
        )));
    }
    let dir_cam = Vector3::new((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
    let direction = (pose.orientation * dir_cam).normalize();
    Ok(Ray {
        origin: pose.position,
        direction,
    })
}

/// Intersects a ray with the plane, keeping only hits strictly in front of the
/// ray origin.
pub fn intersect_ground(ray: &Ray, plane: &GroundPlane) -> Option<Vector3<f64>> {
    let denom = plane.normal.dot(&ray.direction);
    if denom.abs() < PARALLEL_EPS {
        return None;
    }
    let t = (plane.offset - plane.normal.dot(&ray.origin)) / denom;
    if !(t.is_finite() && t > 0.0) {
        return None;
    }
    let mut point = ray.origin + ray.direction * t;
    // Snap the rounding residue back onto the plane.
    let residue = plane.signed_distance(&point);
    point -= plane.normal * residue;
    Some(point)
}

/// Lifts a detection centroid onto the ground plane.
///
/// Returns [`Error::NoIntersection`] for centroids at or above the horizon;
/// callers drop those detections and count them.
pub fn localize_detection(
    det: &Detection,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
    plane: &GroundPlane,
) -> Result<Observation3D> {
    let ray = pixel_ray(intr, pose, det.centroid)?;
    let position = intersect_ground(&ray, plane).ok_or(Error::NoIntersection)?;
    Ok(Observation3D {
        frame_id: det.frame_id,
        label: det.label.clone(),
        position,
    })
}
