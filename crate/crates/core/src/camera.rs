//! Pinhole camera rig.
//!
//! Frames:
//! - ego frame: vehicle-fixed, meters; boxes, voxels and the BEV plane live here.
//! - camera frame: +Z forward (optical axis), +X right, +Y down.
//! - image plane: `u` grows to the right, `v` grows downward, pixel `(0, 0)` is
//!   the top-left sample. A point is in frame when `0 <= u < width` and
//!   `0 <= v < height`.
//!
//! Extrinsics map ego to camera: `p_cam = R * p_ego + t`. Projection is the
//! intrinsic matrix applied to `p_cam`, followed by division by depth `p_cam.z`.
//! There is no lens distortion.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::boxes::Box3D;
use crate::error::{BevError, Result};

const ORTHO_TOL: f64 = 1e-9;

/// Pinhole intrinsics at full image resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate().map_err(|reason| BevError::InvalidCamera { index: 0, reason })?;
        Ok(k)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite {
            return Err("intrinsics must be finite".into());
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy));
        }
        if self.width == 0 || self.height == 0 {
            return Err("image size must be non-zero".into());
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            ));
        }
        Ok(())
    }

    /// Intrinsics for a feature map of `width x height` derived from this image.
    ///
    /// Focal lengths and principal point scale with the per-axis size ratio.
    pub fn rescaled(&self, width: u32, height: u32) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    #[inline]
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }
}

/// Rigid ego-to-camera transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Extrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let e = Self {
            rotation,
            translation,
        };
        e.validate().map_err(|reason| BevError::InvalidCamera { index: 0, reason })?;
        Ok(e)
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Camera mounted at `position` (ego frame) whose optical axis points along
    /// ego yaw `yaw` and is tilted downward by `pitch` radians. Ego frame is
    /// x forward, y left, z up.
    pub fn looking_at_yaw(position: Vector3<f64>, yaw: f64, pitch: f64) -> Self {
        // Camera axes expressed in the ego frame.
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let forward = Vector3::new(cy * cp, sy * cp, -sp);
        let right = Vector3::new(sy, -cy, 0.0);
        let down = forward.cross(&right);
        let cam_to_ego = Matrix3::from_columns(&[right, down, forward]);
        let rotation = cam_to_ego.transpose();
        Self {
            rotation,
            translation: -(rotation * position),
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.rotation.iter().chain(self.translation.iter()).any(|v| !v.is_finite()) {
            return Err("extrinsics must be finite".into());
        }
        let gram = self.rotation.transpose() * self.rotation;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        if ortho_err > ORTHO_TOL {
            return Err(format!("rotation is not orthonormal (max |RᵀR - I| = {ortho_err:e})"));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(format!("rotation determinant is {det}, expected 1"));
        }
        Ok(())
    }

    #[inline]
    pub fn to_camera(&self, p_ego: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p_ego + self.translation
    }

    /// Camera center in the ego frame.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Pre-composes this ego-to-camera transform with the inverse of `(r, t)`,
    /// i.e. the extrinsics seen from an ego frame moved by `p' = r p + t`.
    pub fn reframed(&self, r: &Rotation3<f64>, t: &Vector3<f64>) -> Self {
        let r_inv = r.inverse();
        let rotation = self.rotation * r_inv.matrix();
        Self {
            rotation,
            translation: self.translation - rotation * t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
}

/// Projected pixel with its positive depth along the optical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Camera {
    /// Projection through the pinhole without a frame test. `None` behind the camera.
    #[inline]
    pub fn project_unbounded(&self, p_ego: &Vector3<f64>) -> Option<Projection> {
        let pc = self.extrinsics.to_camera(p_ego);
        let k = &self.intrinsics;
        let depth = pc.z;
        if depth <= 0.0 {
            return None;
        }
        let hu = k.fx * pc.x + k.cx * pc.z;
        let hv = k.fy * pc.y + k.cy * pc.z;
        Some(Projection {
            u: hu / depth,
            v: hv / depth,
            depth,
        })
    }

    #[inline]
    pub fn project(&self, p_ego: &Vector3<f64>) -> Option<Projection> {
        self.project_unbounded(p_ego)
            .filter(|p| self.intrinsics.contains(p.u, p.v))
    }

    /// Ego-frame ray through pixel `(u, v)`; no bounds test.
    pub fn ray_unbounded(&self, u: f64, v: f64) -> (Vector3<f64>, Vector3<f64>) {
        let k = &self.intrinsics;
        let dir_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0).normalize();
        let dir = (self.extrinsics.rotation.transpose() * dir_cam).normalize();
        (self.extrinsics.center(), dir)
    }

    /// Same camera with intrinsics rescaled to a feature map resolution.
    pub fn at_resolution(&self, width: u32, height: u32) -> Self {
        Self {
            intrinsics: self.intrinsics.rescaled(width, height),
            extrinsics: self.extrinsics,
        }
    }
}

/// Ray through a pixel, in the ego frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelRay {
    pub camera_index: usize,
    pub u: f64,
    pub v: f64,
    pub origin: Vector3<f64>,
    /// Unit length.
    pub direction: Vector3<f64>,
}

impl PixelRay {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }

    /// Closest point on the ray (t >= 0) to `p`.
    pub fn closest_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let t = (p - self.origin).dot(&self.direction).max(0.0);
        self.at(t)
    }
}

/// Axis-aligned pixel rectangle, inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelRect {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl PixelRect {
    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.u_min && u <= self.u_max && v >= self.v_min && v <= self.v_max
    }
}

/// Ordered set of calibrated cameras sharing one ego frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    cameras: Vec<Camera>,
}

/// Depth of the near plane used when clipping box edges that cross behind a camera.
const NEAR_PLANE: f64 = 1e-3;

impl CameraRig {
    pub fn new(cameras: Vec<Camera>) -> Result<Self> {
        if cameras.is_empty() {
            return Err(BevError::InvalidArgument("camera rig needs at least one camera".into()));
        }
        for (index, cam) in cameras.iter().enumerate() {
            cam.intrinsics
                .validate()
                .and_then(|_| cam.extrinsics.validate())
                .map_err(|reason| BevError::InvalidCamera { index, reason })?;
        }
        Ok(Self { cameras })
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn camera(&self, index: usize) -> Result<&Camera> {
        self.cameras.get(index).ok_or(BevError::CameraIndex {
            index,
            count: self.cameras.len(),
        })
    }

    /// Rig with every camera's extrinsics replaced through `f`. Callers are
    /// responsible for keeping rotations orthonormal.
    pub fn map_extrinsics(&self, mut f: impl FnMut(usize, &Extrinsics) -> Extrinsics) -> Self {
        Self {
            cameras: self
                .cameras
                .iter()
                .enumerate()
                .map(|(i, c)| Camera {
                    intrinsics: c.intrinsics,
                    extrinsics: f(i, &c.extrinsics),
                })
                .collect(),
        }
    }

    /// Pixel and depth of an ego-frame point, or `None` when it is behind the
    /// camera or outside the image.
    pub fn project_point(&self, camera_index: usize, p_ego: &Vector3<f64>) -> Result<Option<Projection>> {
        Ok(self.camera(camera_index)?.project(p_ego))
    }

    pub fn pixel_to_ray(&self, camera_index: usize, u: f64, v: f64) -> Result<PixelRay> {
        let cam = self.camera(camera_index)?;
        let k = &cam.intrinsics;
        if !k.contains(u, v) {
            return Err(BevError::PixelOutOfBounds {
                u,
                v,
                width: k.width,
                height: k.height,
            });
        }
        let (origin, direction) = cam.ray_unbounded(u, v);
        Ok(PixelRay {
            camera_index,
            u,
            v,
            origin,
            direction,
        })
    }

    /// Image-space bounding rectangles of 3D boxes, clamped to
    /// `[0, width-1] x [0, height-1]`. Returns `(rect, index into boxes)`.
    ///
    /// Box edges that cross the camera plane are clipped at a small positive
    /// depth so corners behind the camera never fold into the rectangle.
    pub fn boxes_3d_to_2d(&self, camera_index: usize, boxes: &[Box3D]) -> Result<Vec<(PixelRect, usize)>> {
        let cam = self.camera(camera_index)?;
        let k = &cam.intrinsics;
        let (w_max, h_max) = ((k.width - 1) as f64, (k.height - 1) as f64);
        let mut out = Vec::new();
        for (index, b) in boxes.iter().enumerate() {
            let corners: Vec<Vector3<f64>> = b
                .corners()
                .iter()
                .map(|c| cam.extrinsics.to_camera(c))
                .collect();
            if corners.iter().all(|c| c.z <= 0.0) {
                continue;
            }
            let mut pts: Vec<Vector3<f64>> = corners.iter().filter(|c| c.z >= NEAR_PLANE).copied().collect();
            for &(a, b) in Box3D::EDGES.iter() {
                let (pa, pb) = (corners[a], corners[b]);
                if (pa.z - NEAR_PLANE) * (pb.z - NEAR_PLANE) < 0.0 {
                    let s = (NEAR_PLANE - pa.z) / (pb.z - pa.z);
                    pts.push(pa + (pb - pa) * s);
                }
            }
            if pts.is_empty() {
                continue;
            }
            let mut rect = PixelRect {
                u_min: f64::INFINITY,
                v_min: f64::INFINITY,
                u_max: f64::NEG_INFINITY,
                v_max: f64::NEG_INFINITY,
            };
            for p in &pts {
                let u = (k.fx * p.x + k.cx * p.z) / p.z;
                let v = (k.fy * p.y + k.cy * p.z) / p.z;
                rect.u_min = rect.u_min.min(u);
                rect.u_max = rect.u_max.max(u);
                rect.v_min = rect.v_min.min(v);
                rect.v_max = rect.v_max.max(v);
            }
            if rect.u_max < 0.0 || rect.v_max < 0.0 || rect.u_min > w_max || rect.v_min > h_max {
                continue;
            }
            rect.u_min = rect.u_min.clamp(0.0, w_max);
            rect.u_max = rect.u_max.clamp(0.0, w_max);
            rect.v_min = rect.v_min.clamp(0.0, h_max);
            rect.v_max = rect.v_max.clamp(0.0, h_max);
            out.push((rect, index));
        }
        Ok(out)
    }
}
