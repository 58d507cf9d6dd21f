//! Pinhole cameras, depth maps and the small amount of 3-vector math the
//! rest of the crate needs.
//!
//! Conventions: camera space looks down +z, x right, y down (OpenCV). A pixel
//! `(px, py)` covers `[px, px + 1) x [py, py + 1)` in continuous image
//! coordinates; deprojection goes through the pixel centre. Depth is the
//! camera-space z coordinate, not the distance along the ray.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = [f64; 3];

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

pub fn distance(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

pub fn distance_sq(a: Vec3, b: Vec3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("focal lengths must be positive (fx={fx}, fy={fy})")]
    Focal { fx: f64, fy: f64 },
    #[error("image size must be non-zero ({width}x{height})")]
    Size { width: u32, height: u32 },
    #[error("pose is not a rigid transform: {0}")]
    Pose(String),
}

/// Pinhole camera with a world-to-camera rigid transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Row-major 4x4 world-to-camera transform.
    pub world_to_camera: [[f64; 4]; 4],
}

/// Continuous projection of a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Camera {
    /// Camera at `eye` looking at `target`; `up` fixes the roll.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fx: f64, fy: f64, width: u32, height: u32) -> Self {
        let forward = normalize(sub(target, eye));
        // image y points down, so the camera's y axis is -up projected
        let right = normalize(cross(forward, up));
        let down = cross(forward, right);
        let rot = [right, down, forward];
        let t = [-dot(rot[0], eye), -dot(rot[1], eye), -dot(rot[2], eye)];
        let mut m = [[0.0; 4]; 4];
        for r in 0..3 {
            m[r][..3].copy_from_slice(&rot[r]);
            m[r][3] = t[r];
        }
        m[3][3] = 1.0;
        Self {
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            world_to_camera: m,
        }
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::Focal {
                fx: self.fx,
                fy: self.fy,
            });
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::Size {
                width: self.width,
                height: self.height,
            });
        }
        let m = &self.world_to_camera;
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(CameraError::Pose("last row must be [0, 0, 0, 1]".into()));
        }
        let r = self.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot(r[i], r[j]) - want).abs() > 1e-6 {
                    return Err(CameraError::Pose("rotation is not orthonormal".into()));
                }
            }
        }
        if (dot(cross(r[0], r[1]), r[2]) - 1.0).abs() > 1e-6 {
            return Err(CameraError::Pose("rotation determinant is not +1".into()));
        }
        Ok(())
    }

    pub fn rotation(&self) -> [Vec3; 3] {
        let m = &self.world_to_camera;
        [
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ]
    }

    fn translation(&self) -> Vec3 {
        let m = &self.world_to_camera;
        [m[0][3], m[1][3], m[2][3]]
    }

    /// Camera centre in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vec3 {
        let r = self.rotation();
        let t = self.translation();
        let mut c = [0.0; 3];
        for (i, ci) in c.iter_mut().enumerate() {
            *ci = -(r[0][i] * t[0] + r[1][i] * t[1] + r[2][i] * t[2]);
        }
        c
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let r = self.rotation();
        add([dot(r[0], p), dot(r[1], p), dot(r[2], p)], self.translation())
    }

    pub fn to_world(&self, pc: Vec3) -> Vec3 {
        let r = self.rotation();
        let q = sub(pc, self.translation());
        let mut w = [0.0; 3];
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = r[0][i] * q[0] + r[1][i] * q[1] + r[2][i] * q[2];
        }
        w
    }

    /// `None` for points at or behind the image plane.
    pub fn project(&self, p: Vec3) -> Option<Projection> {
        let pc = self.to_camera(p);
        if pc[2] <= 1e-9 {
            return None;
        }
        Some(Projection {
            u: self.fx * pc[0] / pc[2] + self.cx,
            v: self.fy * pc[1] / pc[2] + self.cy,
            depth: pc[2],
        })
    }

    /// Integer pixel containing the projection, if it lands on the image.
    pub fn pixel_of(&self, p: Vec3) -> Option<(u32, u32, f64)> {
        let pr = self.project(p)?;
        let (px, py) = (pr.u.floor(), pr.v.floor());
        if px < 0.0 || py < 0.0 || px >= self.width as f64 || py >= self.height as f64 {
            return None;
        }
        Some((px as u32, py as u32, pr.depth))
    }

    /// World point at camera depth `depth` through the centre of pixel `(px, py)`.
    pub fn deproject(&self, px: u32, py: u32, depth: f64) -> Vec3 {
        let x = (px as f64 + 0.5 - self.cx) / self.fx * depth;
        let y = (py as f64 + 0.5 - self.cy) / self.fy * depth;
        self.to_world([x, y, depth])
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Per-pixel camera depth, row-major, `+inf` where nothing was hit.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl DepthMap {
    pub const EMPTY: f32 = f32::INFINITY;

    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![Self::EMPTY; width as usize * height as usize],
        }
    }

    pub fn get(&self, pixel: usize) -> Option<f32> {
        let d = self.data[pixel];
        (d.is_finite() && d > 0.0).then_some(d)
    }

    pub fn coords(&self, pixel: usize) -> (u32, u32) {
        ((pixel % self.width as usize) as u32, (pixel / self.width as usize) as u32)
    }

    pub fn valid_pixels(&self) -> usize {
        self.data.iter().filter(|d| d.is_finite()).count()
    }
}

/// Largest distance between any two camera centres.
pub fn camera_extent(cameras: &[Camera]) -> f64 {
    let centers: Vec<Vec3> = cameras.iter().map(Camera::center).collect();
    let mut best = 0.0f64;
    for (i, a) in centers.iter().enumerate() {
        for b in &centers[i + 1..] {
            best = best.max(distance(*a, *b));
        }
    }
    best
}
