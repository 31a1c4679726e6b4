use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NEAR: f64 = 0.01;

fn default_near() -> f64 {
    DEFAULT_NEAR
}

/// Pinhole camera. Camera space is x right, y down, z forward; pixel
/// `(x, y)` has its center at `(x + 0.5, y + 0.5)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major 4x4 world-to-camera transform.
    pub world_to_camera: [f64; 16],
    #[serde(default = "default_near")]
    pub near: f64,
    #[serde(default)]
    pub view_id: usize,
    /// Excluded from training; used for novel-view evaluation.
    #[serde(default)]
    pub held_out: bool,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "view {}: focal lengths must be positive",
                self.view_id
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera(format!(
                "view {}: zero-sized image",
                self.view_id
            )));
        }
        if !(self.near > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "view {}: near plane must be positive",
                self.view_id
            )));
        }
        if self.world_to_camera.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera(format!(
                "view {}: non-finite extrinsic",
                self.view_id
            )));
        }
        let r = self.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-6 {
                    return Err(Error::InvalidCamera(format!(
                        "view {}: extrinsic rotation is not orthonormal",
                        self.view_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// The 3x3 rotation block `W`.
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let m = &self.world_to_camera;
        [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]]
    }

    pub fn translation(&self) -> [f64; 3] {
        let m = &self.world_to_camera;
        [m[3], m[7], m[11]]
    }

    pub fn to_camera_space(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotation();
        let t = self.translation();
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i];
        }
        out
    }

    /// World-space camera center.
    pub fn center(&self) -> [f64; 3] {
        let r = self.rotation();
        let t = self.translation();
        let mut c = [0.0; 3];
        for j in 0..3 {
            c[j] = -(0..3).map(|i| r[i][j] * t[i]).sum::<f64>();
        }
        c
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// World-to-camera matrix for a camera at `eye` looking at `target`,
/// with image-up roughly along `up`.
pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3]) -> [f64; 16] {
    let z = normalize(sub(target, eye));
    let x = normalize(cross(z, up));
    let y = cross(z, x);
    let rows = [x, y, z];
    let mut m = [0.0; 16];
    for (i, r) in rows.iter().enumerate() {
        m[i * 4..i * 4 + 3].copy_from_slice(r);
        m[i * 4 + 3] = -(r[0] * eye[0] + r[1] * eye[1] + r[2] * eye[2]);
    }
    m[15] = 1.0;
    m
}
