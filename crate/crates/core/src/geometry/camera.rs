//! Pinhole camera model. Integer pixel coordinates sit on pixel centers;
//! pixel (0, 0) is the top-left pixel, x goes right, y goes down, and the
//! camera looks along +z.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vector3<f64>,
    /// Unit length.
    pub dir: Vector3<f64>,
}

impl Intrinsics {
    /// Symmetric camera from a horizontal field of view (radians).
    pub fn from_fov(width: usize, height: usize, fov_x: f64) -> Intrinsics {
        let fx = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Intrinsics {
            fx,
            fy: fx,
            cx: 0.5 * (width as f64 - 1.0),
            cy: 0.5 * (height as f64 - 1.0),
            width,
            height,
        }
    }

    /// Camera-frame unit direction through pixel `(x, y)`.
    pub fn pixel_dir(&self, x: f64, y: f64) -> Vector3<f64> {
        Vector3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0).normalize()
    }

    /// Pixel coordinates of a camera-frame point; `None` when the point is
    /// not strictly in front of the camera (never silently NaN).
    pub fn project(&self, x: &Vector3<f64>) -> Option<(f64, f64)> {
        if x.z <= 0.0 || !x.z.is_finite() {
            return None;
        }
        Some((self.fx * x.x / x.z + self.cx, self.fy * x.y / x.z + self.cy))
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= 0.0 && py >= 0.0 && px <= (self.width - 1) as f64 && py <= (self.height - 1) as f64
    }

    /// Intrinsics of the same camera at `1/factor` resolution, preserving
    /// pixel-center alignment: fine pixel `p` maps to `(p + 0.5)/f - 0.5`.
    pub fn downscaled(&self, factor: usize) -> Intrinsics {
        let f = factor as f64;
        Intrinsics {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: (self.cx + 0.5) / f - 0.5,
            cy: (self.cy + 0.5) / f - 0.5,
            width: self.width / factor,
            height: self.height / factor,
        }
    }

    /// Map a pixel of the downscaled camera back to this camera's coordinates.
    pub fn upscale_pixel(&self, factor: usize, x: f64, y: f64) -> (f64, f64) {
        let f = factor as f64;
        ((x + 0.5) * f - 0.5, (y + 0.5) * f - 0.5)
    }
}
