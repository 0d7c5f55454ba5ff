use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera looking horizontally along world +Y from height `height`
/// above the plane z = 0. World X points right, Z up; image u points right,
/// v down. Pixel (row i, column j) has its centre at (j + 0.5, i + 0.5).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub height: f64,
}

impl CameraModel {
    /// The camera every synthetic scene is rendered with, scaled to a square
    /// image of `size` pixels. The horizon sits near the top edge so the ground
    /// fills almost the whole frame.
    pub fn synthetic(size: usize) -> Self {
        let s = size as f64;
        CameraModel {
            focal: 0.5 * s,
            cx: 0.5 * s,
            cy: 0.0625 * s,
            height: 3.0,
        }
    }

    /// Projects a world point; `None` when it is not in front of the camera.
    pub fn project(&self, x: f64, y: f64, z: f64) -> Option<(f64, f64)> {
        (y > 0.0).then(|| {
            (
                self.cx + self.focal * x / y,
                self.cy + self.focal * (self.height - z) / y,
            )
        })
    }

    /// Image position of ground point (x, y).
    pub fn ground_to_pixel(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        self.project(x, y, 0.0)
    }

    /// Intersects the ray through image point (u, v) with the ground plane.
    pub fn pixel_to_ground(&self, u: f64, v: f64) -> Result<(f64, f64)> {
        let dv = v - self.cy;
        if dv <= 0.0 || !dv.is_finite() {
            return Err(Error::Horizon { v, cy: self.cy });
        }
        let k = self.height / dv;
        Ok(((u - self.cx) * k, self.focal * k))
    }

    /// Ground point under the centre of pixel (row, col).
    pub fn pixel_center_to_ground(&self, row: usize, col: usize) -> Result<(f64, f64)> {
        self.pixel_to_ground(col as f64 + 0.5, row as f64 + 0.5)
    }
}
