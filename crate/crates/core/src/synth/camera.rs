use serde::{Deserialize, Serialize};

use crate::error::{Result, TtcError};
use crate::geometry::{BoundingBox, ImageSize};

/// Ideal pinhole camera looking along the depth axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Focal length, pixels.
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self { f: 1000.0, cx: 512.0, cy: 288.0, width: 1024, height: 576 }
    }
}

impl CameraModel {
    pub fn new(f: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self { f, cx, cy, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f.is_finite() && self.f > 0.0) {
            return Err(TtcError::Domain(format!("focal length must be > 0, got {}", self.f)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(TtcError::Domain("image size must be non-zero".into()));
        }
        Ok(())
    }

    pub fn image_size(&self) -> ImageSize {
        ImageSize::new(self.width, self.height)
    }

    /// Image-plane box of a frontal-parallel rectangle of `width x height`
    /// meters centered at lateral offset `x` (right positive) and vertical
    /// offset `z` (down positive) at depth `y`.
    pub fn project_rect(&self, width: f64, height: f64, x: f64, z: f64, y: f64) -> Result<BoundingBox> {
        let w = project_size(self, width, y)?;
        let h = project_size(self, height, y)?;
        BoundingBox::new(self.cx + self.f * x / y, self.cy + self.f * z / y, w, h)
    }
}

/// Image size `f * S / y` of an object of physical size `S` at depth `y`.
pub fn project_size(camera: &CameraModel, size: f64, depth: f64) -> Result<f64> {
    camera.validate()?;
    if !(depth.is_finite() && depth > 0.0) {
        return Err(TtcError::Domain(format!("depth must be > 0, got {depth}")));
    }
    Ok(camera.f * size / depth)
}
