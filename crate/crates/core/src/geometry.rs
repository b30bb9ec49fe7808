use serde::{Deserialize, Serialize};

use crate::error::{Result, TtcError};

/// Axis-aligned 2D box in continuous pixel coordinates, stored as center and size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: usize,
    pub height: usize,
}

impl ImageSize {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn from_corners(left: f64, top: f64, right: f64, bottom: f64) -> Result<Self> {
        Self::new(0.5 * (left + right), 0.5 * (top + bottom), right - left, bottom - top)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite());
        if !finite || self.w <= 0.0 || self.h <= 0.0 {
            return Err(TtcError::Domain(format!("invalid box {self:?}")));
        }
        Ok(())
    }

    pub fn left(&self) -> f64 {
        self.x - 0.5 * self.w
    }

    pub fn right(&self) -> f64 {
        self.x + 0.5 * self.w
    }

    pub fn top(&self) -> f64 {
        self.y - 0.5 * self.h
    }

    pub fn bottom(&self) -> f64 {
        self.y + 0.5 * self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Same center, size multiplied by `r`.
    pub fn scaled(&self, r: f64) -> Self {
        Self { w: self.w * r, h: self.h * r, ..*self }
    }

    pub fn shifted(&self, dx: f64, dy: f64) -> Self {
        Self { x: self.x + dx, y: self.y + dy, ..*self }
    }

    pub fn intersects(&self, size: ImageSize) -> bool {
        self.right() > 0.0
            && self.left() < size.width as f64
            && self.bottom() > 0.0
            && self.top() < size.height as f64
    }

    pub fn is_inside(&self, size: ImageSize) -> bool {
        self.left() >= 0.0
            && self.top() >= 0.0
            && self.right() <= size.width as f64
            && self.bottom() <= size.height as f64
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }
}
