//! Axis-aligned boxes and the overlap measures used by entity matching.
//!
//! Boxes are stored as corner pairs `(x1, y1, x2, y2)` in pixel coordinates.
//! Datasets that store `(x, y, w, h)` go through [`xywh_to_corners`], which is
//! the only bridge between the two conventions.

use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum BoxError {
    #[error("box coordinates must be finite")]
    NonFinite,
    #[error("box coordinates must be non-negative")]
    Negative,
    #[error("box must satisfy x2 > x1 and y2 > y1")]
    Inverted,
    #[error("width and height must be positive")]
    NonPositiveExtent,
}

/// Corner-pair rectangle: `(x1, y1)` top-left, `(x2, y2)` bottom-right.
///
/// Construction through [`BoundingBox::new`] guarantees finite, non-negative
/// coordinates with strictly positive extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, BoxError> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(BoxError::NonFinite);
        }
        if x1 < 0.0 || y1 < 0.0 {
            return Err(BoxError::Negative);
        }
        if x2 <= x1 || y2 <= y1 {
            return Err(BoxError::Inverted);
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Shift by `(dx, dy)`. Fails if the result leaves the non-negative quadrant.
    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self, BoxError> {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    /// Grow each side by `ratio` of the box extent, clamping the top-left at 0.
    pub fn padded(&self, ratio: f64) -> Self {
        let ratio = if ratio.is_finite() && ratio > 0.0 { ratio } else { 0.0 };
        let dx = self.width() * ratio;
        let dy = self.height() * ratio;
        Self {
            x1: (self.x1 - dx).max(0.0),
            y1: (self.y1 - dy).max(0.0),
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = BoxError;

    fn try_from(c: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.corners()
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Convert a top-left + width/height box into corner form.
pub fn xywh_to_corners(x: f64, y: f64, w: f64, h: f64) -> Result<BoundingBox, BoxError> {
    if !(w.is_finite() && h.is_finite()) {
        return Err(BoxError::NonFinite);
    }
    if w <= 0.0 || h <= 0.0 {
        return Err(BoxError::NonPositiveExtent);
    }
    BoundingBox::new(x, y, x + w, y + h)
}

fn intersection_area(a: &BoundingBox, b: &BoundingBox) -> f64 {
    // Touching edges give zero width, so they count as no overlap.
    let w = a.x2.min(b.x2) - a.x1.max(b.x1);
    let h = a.y2.min(b.y2) - a.y1.max(b.y1);
    if w <= 0.0 || h <= 0.0 {
        0.0
    } else {
        w * h
    }
}

/// Intersection over union, in `[0, 1]`.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    inter / union
}

/// Generalized IoU, in `[-1, 1]`: IoU minus the fraction of the tightest
/// enclosing box not covered by the union.
pub fn giou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    let enclosing = (a.x2.max(b.x2) - a.x1.min(b.x1)) * (a.y2.max(b.y2) - a.y1.min(b.y1));
    inter / union - (enclosing - union) / enclosing
}
