//! Axis-aligned boxes in absolute pixel coordinates.
//!
//! A box covers the half-open region `[x1, x2) × [y1, y2)`, so its area is
//! exactly `(x2 - x1) * (y2 - y1)` and an integer-corner box covers exactly
//! that many unit pixel cells.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Box in corner format. Serialized as `[x1, y1, x2, y2]`.
///
/// Construction is unchecked; use [`validate_box`] against the owning image
/// before trusting one that came from outside.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BoundingBox {
    fn from([x1, y1, x2, y2]: [f64; 4]) -> Self {
        Self { x1, y1, x2, y2 }
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BoundingBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Converts a normalized center-format box (`cx, cy, w, h` in `[0, 1]`)
    /// to absolute corners for an image of the given size.
    pub fn from_center_normalized(
        cx: f64,
        cy: f64,
        w: f64,
        h: f64,
        image_width: u32,
        image_height: u32,
    ) -> Self {
        let iw = f64::from(image_width);
        let ih = f64::from(image_height);
        Self {
            x1: (cx - w / 2.0) * iw,
            y1: (cy - h / 2.0) * ih,
            x2: (cx + w / 2.0) * iw,
            y2: (cy + h / 2.0) * ih,
        }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.y1.is_finite() && self.x2.is_finite() && self.y2.is_finite()
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Clips to `[0, width) × [0, height)`. Returns `None` when nothing of
    /// the box remains inside the image.
    pub fn clip_to(&self, width: u32, height: u32) -> Option<BoundingBox> {
        let clipped = BoundingBox {
            x1: self.x1.clamp(0.0, f64::from(width)),
            y1: self.y1.clamp(0.0, f64::from(height)),
            x2: self.x2.clamp(0.0, f64::from(width)),
            y2: self.y2.clamp(0.0, f64::from(height)),
        };
        (clipped.x1 < clipped.x2 && clipped.y1 < clipped.y2).then_some(clipped)
    }

    pub fn scaled(&self, s: f64) -> BoundingBox {
        BoundingBox::new(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)
    }

    /// Smallest block of whole pixels covering the box, clamped to the image.
    pub fn pixel_rect(&self, width: u32, height: u32) -> Option<PixelRect> {
        let left = self.x1.floor().max(0.0) as u32;
        let top = self.y1.floor().max(0.0) as u32;
        let right = (self.x2.ceil().max(0.0) as u32).min(width);
        let bottom = (self.y2.ceil().max(0.0) as u32).min(height);
        (left < right && top < bottom).then_some(PixelRect {
            left,
            top,
            right,
            bottom,
        })
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Half-open block of pixels `[left, right) × [top, bottom)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PixelRect {
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
}

impl PixelRect {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.left && x < self.right && y >= self.top && y < self.bottom
    }
}

/// Why a box is not acceptable for its image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoxViolation {
    NonFinite,
    InvertedX,
    InvertedY,
    Negative,
    ExceedsWidth,
    ExceedsHeight,
}

impl fmt::Display for BoxViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoxViolation::NonFinite => "coordinates must be finite",
            BoxViolation::InvertedX => "x1 < x2 required",
            BoxViolation::InvertedY => "y1 < y2 required",
            BoxViolation::Negative => "coordinates must be non-negative",
            BoxViolation::ExceedsWidth => "x2 exceeds width",
            BoxViolation::ExceedsHeight => "y2 exceeds height",
        })
    }
}

impl std::error::Error for BoxViolation {}

/// Checks `0 ≤ x1 < x2 ≤ width` and `0 ≤ y1 < y2 ≤ height`.
pub fn validate_box(b: &BoundingBox, width: u32, height: u32) -> Result<(), BoxViolation> {
    if !b.is_finite() {
        return Err(BoxViolation::NonFinite);
    }
    if b.x1 >= b.x2 {
        return Err(BoxViolation::InvertedX);
    }
    if b.y1 >= b.y2 {
        return Err(BoxViolation::InvertedY);
    }
    if b.x1 < 0.0 || b.y1 < 0.0 {
        return Err(BoxViolation::Negative);
    }
    if b.x2 > f64::from(width) {
        return Err(BoxViolation::ExceedsWidth);
    }
    if b.y2 > f64::from(height) {
        return Err(BoxViolation::ExceedsHeight);
    }
    Ok(())
}
