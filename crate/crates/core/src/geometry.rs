//! Axis-aligned box arithmetic and the origin-normalized shape similarity
//! used to rank replacement components.

use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle, `(x_t, y_t)` top-left and `(x_b, y_b)`
/// bottom-right.
///
/// Construction rejects non-finite or negative coordinates and boxes with
/// zero width or height, so every area is strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    x_t: f64,
    y_t: f64,
    x_b: f64,
    y_b: f64,
}

impl BoundingBox {
    pub fn new(x_t: f64, y_t: f64, x_b: f64, y_b: f64) -> Result<Self> {
        let coords = [x_t, y_t, x_b, y_b];
        if coords.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Validation(format!(
                "box coordinates must be finite and non-negative: {coords:?}"
            )));
        }
        if x_b <= x_t || y_b <= y_t {
            return Err(Error::Validation(format!(
                "box must have positive width and height: {coords:?}"
            )));
        }
        Ok(Self { x_t, y_t, x_b, y_b })
    }

    /// Box of the given size anchored at the origin.
    pub fn from_size(width: f64, height: f64) -> Result<Self> {
        Self::new(0.0, 0.0, width, height)
    }

    pub fn x_t(&self) -> f64 {
        self.x_t
    }

    pub fn y_t(&self) -> f64 {
        self.y_t
    }

    pub fn x_b(&self) -> f64 {
        self.x_b
    }

    pub fn y_b(&self) -> f64 {
        self.y_b
    }

    pub fn width(&self) -> f64 {
        self.x_b - self.x_t
    }

    pub fn height(&self) -> f64 {
        self.y_b - self.y_t
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x_t, self.y_t, self.x_b, self.y_b]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x_b.min(other.x_b) - self.x_t.max(other.x_t);
        let h = self.y_b.min(other.y_b) - self.y_t.max(other.y_t);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection_area(other);
        if inter == 0.0 {
            return 0.0;
        }
        if self == other {
            return 1.0;
        }
        inter / (self.area() + other.area() - inter)
    }

    /// Translates the box so its top-left corner sits at `(0, 0)`.
    pub fn normalize_to_origin(&self) -> BoundingBox {
        BoundingBox {
            x_t: 0.0,
            y_t: 0.0,
            x_b: self.width(),
            y_b: self.height(),
        }
    }

    /// Overlap of the two boxes after both are moved to the origin, divided
    /// by the area of their union. Depends only on widths and heights.
    pub fn shape_similarity(&self, other: &BoundingBox) -> f64 {
        let a = self.normalize_to_origin();
        let b = other.normalize_to_origin();
        let overlap = a.x_b.min(b.x_b) * a.y_b.min(b.y_b);
        overlap / (a.x_b * a.y_b + b.x_b * b.y_b - overlap)
    }

    /// Clamps the box into `[0, width] x [0, height]`. Returns `None` when
    /// nothing of the box is left inside the image.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<BoundingBox> {
        let x_t = self.x_t.min(width);
        let y_t = self.y_t.min(height);
        let x_b = self.x_b.min(width);
        let y_b = self.y_b.min(height);
        BoundingBox::new(x_t, y_t, x_b, y_b).ok()
    }

    pub fn is_within(&self, width: f64, height: f64) -> bool {
        self.x_b <= width && self.y_b <= height
    }
}

pub fn area(b: &BoundingBox) -> f64 {
    b.area()
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    a.iou(b)
}

pub fn normalize_to_origin(b: &BoundingBox) -> BoundingBox {
    b.normalize_to_origin()
}

pub fn shape_similarity(a: &BoundingBox, b: &BoundingBox) -> f64 {
    a.shape_similarity(b)
}
