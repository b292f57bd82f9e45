//! Axis-aligned boxes in image pixels and the two overlap criteria used
//! throughout detection, mining, and evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox2D {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

/// Denominator used by [`overlap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OverlapMode {
    /// PASCAL intersection over union.
    #[default]
    IoU,
    /// Intersection over the smaller of the two areas.
    IoMin,
}

impl BBox2D {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox2D { x1, y1, x2, y2 };
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(Error::Range(format!("non-finite box {b:?}")));
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(Error::Range(format!("empty box {b:?}")));
        }
        Ok(b)
    }

    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
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

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn intersection_area(&self, other: &BBox2D) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox2D {
        BBox2D {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    /// Clip to `[0, w] x [0, h]`; `None` when nothing remains.
    pub fn clip(&self, w: f64, h: f64) -> Option<BBox2D> {
        BBox2D::new(
            self.x1.max(0.0),
            self.y1.max(0.0),
            self.x2.min(w),
            self.y2.min(h),
        )
        .ok()
    }
}

/// Overlap of two boxes in `[0, 1]`, symmetric in its arguments.
pub fn overlap(a: &BBox2D, b: &BBox2D, mode: OverlapMode) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let denom = match mode {
        OverlapMode::IoU => a.area() + b.area() - inter,
        OverlapMode::IoMin => a.area().min(b.area()),
    };
    (inter / denom).clamp(0.0, 1.0)
}

pub fn iou(a: &BBox2D, b: &BBox2D) -> f64 {
    overlap(a, b, OverlapMode::IoU)
}
