//! Normalized axis-aligned boxes.
//!
//! All boxes are corner-form `(x_min, y_min, x_max, y_max)` in fractions of
//! canvas width/height, with `y` growing downwards. Pixel and center-form
//! boxes only appear at I/O boundaries.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    /// Builds a box with positive extent on both axes. Corners may lie off
    /// the canvas; see [`clamp_to_canvas`] and [`BBox::in_canvas`].
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let finite = x_min.is_finite() && y_min.is_finite() && x_max.is_finite() && y_max.is_finite();
        if !finite || x_min >= x_max || y_min >= y_max {
            return Err(CoreError::InvalidBox(x_min, y_min, x_max, y_max));
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    /// Like [`BBox::new`] but also requires the box to lie inside `[0,1]²`.
    pub fn in_unit(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self::new(x_min, y_min, x_max, y_max)?;
        if b.in_canvas() {
            Ok(b)
        } else {
            Err(CoreError::OutsideCanvas)
        }
    }

    pub fn from_center(cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        Self::new(cx - width / 2.0, cy - height / 2.0, cx + width / 2.0, cy + height / 2.0)
    }

    /// The full canvas.
    pub fn unit() -> Self {
        Self { x_min: 0.0, y_min: 0.0, x_max: 1.0, y_max: 1.0 }
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Height over width.
    pub fn aspect(&self) -> f64 {
        self.height() / self.width()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn in_canvas(&self) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= 1.0 && self.y_max <= 1.0
    }

    /// Shifts the box by `(dx, dy)`; extent is unchanged.
    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self { x_min: self.x_min + dx, y_min: self.y_min + dy, x_max: self.x_max + dx, y_max: self.y_max + dy }
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Corner-form to normalized center form `(cx, cy, w, h)`.
    pub fn to_center_form(&self) -> [f64; 4] {
        let (cx, cy) = self.center();
        [cx, cy, self.width(), self.height()]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = CoreError;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.corners()
    }
}

/// Intersection over union.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    if a == b {
        return 1.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Sum of pairwise intersections with `others`, over the target's own area.
///
/// Can exceed 1 when several `others` cover the same part of the target.
pub fn overlap_ratio<'a, I>(target: &BBox, others: I) -> f64
where
    I: IntoIterator<Item = &'a BBox>,
{
    let covered: f64 = others.into_iter().map(|o| target.intersection_area(o)).sum();
    covered / target.area()
}

/// Brings a box inside the canvas.
///
/// Each axis whose extent fits in `[0,1]` is shifted inward with its extent
/// preserved; an axis wider than the canvas becomes `[0,1]`.
pub fn clamp_to_canvas(b: &BBox) -> BBox {
    let (x_min, x_max) = clamp_axis(b.x_min, b.x_max);
    let (y_min, y_max) = clamp_axis(b.y_min, b.y_max);
    BBox { x_min, y_min, x_max, y_max }
}

fn clamp_axis(lo: f64, hi: f64) -> (f64, f64) {
    let extent = hi - lo;
    if extent >= 1.0 {
        (0.0, 1.0)
    } else if lo < 0.0 {
        (0.0, extent)
    } else if hi > 1.0 {
        (1.0 - extent, 1.0)
    } else {
        (lo, hi)
    }
}
