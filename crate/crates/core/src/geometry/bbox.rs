use nalgebra::Vector2;

use super::GeometryError;
use crate::num::Real;

/// Axis-aligned image box in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox<T: Real> {
    pub xmin: T,
    pub ymin: T,
    pub xmax: T,
    pub ymax: T,
}

impl<T: Real> BBox<T> {
    pub fn new(xmin: T, ymin: T, xmax: T, ymax: T) -> Result<Self, GeometryError> {
        if xmin < xmax && ymin < ymax {
            Ok(Self { xmin, ymin, xmax, ymax })
        } else {
            Err(GeometryError::InvalidBox)
        }
    }

    pub fn from_center(center: &Vector2<T>, half_w: T, half_h: T) -> Result<Self, GeometryError> {
        Self::new(center.x - half_w, center.y - half_h, center.x + half_w, center.y + half_h)
    }

    pub fn width(&self) -> T {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> T {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn center(&self) -> Vector2<T> {
        let two = T::lit(2.0);
        Vector2::new((self.xmin + self.xmax) / two, (self.ymin + self.ymax) / two)
    }

    pub fn contains(&self, p: &Vector2<T>) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    pub fn intersection_area(&self, other: &Self) -> T {
        let w = self.xmax.min(other.xmax) - self.xmin.max(other.xmin);
        let h = self.ymax.min(other.ymax) - self.ymin.max(other.ymin);
        if w <= T::zero() || h <= T::zero() {
            T::zero()
        } else {
            w * h
        }
    }

    /// Clips to `[0, width] x [0, height]`; `None` when nothing remains.
    pub fn clip(&self, width: T, height: T) -> Option<Self> {
        Self::new(
            self.xmin.max(T::zero()),
            self.ymin.max(T::zero()),
            self.xmax.min(width),
            self.ymax.min(height),
        )
        .ok()
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }
}

/// Intersection over union of two boxes.
pub fn bbox_iou<T: Real>(a: &BBox<T>, b: &BBox<T>) -> T {
    let inter = a.intersection_area(b);
    if inter <= T::zero() {
        return T::zero();
    }
    let union = a.area() + b.area() - inter;
    (inter / union).min(T::one())
}
