//! Axis-aligned boxes and overlap measures.

use serde::{Deserialize, Serialize};

/// Box in pixel units, `(x_min, y_min, x_max, y_max)`.
///
/// Serialized as a 4-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_finite(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Positive area and contained in `[0, width] × [0, height]`.
    pub fn is_valid_in(&self, width: usize, height: usize) -> bool {
        self.is_finite()
            && self.x_max > self.x_min
            && self.y_max > self.y_min
            && self.x_min >= 0.0
            && self.y_min >= 0.0
            && self.x_max <= width as f64
            && self.y_max <= height as f64
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        w.max(0.0) * h.max(0.0)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Smallest box containing both.
    pub fn union_hull(&self, other: &BBox) -> BBox {
        BBox::new(
            self.x_min.min(other.x_min),
            self.y_min.min(other.y_min),
            self.x_max.max(other.x_max),
            self.y_max.max(other.y_max),
        )
    }

    /// Pixel-center rasterization: pixel `(x, y)` is inside iff its center
    /// `(x + 0.5, y + 0.5)` lies in the closed box. Returns half-open index
    /// ranges clipped to the image.
    pub fn pixel_ranges(&self, width: usize, height: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        fn axis(lo: f64, hi: f64, n: usize) -> std::ops::Range<usize> {
            // centers c = i + 0.5 with lo <= c <= hi
            let start = (lo - 0.5).ceil().max(0.0);
            let end = ((hi - 0.5).floor() + 1.0).min(n as f64);
            if !(start < end) {
                return 0..0;
            }
            start as usize..end as usize
        }
        (
            axis(self.x_min, self.x_max, width),
            axis(self.y_min, self.y_max, height),
        )
    }
}

impl From<[f64; 4]> for BBox {
    fn from(a: [f64; 4]) -> Self {
        BBox::new(a[0], a[1], a[2], a[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_half_overlap_is_one_third() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(5.0, 0.0, 15.0, 10.0);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn disjoint_and_identical() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(a.iou(&BBox::new(3.0, 3.0, 4.0, 4.0)), 0.0);
        assert_eq!(a.iou(&a), 1.0);
    }

    #[test]
    fn rasterization_uses_pixel_centers() {
        let b = BBox::new(1.0, 0.0, 3.0, 2.0);
        let (xs, ys) = b.pixel_ranges(10, 10);
        assert_eq!(xs, 1..3);
        assert_eq!(ys, 0..2);
        // a box thinner than a pixel that misses every center
        let thin = BBox::new(1.6, 1.6, 1.9, 1.9);
        let (xs, _) = thin.pixel_ranges(10, 10);
        assert!(xs.is_empty());
        // clipped to image
        let (xs, ys) = BBox::new(-5.0, -5.0, 50.0, 50.0).pixel_ranges(4, 3);
        assert_eq!((xs, ys), (0..4, 0..3));
    }
}
