//! Hand-crafted proposal features shared by the RGB and motion branches.
//!
//! For each box: the mean of each color channel over the box's pixels,
//! rescaled from `[0, 1]` to `[-1, 1]`, followed by the box geometry
//! `(2·cx/W - 1, 2·cy/H - 1, w/W, h/H)`.

use crate::flowio::ColorImage;
use crate::geometry::BBox;
use crate::linalg::Matrix;

pub const FEATURE_DIM: usize = 7;

/// Floating-point RGB image with channels in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f32; 3]>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, color: [f32; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![color; width * height],
        }
    }

    pub fn from_color_image(img: &ColorImage) -> Self {
        Self {
            width: img.width,
            height: img.height,
            data: img.rgb.iter().map(|p| p.map(|c| c as f32 / 255.0)).collect(),
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32; 3] {
        &mut self.data[y * self.width + x]
    }
}

/// Summed-area table over the three channels.
struct Integral {
    stride: usize,
    sums: Vec<[f64; 3]>,
}

impl Integral {
    fn new(img: &RgbImage) -> Self {
        let stride = img.width + 1;
        let mut sums = vec![[0.0; 3]; stride * (img.height + 1)];
        for y in 0..img.height {
            let mut row = [0.0; 3];
            for x in 0..img.width {
                let p = img.pixel(x, y);
                for c in 0..3 {
                    row[c] += p[c] as f64;
                    sums[(y + 1) * stride + x + 1][c] = sums[y * stride + x + 1][c] + row[c];
                }
            }
        }
        Self { stride, sums }
    }

    fn sum(&self, xs: std::ops::Range<usize>, ys: std::ops::Range<usize>) -> [f64; 3] {
        let s = |x: usize, y: usize| self.sums[y * self.stride + x];
        let (a, b, c, d) = (
            s(xs.end, ys.end),
            s(xs.start, ys.end),
            s(xs.end, ys.start),
            s(xs.start, ys.start),
        );
        [0, 1, 2].map(|k| a[k] - b[k] - c[k] + d[k])
    }
}

/// One feature row per box.
pub fn box_features(img: &RgbImage, boxes: &[BBox]) -> Matrix {
    let integral = Integral::new(img);
    let (w, h) = (img.width as f64, img.height as f64);
    let mut out = Matrix::zeros(boxes.len(), FEATURE_DIM);
    for (i, b) in boxes.iter().enumerate() {
        let (xs, ys) = b.pixel_ranges(img.width, img.height);
        let n = (xs.len() * ys.len()) as f64;
        let row = out.row_mut(i);
        if n > 0.0 {
            let s = integral.sum(xs, ys);
            for c in 0..3 {
                row[c] = 2.0 * (s[c] / n) - 1.0;
            }
        }
        row[3] = (b.x_min + b.x_max) / w - 1.0;
        row[4] = (b.y_min + b.y_max) / h - 1.0;
        row[5] = b.width() / w;
        row[6] = b.height() / h;
    }
    out
}
