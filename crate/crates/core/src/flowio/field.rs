use serde::Serialize;

use super::FlowError;

/// Dense two-channel motion field in pixels per frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl FlowField {
    /// Validates dimensions, channel lengths and finiteness.
    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self, FlowError> {
        if width == 0 || height == 0 {
            return Err(FlowError::BadDimensions {
                width: width as i64,
                height: height as i64,
            });
        }
        let n = width * height;
        for ch in [&u, &v] {
            if ch.len() != n {
                return Err(FlowError::LengthMismatch {
                    width,
                    height,
                    found: ch.len(),
                });
            }
        }
        if let Some(pixel) = u.iter().zip(&v).position(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(FlowError::NonFinite { pixel });
        }
        Ok(Self { width, height, u, v })
    }

    /// Zero field. Panics if either dimension is zero.
    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "flow dimensions must be positive");
        Self {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    /// Field filled from `f(x, y) -> (u, v)`. Panics on non-finite output.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Self {
        let mut u = Vec::with_capacity(width * height);
        let mut v = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                u.push(a);
                v.push(b);
            }
        }
        Self::new(width, height, u, v).expect("from_fn produced an invalid field")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    /// Applies `f` to every `(u, v)` pair. Panics if `f` yields a non-finite value.
    pub fn map(&self, mut f: impl FnMut(f32, f32) -> (f32, f32)) -> FlowField {
        let (u, v) = self.u.iter().zip(&self.v).map(|(&a, &b)| f(a, b)).unzip();
        FlowField::new(self.width, self.height, u, v).expect("map produced an invalid field")
    }
}

/// Per-pixel flow magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MagnitudeMap {
    width: usize,
    height: usize,
    mag: Vec<f64>,
    normalized: bool,
}

impl MagnitudeMap {
    /// Raw (unnormalized) map. Returns `None` on a length mismatch or a
    /// negative/non-finite entry.
    pub fn new(width: usize, height: usize, mag: Vec<f64>) -> Option<Self> {
        let ok =
            width > 0 && height > 0 && mag.len() == width * height && mag.iter().all(|m| m.is_finite() && *m >= 0.0);
        ok.then_some(Self {
            width,
            height,
            mag,
            normalized: false,
        })
    }

    /// Map whose values are already relative magnitudes in `[0, 1]`; the
    /// normalized flag is set without rescaling.
    pub fn from_normalized(width: usize, height: usize, mag: Vec<f64>) -> Option<Self> {
        if mag.iter().any(|m| *m > 1.0) {
            return None;
        }
        let mut map = Self::new(width, height, mag)?;
        map.normalized = true;
        Some(map)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.mag
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.mag[y * self.width + x]
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn max(&self) -> f64 {
        self.mag.iter().copied().fold(0.0, f64::max)
    }

    /// 8-bit grayscale rendering, brighter meaning faster. Unnormalized maps
    /// are scaled by their maximum first.
    pub fn to_gray8(&self) -> Vec<u8> {
        let scale = if self.normalized {
            1.0
        } else {
            let m = self.max();
            if m > 0.0 {
                1.0 / m
            } else {
                0.0
            }
        };
        self.mag
            .iter()
            .map(|&m| (m * scale * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// `sqrt(u² + v²)` per pixel, computed in `f64`.
pub fn magnitude(flow: &FlowField) -> MagnitudeMap {
    let mag = flow
        .u()
        .iter()
        .zip(flow.v())
        .map(|(&u, &v)| (u as f64).hypot(v as f64))
        .collect();
    MagnitudeMap {
        width: flow.width(),
        height: flow.height(),
        mag,
        normalized: false,
    }
}

/// Divides by the per-image maximum. All-zero maps stay zero. Already
/// normalized maps are returned unchanged.
pub fn normalize_magnitudes(map: &MagnitudeMap) -> MagnitudeMap {
    if map.normalized {
        return map.clone();
    }
    let max = map.max();
    let mag = if max > 0.0 {
        map.mag.iter().map(|&m| (m / max).min(1.0)).collect()
    } else {
        vec![0.0; map.mag.len()]
    };
    MagnitudeMap {
        width: map.width,
        height: map.height,
        mag,
        normalized: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_construction() {
        assert!(matches!(
            FlowField::new(0, 1, vec![], vec![]),
            Err(FlowError::BadDimensions { .. })
        ));
        assert!(matches!(
            FlowField::new(2, 1, vec![0.0], vec![0.0, 0.0]),
            Err(FlowError::LengthMismatch { .. })
        ));
        assert!(matches!(
            FlowField::new(2, 1, vec![0.0, f32::NAN], vec![0.0, 0.0]),
            Err(FlowError::NonFinite { pixel: 1 })
        ));
    }

    #[test]
    fn three_four_five() {
        let f = FlowField::new(1, 1, vec![3.0], vec![4.0]).unwrap();
        assert_eq!(magnitude(&f).values(), &[5.0]);
    }

    #[test]
    fn zero_field_zero_magnitude() {
        let m = magnitude(&FlowField::zeros(3, 2));
        assert!(m.values().iter().all(|&x| x == 0.0));
        assert!(!m.is_normalized());
    }

    #[test]
    fn linear_scaling() {
        let m = MagnitudeMap::new(3, 1, vec![0.0, 2.0, 4.0]).unwrap();
        let n = normalize_magnitudes(&m);
        assert_eq!(n.values(), &[0.0, 0.5, 1.0]);
        assert!(n.is_normalized());
    }

    #[test]
    fn all_zero_normalizes_to_zero_with_flag() {
        let m = MagnitudeMap::new(2, 2, vec![0.0; 4]).unwrap();
        let n = normalize_magnitudes(&m);
        assert_eq!(n.values(), &[0.0; 4]);
        assert!(n.is_normalized());
    }

    #[test]
    fn normalization_idempotent() {
        let m = MagnitudeMap::new(3, 1, vec![0.3, 7.0, 1.1]).unwrap();
        let once = normalize_magnitudes(&m);
        assert_eq!(normalize_magnitudes(&once), once);
    }

    #[test]
    fn gray_render() {
        let m = MagnitudeMap::new(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(m.to_gray8(), vec![0, 128, 255]);
    }
}
