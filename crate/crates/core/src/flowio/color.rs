//! Optical-flow color coding.
//!
//! The wheel is the 55-bin Middlebury wheel: six hue segments of
//! 15 (red→yellow), 6 (yellow→green), 4 (green→cyan), 11 (cyan→blue),
//! 13 (blue→magenta) and 6 (magenta→red) bins. Direction `atan2(-v, -u)`
//! picks a position on the wheel with linear interpolation between bins.
//! The relative magnitude `r ∈ [0, 1]` blends from white at `r = 0` to the
//! fully saturated wheel color at `r = 1`, so motion renders more deeply
//! colored as it gets faster. Magnitudes are divided by the per-image
//! maximum first.
//!
//! Every interpolated wheel color has one channel at zero, so the largest
//! per-channel deficit from white equals `r` exactly; that is what
//! [`distance_from_white`] measures.

use std::f64::consts::PI;
use std::sync::OnceLock;

use super::{magnitude, FlowField};

pub const COLOR_WHEEL_BINS: usize = 55;

const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[u8; 3]>,
}

impl ColorImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        self.rgb[y * self.width + x]
    }
}

fn wheel() -> &'static [[f64; 3]; COLOR_WHEEL_BINS] {
    static WHEEL: OnceLock<[[f64; 3]; COLOR_WHEEL_BINS]> = OnceLock::new();
    WHEEL.get_or_init(|| {
        let mut w = [[0.0; 3]; COLOR_WHEEL_BINS];
        let ramp = |i: usize, n: usize| (255.0 * i as f64 / n as f64).floor();
        let mut k = 0;
        for i in 0..RY {
            w[k] = [255.0, ramp(i, RY), 0.0];
            k += 1;
        }
        for i in 0..YG {
            w[k] = [255.0 - ramp(i, YG), 255.0, 0.0];
            k += 1;
        }
        for i in 0..GC {
            w[k] = [0.0, 255.0, ramp(i, GC)];
            k += 1;
        }
        for i in 0..CB {
            w[k] = [0.0, 255.0 - ramp(i, CB), 255.0];
            k += 1;
        }
        for i in 0..BM {
            w[k] = [ramp(i, BM), 0.0, 255.0];
            k += 1;
        }
        for i in 0..MR {
            w[k] = [255.0, 0.0, 255.0 - ramp(i, MR)];
            k += 1;
        }
        for c in w.iter_mut() {
            for ch in c.iter_mut() {
                *ch /= 255.0;
            }
        }
        w
    })
}

/// Continuous color in `[0, 1]³` for a flow vector already divided by the
/// image's maximum magnitude (so `hypot(fx, fy) ≤ 1` inside an image).
/// Vectors longer than 1 are drawn at 75% intensity, as in the reference
/// wheel.
pub fn wheel_color(fx: f64, fy: f64) -> [f64; 3] {
    let rad = fx.hypot(fy);
    if rad == 0.0 {
        return [1.0; 3];
    }
    let wheel = wheel();
    let ncols = COLOR_WHEEL_BINS as f64;
    let a = (-fy).atan2(-fx) / PI;
    let fk = (a + 1.0) / 2.0 * (ncols - 1.0);
    let k0 = (fk.floor() as usize).min(COLOR_WHEEL_BINS - 1);
    let k1 = (k0 + 1) % COLOR_WHEEL_BINS;
    let f = fk - k0 as f64;
    let mut out = [0.0; 3];
    for ch in 0..3 {
        let base = (1.0 - f) * wheel[k0][ch] + f * wheel[k1][ch];
        out[ch] = if rad <= 1.0 {
            1.0 - rad * (1.0 - base)
        } else {
            base * 0.75
        };
    }
    out
}

/// Largest per-channel deficit from white, `max_c (1 - rgb_c)`.
pub fn distance_from_white(rgb: [f64; 3]) -> f64 {
    rgb.iter().map(|c| 1.0 - c).fold(0.0, f64::max)
}

pub fn colorize(flow: &FlowField) -> ColorImage {
    let max = magnitude(flow).max();
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    let rgb = flow
        .u()
        .iter()
        .zip(flow.v())
        .map(|(&u, &v)| {
            let c = wheel_color(u as f64 * scale, v as f64 * scale);
            c.map(|x| (255.0 * x).floor().clamp(0.0, 255.0) as u8)
        })
        .collect();
    ColorImage {
        width: flow.width(),
        height: flow.height(),
        rgb,
    }
}
