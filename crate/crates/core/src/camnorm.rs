//! Camera-motion normalization.
//!
//! Background motion is estimated from the four image corners: each corner
//! window is averaged, the four scalar mean magnitudes are split into two
//! clusters, singleton clusters are dropped, and the mean flow vector of the
//! surviving corners is subtracted from every pixel.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowio::FlowField;

pub const DEFAULT_CORNER_FRACTION: f64 = 0.1;

/// Magnitudes whose spread is below this are treated as one cluster.
const EQUAL_TOL: f64 = 1e-9;
/// Split costs closer than this count as tied.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum CamNormError {
    #[error("corner fraction {0} outside (0, 0.5]")]
    BadCornerFraction(f64),
}

/// Corner window size as a fraction of each image dimension, in `(0, 0.5]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct CornerFraction(f64);

impl CornerFraction {
    pub fn new(f: f64) -> Result<Self, CamNormError> {
        if f > 0.0 && f <= 0.5 {
            Ok(Self(f))
        } else {
            Err(CamNormError::BadCornerFraction(f))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// Window `(width, height)` in pixels for an image; always at least 1×1.
    pub fn window(self, width: usize, height: usize) -> (usize, usize) {
        let side = |n: usize| ((self.0 * n as f64).ceil() as usize).clamp(1, n);
        (side(width), side(height))
    }
}

impl Default for CornerFraction {
    fn default() -> Self {
        Self(DEFAULT_CORNER_FRACTION)
    }
}

impl TryFrom<f64> for CornerFraction {
    type Error = CamNormError;
    fn try_from(f: f64) -> Result<Self, Self::Error> {
        Self::new(f)
    }
}

impl From<CornerFraction> for f64 {
    fn from(c: CornerFraction) -> Self {
        c.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CornerId {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl CornerId {
    pub const ALL: [CornerId; 4] = [
        CornerId::TopLeft,
        CornerId::TopRight,
        CornerId::BottomLeft,
        CornerId::BottomRight,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerStats {
    pub corner: CornerId,
    /// Mean `(u, v)` over the window.
    pub mean_flow: [f64; 2],
    /// Mean of per-pixel magnitudes over the window.
    pub mean_magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundEstimate {
    pub flow: [f64; 2],
    /// Corners whose mean flow was averaged, in [`CornerId::ALL`] order.
    pub contributing_corners: Vec<CornerId>,
}

impl BackgroundEstimate {
    pub fn magnitude(&self) -> f64 {
        self.flow[0].hypot(self.flow[1])
    }
}

pub fn corner_stats(flow: &FlowField, corner_fraction: CornerFraction) -> [CornerStats; 4] {
    let (w, h) = (flow.width(), flow.height());
    let (cw, ch) = corner_fraction.window(w, h);
    CornerId::ALL.map(|corner| {
        let x0 = match corner {
            CornerId::TopLeft | CornerId::BottomLeft => 0,
            CornerId::TopRight | CornerId::BottomRight => w - cw,
        };
        let y0 = match corner {
            CornerId::TopLeft | CornerId::TopRight => 0,
            CornerId::BottomLeft | CornerId::BottomRight => h - ch,
        };
        let (mut su, mut sv, mut sm) = (0.0, 0.0, 0.0);
        for y in y0..y0 + ch {
            for x in x0..x0 + cw {
                let (u, v) = flow.at(x, y);
                let (u, v) = (u as f64, v as f64);
                su += u;
                sv += v;
                sm += u.hypot(v);
            }
        }
        let n = (cw * ch) as f64;
        CornerStats {
            corner,
            mean_flow: [su / n, sv / n],
            mean_magnitude: sm / n,
        }
    })
}

/// Sum of squared deviations from the mean.
fn sse(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum()
}

/// Exact two-cluster split of the four magnitudes, then singleton removal.
///
/// Sorted by magnitude, the only contiguous splits are 1|3, 2|2 and 3|1; the
/// one with the least within-cluster squared error wins. Ties between a
/// singleton split and any other split keep all four corners.
pub fn cluster_corners(stats: &[CornerStats; 4]) -> BackgroundEstimate {
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| stats[a].mean_magnitude.total_cmp(&stats[b].mean_magnitude));
    let mags: Vec<f64> = order.iter().map(|&i| stats[i].mean_magnitude).collect();

    let mut keep = [true; 4];
    if mags[3] - mags[0] > EQUAL_TOL {
        let costs: Vec<f64> = (1..4).map(|k| sse(&mags[..k]) + sse(&mags[k..])).collect();
        let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
        let winners: Vec<usize> = (0..3).filter(|&s| costs[s] - best <= TIE_TOL).collect();
        if let [only] = winners[..] {
            match only {
                0 => keep[order[0]] = false,
                2 => keep[order[3]] = false,
                _ => {}
            }
        }
    }

    let contributing: Vec<CornerId> = CornerId::ALL
        .iter()
        .zip(keep)
        .filter_map(|(&c, k)| k.then_some(c))
        .collect();
    let n = contributing.len() as f64;
    let mut flow = [0.0; 2];
    for s in stats.iter().zip(keep).filter_map(|(s, k)| k.then_some(s)) {
        flow[0] += s.mean_flow[0];
        flow[1] += s.mean_flow[1];
    }
    BackgroundEstimate {
        flow: [flow[0] / n, flow[1] / n],
        contributing_corners: contributing,
    }
}

pub fn subtract_background(flow: &FlowField, bg: &BackgroundEstimate) -> FlowField {
    let [bu, bv] = bg.flow;
    flow.map(|u, v| ((u as f64 - bu) as f32, (v as f64 - bv) as f32))
}

/// Corner statistics, clustering and subtraction in one pass.
pub fn normalize_camera_motion(flow: &FlowField, corner_fraction: CornerFraction) -> (FlowField, BackgroundEstimate) {
    let stats = corner_stats(flow, corner_fraction);
    let bg = cluster_corners(&stats);
    (subtract_background(flow, &bg), bg)
}
