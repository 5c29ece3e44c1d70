//! Motion-driven training-image selection.
//!
//! An image is kept when the mean normalized motion inside its predicted
//! box exceeds `m` and the inside/outside ratio exceeds `d`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowio::MagnitudeMap;
use crate::geometry::BBox;

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
pub enum SelectionError {
    #[error("magnitude map is not normalized")]
    NotNormalized,
    #[error("box covers no pixel centers")]
    EmptyInside,
    #[error("box covers the whole image")]
    EmptyOutside,
    #[error("invalid thresholds: m={m}, d={d}")]
    InvalidConfig { m: f64, d: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig")]
pub struct SelectionConfig {
    m: f64,
    d: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    m: f64,
    d: f64,
}

impl TryFrom<RawConfig> for SelectionConfig {
    type Error = SelectionError;
    fn try_from(r: RawConfig) -> Result<Self, Self::Error> {
        SelectionConfig::new(r.m, r.d)
    }
}

impl SelectionConfig {
    pub const DEFAULT_M: f64 = 0.2;
    pub const DEFAULT_D: f64 = 1.5;

    /// `m` is the minimum inside motion and `d` the minimum inside/outside
    /// ratio. `m` may be ≥ 1 (nothing passes); `m` must be non-negative and
    /// `d` positive.
    pub fn new(m: f64, d: f64) -> Result<Self, SelectionError> {
        if m.is_finite() && m >= 0.0 && d.is_finite() && d > 0.0 {
            Ok(Self { m, d })
        } else {
            Err(SelectionError::InvalidConfig { m, d })
        }
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn d(&self) -> f64 {
        self.d
    }
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            m: Self::DEFAULT_M,
            d: Self::DEFAULT_D,
        }
    }
}

/// Mean normalized magnitude inside the box (pixel-center rasterization)
/// and over all remaining pixels.
pub fn box_motion_stats(mag: &MagnitudeMap, bbox: &BBox) -> Result<(f64, f64), SelectionError> {
    if !mag.is_normalized() {
        return Err(SelectionError::NotNormalized);
    }
    let (w, h) = (mag.width(), mag.height());
    let (xs, ys) = bbox.pixel_ranges(w, h);
    let n_in = xs.len() * ys.len();
    if n_in == 0 {
        return Err(SelectionError::EmptyInside);
    }
    let n_out = w * h - n_in;
    if n_out == 0 {
        return Err(SelectionError::EmptyOutside);
    }
    let total: f64 = mag.values().iter().sum();
    let inside: f64 = ys.clone().map(|y| xs.clone().map(|x| mag.at(x, y)).sum::<f64>()).sum();
    let ib = inside / n_in as f64;
    let ob = ((total - inside) / n_out as f64).max(0.0);
    Ok((ib.clamp(0.0, 1.0), ob.min(1.0)))
}

/// Decision rule with strict inequalities; `ob = 0` counts as an infinite ratio.
pub fn select(ib: f64, ob: f64, cfg: &SelectionConfig) -> bool {
    if !(ib > cfg.m) {
        return false;
    }
    if ob == 0.0 {
        return true;
    }
    ib / ob > cfg.d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub image_id: String,
    pub ib: Option<f64>,
    pub ob: Option<f64>,
    pub selected: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<SelectionError>,
}

/// One image for [`select_dataset`].
#[derive(Debug, Clone)]
pub struct SelectionInput<'a> {
    pub image_id: String,
    pub magnitudes: &'a MagnitudeMap,
    pub predicted_box: BBox,
}

/// Applies the statistics and the decision rule to every image, in input
/// order. Per-image failures are recorded and the image is not selected.
pub fn select_dataset(inputs: &[SelectionInput<'_>], cfg: &SelectionConfig) -> Vec<SelectionRecord> {
    inputs
        .par_iter()
        .map(|inp| match box_motion_stats(inp.magnitudes, &inp.predicted_box) {
            Ok((ib, ob)) => SelectionRecord {
                image_id: inp.image_id.clone(),
                ib: Some(ib),
                ob: Some(ob),
                selected: select(ib, ob, cfg),
                error: None,
            },
            Err(e) => SelectionRecord {
                image_id: inp.image_id.clone(),
                ib: None,
                ob: None,
                selected: false,
                error: Some(e),
            },
        })
        .collect()
}
