//! Synthetic scenes with known objects, camera motion and flow.
//!
//! A scene is a textured gray background, one or more colored objects and
//! optional static "context" regions whose color correlates with the object
//! class (so appearance alone cannot tell object from context). Flow is the
//! camera vector everywhere plus each object's own vector inside its box
//! plus i.i.d. Gaussian noise. The degraded mode imitates hallucinated flow:
//! boundaries are box-blurred and some scenes carry a damped object flow
//! together with a spurious moving blob in the background.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{box_features, RgbImage};
use crate::flowio::FlowField;
use crate::geometry::BBox;
use crate::milhead::{ImageLabels, ProposalFeatures};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub class: usize,
    pub bbox: BBox,
    /// Object motion on top of the camera motion, pixels/frame.
    pub flow: [f64; 2],
}

/// Static region whose color is tied to `class`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSpec {
    pub class: usize,
    pub bbox: BBox,
}

/// Moving region that is not an object (a flow artifact).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpuriousMotion {
    pub bbox: BBox,
    pub flow: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Degradation {
    /// Box-filter radius applied to the noise-free flow.
    pub blur_radius: usize,
    pub spurious: Vec<SpuriousMotion>,
}

impl Default for Degradation {
    fn default() -> Self {
        Self {
            blur_radius: 2,
            spurious: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Appearance {
    /// Std of the per-instance object color offset.
    pub object_jitter: f64,
    /// Std of the per-instance context color offset.
    pub context_jitter: f64,
    /// Std of per-pixel color noise.
    pub pixel_noise: f64,
}

impl Default for Appearance {
    fn default() -> Self {
        Self {
            object_jitter: 0.10,
            context_jitter: 0.10,
            pixel_noise: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    /// Number of proposals to emit (raised if the scene needs more).
    #[serde(default = "default_proposals")]
    pub proposals: usize,
    #[serde(default)]
    pub texture_seed: u64,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub contexts: Vec<ContextSpec>,
    #[serde(default)]
    pub camera_flow: [f64; 2],
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub appearance: Appearance,
    #[serde(default)]
    pub degradation: Option<Degradation>,
}

fn default_proposals() -> usize {
    10
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidScene(m));
        if self.width == 0 || self.height == 0 || self.classes == 0 {
            return bad("empty image or class set".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise sigma {}", self.noise_sigma));
        }
        for o in &self.objects {
            if o.class >= self.classes || !o.bbox.is_valid_in(self.width, self.height) {
                return bad(format!("object {o:?}"));
            }
            if o.bbox.width() < 2.0 || o.bbox.height() < 2.0 {
                return bad(format!("object box too small: {:?}", o.bbox));
            }
        }
        for c in &self.contexts {
            if c.class >= self.classes || !c.bbox.is_valid_in(self.width, self.height) {
                return bad(format!("context {c:?}"));
            }
        }
        if let Some(d) = &self.degradation {
            if d.spurious.iter().any(|s| !s.bbox.is_valid_in(self.width, self.height)) {
                return bad("spurious region outside image".into());
            }
        }
        Ok(())
    }

    pub fn has_moving_object(&self) -> bool {
        self.objects.iter().any(|o| o.flow != [0.0, 0.0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthBox {
    pub class: usize,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub id: String,
    pub flow: FlowField,
    pub proposals: ProposalFeatures,
    pub labels: ImageLabels,
    /// Ground truth for evaluation only.
    pub truth: Vec<TruthBox>,
}

/// Base colors for objects of class `c` and for its context.
pub fn class_colors(c: usize, classes: usize) -> ([f64; 3], [f64; 3]) {
    let hue = c as f64 / classes as f64;
    let object = hsv(hue, 0.65, 0.85);
    let context = hsv((hue + 0.5 / classes as f64).fract(), 0.55, 0.7);
    (object, context)
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor() as usize % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn fill(img: &mut RgbImage, b: &BBox, color: [f64; 3], noise: &Normal<f64>, rng: &mut ChaCha8Rng) {
    let (xs, ys) = b.pixel_ranges(img.width, img.height);
    for y in ys {
        for x in xs.clone() {
            let p = img.pixel_mut(x, y);
            for c in 0..3 {
                p[c] = (color[c] + noise.sample(rng)).clamp(0.0, 1.0) as f32;
            }
        }
    }
}

/// Renders the RGB frame. Deterministic in `(spec, seed)`.
pub fn render_rgb(spec: &SceneSpec, seed: u64) -> RgbImage {
    let mut tex = ChaCha8Rng::seed_from_u64(spec.texture_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_ed0f_c010);
    let pixel = Normal::new(0.0, spec.appearance.pixel_noise.max(0.0)).unwrap();
    let obj_jitter = Normal::new(0.0, spec.appearance.object_jitter.max(0.0)).unwrap();
    let ctx_jitter = Normal::new(0.0, spec.appearance.context_jitter.max(0.0)).unwrap();

    let mut img = RgbImage::filled(spec.width, spec.height, [0.5; 3]);
    let texture = Normal::new(0.0, 0.06).unwrap();
    for p in img.data.iter_mut() {
        let g = (0.5f64 + texture.sample(&mut tex)).clamp(0.0, 1.0) as f32;
        *p = [g; 3];
    }
    for c in &spec.contexts {
        let (_, base) = class_colors(c.class, spec.classes);
        let color = base.map(|v| v + ctx_jitter.sample(&mut rng));
        fill(&mut img, &c.bbox, color, &pixel, &mut rng);
    }
    for o in &spec.objects {
        let (base, _) = class_colors(o.class, spec.classes);
        let color = base.map(|v| v + obj_jitter.sample(&mut rng));
        fill(&mut img, &o.bbox, color, &pixel, &mut rng);
    }
    img
}

fn add_region(u: &mut [f64], v: &mut [f64], width: usize, height: usize, b: &BBox, flow: [f64; 2]) {
    let (xs, ys) = b.pixel_ranges(width, height);
    for y in ys {
        for x in xs.clone() {
            u[y * width + x] += flow[0];
            v[y * width + x] += flow[1];
        }
    }
}

fn box_blur(ch: &[f64], width: usize, height: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return ch.to_vec();
    }
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..height {
            for x in 0..width {
                let (mut s, mut n) = (0.0, 0.0);
                let (lo, hi, idx): (usize, usize, &dyn Fn(usize) -> usize) = if horizontal {
                    (x.saturating_sub(radius), (x + radius).min(width - 1), &|k| {
                        y * width + k
                    })
                } else {
                    (y.saturating_sub(radius), (y + radius).min(height - 1), &|k| {
                        k * width + x
                    })
                };
                for k in lo..=hi {
                    s += src[idx(k)];
                    n += 1.0;
                }
                out[y * width + x] = s / n;
            }
        }
        out
    };
    pass(&pass(ch, true), false)
}

/// Flow field of a scene. Deterministic in `(spec, seed)`.
pub fn render_flow(spec: &SceneSpec, seed: u64) -> FlowField {
    let (w, h) = (spec.width, spec.height);
    let mut u = vec![spec.camera_flow[0]; w * h];
    let mut v = vec![spec.camera_flow[1]; w * h];
    for o in &spec.objects {
        add_region(&mut u, &mut v, w, h, &o.bbox, o.flow);
    }
    if let Some(d) = &spec.degradation {
        for s in &d.spurious {
            add_region(&mut u, &mut v, w, h, &s.bbox, s.flow);
        }
        u = box_blur(&u, w, h, d.blur_radius);
        v = box_blur(&v, w, h, d.blur_radius);
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf10_0015e);
        let n = Normal::new(0.0, spec.noise_sigma).unwrap();
        for (a, b) in u.iter_mut().zip(v.iter_mut()) {
            *a += n.sample(&mut rng);
            *b += n.sample(&mut rng);
        }
    }
    let u = u.into_iter().map(|x| x as f32).collect();
    let v = v.into_iter().map(|x| x as f32).collect();
    FlowField::new(w, h, u, v).expect("synthetic flow is finite")
}

fn random_box(rng: &mut ChaCha8Rng, w: usize, h: usize, min: usize, max: usize) -> BBox {
    let bw = rng.random_range(min..=max.min(w)).max(1);
    let bh = rng.random_range(min..=max.min(h)).max(1);
    let x0 = rng.random_range(0..=w - bw);
    let y0 = rng.random_range(0..=h - bh);
    BBox::new(x0 as f64, y0 as f64, (x0 + bw) as f64, (y0 + bh) as f64)
}

/// Integer box near `b` with IoU ≥ 0.7.
fn aligned_box(b: &BBox, w: usize, h: usize, rng: &mut ChaCha8Rng) -> BBox {
    for _ in 0..100 {
        let j = |len: f64, rng: &mut ChaCha8Rng| {
            let m = (len * 0.08).round() as i64;
            rng.random_range(-m..=m) as f64
        };
        let c = BBox::new(
            (b.x_min + j(b.width(), rng)).clamp(0.0, w as f64 - 1.0),
            (b.y_min + j(b.height(), rng)).clamp(0.0, h as f64 - 1.0),
            (b.x_max + j(b.width(), rng)).clamp(1.0, w as f64),
            (b.y_max + j(b.height(), rng)).clamp(1.0, h as f64),
        );
        if c.is_valid_in(w, h) && c.iou(b) >= 0.7 {
            return c;
        }
    }
    *b
}

/// Part of `b` covering 35–45% of its area (IoU < 0.5).
fn part_box(b: &BBox, rng: &mut ChaCha8Rng) -> BBox {
    let frac = rng.random_range(0.35..0.45);
    match rng.random_range(0..4) {
        0 => BBox::new(b.x_min, b.y_min, (b.x_min + b.width() * frac).ceil(), b.y_max),
        1 => BBox::new((b.x_max - b.width() * frac).floor(), b.y_min, b.x_max, b.y_max),
        2 => BBox::new(b.x_min, b.y_min, b.x_max, (b.y_min + b.height() * frac).ceil()),
        _ => BBox::new(b.x_min, (b.y_max - b.height() * frac).floor(), b.x_max, b.y_max),
    }
}

fn proposal_boxes(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<BBox> {
    let (w, h) = (spec.width, spec.height);
    let objects: Vec<BBox> = spec.objects.iter().map(|o| o.bbox).collect();
    let max_iou = |b: &BBox| objects.iter().map(|o| o.iou(b)).fold(0.0, f64::max);
    let mut boxes = Vec::new();
    for o in &spec.objects {
        boxes.push(aligned_box(&o.bbox, w, h, rng));
    }
    let mut extra = Vec::new();
    for c in &spec.contexts {
        extra.push(c.bbox);
        if let Some(o) = spec.objects.iter().find(|o| o.class == c.class) {
            extra.push(o.bbox.union_hull(&c.bbox));
        }
    }
    for o in &spec.objects {
        extra.push(part_box(&o.bbox, rng));
    }
    boxes.extend(extra.into_iter().filter(|b| b.is_valid_in(w, h) && max_iou(b) < 0.5));

    let side_min = (w.min(h) / 8).max(1);
    let side_max = (w.min(h) / 2).max(side_min);
    let mut attempts = 0;
    while boxes.len() < spec.proposals.max(1) {
        let b = random_box(rng, w, h, side_min, side_max);
        attempts += 1;
        if max_iou(&b) < 0.5 || attempts > 10_000 {
            boxes.push(b);
        }
    }
    boxes.shuffle(rng);
    boxes
}

/// Renders one scene: flow, proposals with RGB features, labels and truth.
pub fn generate(spec: &SceneSpec, seed: u64) -> Result<SynthSample, SynthError> {
    generate_with_id(spec, seed, format!("scene-{seed:016x}"))
}

fn generate_with_id(spec: &SceneSpec, seed: u64, id: String) -> Result<SynthSample, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boxes = proposal_boxes(spec, &mut rng);
    let img = render_rgb(spec, seed);
    let phi = box_features(&img, &boxes);
    let proposals = ProposalFeatures::new(phi, boxes, spec.width, spec.height)
        .map_err(|e| SynthError::InvalidScene(e.to_string()))?;
    let present: Vec<usize> = spec.objects.iter().map(|o| o.class).collect();
    Ok(SynthSample {
        id,
        flow: render_flow(spec, seed),
        proposals,
        labels: ImageLabels::from_present(spec.classes, &present),
        truth: spec
            .objects
            .iter()
            .map(|o| TruthBox {
                class: o.class,
                bbox: o.bbox,
            })
            .collect(),
    })
}

/// SplitMix64 step, used to derive per-item seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generates every spec with a per-item seed; ids are `img-00000`, ….
pub fn generate_dataset(specs: &[SceneSpec], seed: u64) -> Result<Vec<SynthSample>, SynthError> {
    specs
        .par_iter()
        .enumerate()
        .map(|(i, s)| generate_with_id(s, derive_seed(seed, i as u64), format!("img-{i:05}")))
        .collect()
}

/// Scene distribution for the desk-scale benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub proposals: usize,
    pub train_size: usize,
    pub eval_size: usize,
    /// Object side length range in pixels.
    pub object_size: [usize; 2],
    /// Camera speed range, pixels/frame; zero range disables camera motion.
    pub camera_speed: [f64; 2],
    pub object_speed: [f64; 2],
    /// Probability that the object moves.
    pub moving_fraction: f64,
    /// Probability that a class-colored context region accompanies the object.
    pub context_rate: f64,
    pub noise_sigma: f64,
    pub appearance: Appearance,
    pub degraded: bool,
    /// Degraded mode: probability of a failed flow estimate.
    pub failure_rate: f64,
    pub blur_radius: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            classes: 2,
            proposals: 10,
            train_size: 200,
            eval_size: 50,
            object_size: [12, 18],
            camera_speed: [1.0, 5.0],
            object_speed: [2.0, 4.0],
            moving_fraction: 0.9,
            context_rate: 1.0,
            noise_sigma: 0.2,
            appearance: Appearance::default(),
            degraded: false,
            failure_rate: 0.5,
            blur_radius: 2,
        }
    }
}

impl BenchmarkConfig {
    /// Same distribution with degraded flow.
    pub fn degraded(mut self) -> Self {
        self.degraded = true;
        self
    }

    /// Same distribution with clean flow.
    pub fn standard(mut self) -> Self {
        self.degraded = false;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidScene(m.to_string()));
        if self.classes == 0 || self.proposals == 0 {
            return bad("classes and proposals must be positive");
        }
        let [lo, hi] = self.object_size;
        if lo < 2 || lo > hi || 3 * hi > self.width.min(self.height) {
            return bad("object size range does not fit the image");
        }
        let ranges = [self.camera_speed, self.object_speed];
        if ranges
            .iter()
            .any(|r| !(r[0] >= 0.0 && r[0] <= r[1] && r[1].is_finite()))
        {
            return bad("speed ranges must be ordered and non-negative");
        }
        for p in [self.moving_fraction, self.context_rate, self.failure_rate] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be non-negative");
        }
        Ok(())
    }

    fn speed(range: [f64; 2], rng: &mut ChaCha8Rng) -> [f64; 2] {
        if range[1] <= 0.0 {
            return [0.0, 0.0];
        }
        let s = if range[0] < range[1] {
            rng.random_range(range[0]..range[1])
        } else {
            range[0]
        };
        let a = rng.random_range(0.0..TAU);
        [s * a.cos(), s * a.sin()]
    }

    /// Samples one scene.
    pub fn sample_scene(&self, rng: &mut ChaCha8Rng) -> SceneSpec {
        let (w, h) = (self.width, self.height);
        let class = rng.random_range(0..self.classes);
        let (obj, ctx) = loop {
            let ow = rng.random_range(self.object_size[0]..=self.object_size[1]);
            let oh = rng.random_range(self.object_size[0]..=self.object_size[1]);
            let ox = rng.random_range(0..=w - ow);
            let oy = rng.random_range(0..=h - oh);
            let obj = BBox::new(ox as f64, oy as f64, (ox + ow) as f64, (oy + oh) as f64);
            if rng.random_bool(1.0 - self.context_rate) {
                break (obj, None);
            }
            // context is larger than the object so the union box has IoU < 0.5
            let along = rng.random_range(2..=6);
            let across = rng.random_range(0..=3);
            let mut sides = [0, 1, 2, 3];
            sides.shuffle(rng);
            let placed = sides.iter().find_map(|&side| {
                let (cw, ch) = if side < 2 {
                    (ow + along, oh + across)
                } else {
                    (ow + across, oh + along)
                };
                let (ox, oy, ow, oh) = (ox as i64, oy as i64, ow as i64, oh as i64);
                let (cw, ch) = (cw as i64, ch as i64);
                let (cx, cy) = match side {
                    0 => (ox - cw, oy - (ch - oh) / 2),
                    1 => (ox + ow, oy - (ch - oh) / 2),
                    2 => (ox - (cw - ow) / 2, oy - ch),
                    _ => (ox - (cw - ow) / 2, oy + oh),
                };
                let b = BBox::new(cx as f64, cy as f64, (cx + cw) as f64, (cy + ch) as f64);
                b.is_valid_in(w, h).then_some(b)
            });
            if let Some(c) = placed {
                break (obj, Some(c));
            }
        };
        let moving = rng.random_bool(self.moving_fraction);
        let mut object_flow = if moving {
            Self::speed(self.object_speed, rng)
        } else {
            [0.0, 0.0]
        };
        let camera_flow = Self::speed(self.camera_speed, rng);
        let degradation = self.degraded.then(|| {
            let mut d = Degradation {
                blur_radius: self.blur_radius,
                spurious: Vec::new(),
            };
            if rng.random_bool(self.failure_rate) {
                object_flow = object_flow.map(|c| 0.1 * c);
                let lo = self.object_size[0];
                let hi = self.object_size[1];
                let bbox = (0..1000)
                    .map(|_| random_box(rng, w, h, lo, hi))
                    .find(|b| b.intersection(&obj) == 0.0 && ctx.is_none_or(|c| b.intersection(&c) == 0.0))
                    .unwrap_or_else(|| random_box(rng, w, h, lo, hi));
                let mut flow = Self::speed(self.object_speed, rng);
                if flow == [0.0, 0.0] {
                    flow = [self.object_speed[1].max(1.0), 0.0];
                }
                d.spurious.push(SpuriousMotion { bbox, flow });
            }
            d
        });
        SceneSpec {
            width: w,
            height: h,
            classes: self.classes,
            proposals: self.proposals,
            texture_seed: rng.random(),
            objects: vec![ObjectSpec {
                class,
                bbox: obj,
                flow: object_flow,
            }],
            contexts: ctx.map(|bbox| ContextSpec { class, bbox }).into_iter().collect(),
            camera_flow,
            noise_sigma: self.noise_sigma,
            appearance: self.appearance,
            degradation,
        }
    }

    pub fn sample_specs(&self, n: usize, seed: u64) -> Vec<SceneSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample_scene(&mut rng)).collect()
    }

    /// Disjoint train and eval sets drawn from independent streams.
    pub fn generate(&self, seed: u64) -> Result<Benchmark, SynthError> {
        self.validate()?;
        let train_specs = self.sample_specs(self.train_size, derive_seed(seed, 0));
        let eval_specs = self.sample_specs(self.eval_size, derive_seed(seed, 1));
        Ok(Benchmark {
            train: generate_dataset(&train_specs, derive_seed(seed, 2))?,
            eval: generate_dataset(&eval_specs, derive_seed(seed, 3))?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub train: Vec<SynthSample>,
    pub eval: Vec<SynthSample>,
}
