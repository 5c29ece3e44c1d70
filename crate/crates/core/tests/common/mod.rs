//! Scalar-loop reference implementations written directly from the
//! definitions, sharing no code with the library beyond its data types.
#![allow(dead_code, clippy::needless_range_loop)]

use motion_wsod::{BBox, FlowField, Matrix, MilHead};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(r: usize, c: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

pub fn random_head(c: usize, d: usize, rng: &mut ChaCha8Rng) -> MilHead {
    MilHead {
        w_det: random_matrix(c, d, 1.0, rng),
        b_det: (0..c).map(|_| rng.random_range(-1.0..1.0)).collect(),
        w_cls: random_matrix(c, d, 1.0, rng),
        b_cls: (0..c).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

pub struct MilRef {
    pub p_det: Vec<Vec<f64>>,
    pub p_cls: Vec<Vec<f64>>,
    pub p_hat: Vec<f64>,
}

/// Detection softmax over proposals, classification softmax over classes,
/// image score `Σ_i p_det·p_cls` clamped to `[1e-7, 1 − 1e-7]`.
pub fn mil_forward_ref(head: &MilHead, phi: &Matrix) -> MilRef {
    let (r, c, d) = (phi.rows(), head.w_det.rows(), phi.cols());
    let score = |w: &Matrix, b: &[f64], i: usize, k: usize| {
        let mut s = b[k];
        for j in 0..d {
            s += w.get(k, j) * phi.get(i, j);
        }
        s
    };
    let mut p_det = vec![vec![0.0; c]; r];
    for k in 0..c {
        let mut z = 0.0;
        for i in 0..r {
            z += score(&head.w_det, &head.b_det, i, k).exp();
        }
        for i in 0..r {
            p_det[i][k] = score(&head.w_det, &head.b_det, i, k).exp() / z;
        }
    }
    let mut p_cls = vec![vec![0.0; c]; r];
    for i in 0..r {
        let mut z = 0.0;
        for k in 0..c {
            z += score(&head.w_cls, &head.b_cls, i, k).exp();
        }
        for k in 0..c {
            p_cls[i][k] = score(&head.w_cls, &head.b_cls, i, k).exp() / z;
        }
    }
    let p_hat = (0..c)
        .map(|k| {
            let mut s = 0.0;
            for i in 0..r {
                s += p_det[i][k] * p_cls[i][k];
            }
            s.clamp(1e-7, 1.0 - 1e-7)
        })
        .collect();
    MilRef { p_det, p_cls, p_hat }
}

pub fn bce_ref(p_hat: &[f64], y: &[u8]) -> f64 {
    let mut l = 0.0;
    for (p, &t) in p_hat.iter().zip(y) {
        l -= if t == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    l
}

/// Symmetric NCE with every similarity formed explicitly.
pub fn nce_ref(img: &Matrix, mot: &Matrix, rho: f64) -> f64 {
    let b = img.rows();
    let unit = |m: &Matrix, r: usize| {
        let n = m.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
        m.row(r).iter().map(|x| x / n).collect::<Vec<_>>()
    };
    let mut s = vec![vec![0.0; b]; b];
    for a in 0..b {
        for c in 0..b {
            let (x, y) = (unit(img, a), unit(mot, c));
            s[a][c] = x.iter().zip(&y).map(|(p, q)| p * q).sum::<f64>() / rho;
        }
    }
    let (mut rows, mut cols) = (0.0, 0.0);
    for a in 0..b {
        let zr: f64 = (0..b).map(|c| s[a][c].exp()).sum();
        let zc: f64 = (0..b).map(|c| s[c][a].exp()).sum();
        rows -= (s[a][a].exp() / zr).ln();
        cols -= (s[a][a].exp() / zc).ln();
    }
    (rows / b as f64 + cols / b as f64) / 2.0
}

/// Corner means over `⌈f·W⌉ × ⌈f·H⌉` windows in the order top-left,
/// top-right, bottom-left, bottom-right: `(mean u, mean v, mean |flow|)`.
pub fn corner_ref(flow: &FlowField, f: f64) -> [(f64, f64, f64); 4] {
    let (w, h) = (flow.width(), flow.height());
    let cw = ((f * w as f64).ceil() as usize).clamp(1, w);
    let ch = ((f * h as f64).ceil() as usize).clamp(1, h);
    let origins = [(0, 0), (w - cw, 0), (0, h - ch), (w - cw, h - ch)];
    origins.map(|(x0, y0)| {
        let (mut su, mut sv, mut sm) = (0.0, 0.0, 0.0);
        for y in y0..y0 + ch {
            for x in x0..x0 + cw {
                let (u, v) = flow.at(x, y);
                let (u, v) = (u as f64, v as f64);
                su += u;
                sv += v;
                sm += (u * u + v * v).sqrt();
            }
        }
        let n = (cw * ch) as f64;
        (su / n, sv / n, sm / n)
    })
}

/// Pixel `(x, y)` is inside when its center `(x + .5, y + .5)` lies in the
/// closed box.
pub fn inside_ref(b: &BBox, x: usize, y: usize) -> bool {
    let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
    b.x_min <= cx && cx <= b.x_max && b.y_min <= cy && cy <= b.y_max
}

/// `(ib, ob)`: means of `values` (row-major, `w × h`) inside / outside `b`.
pub fn box_stats_ref(values: &[f64], w: usize, h: usize, b: &BBox) -> (f64, f64) {
    let (mut si, mut ni, mut so, mut no) = (0.0, 0, 0.0, 0);
    for y in 0..h {
        for x in 0..w {
            let m = values[y * w + x];
            if inside_ref(b, x, y) {
                si += m;
                ni += 1;
            } else {
                so += m;
                no += 1;
            }
        }
    }
    (si / ni as f64, so / no as f64)
}

pub fn random_flow(w: usize, h: usize, scale: f32, rng: &mut ChaCha8Rng) -> FlowField {
    FlowField::from_fn(w, h, |_, _| {
        (rng.random_range(-scale..scale), rng.random_range(-scale..scale))
    })
}

/// Random integer box inside `w × h` with at least one pixel center inside
/// and one outside.
pub fn random_box(w: usize, h: usize, rng: &mut ChaCha8Rng) -> BBox {
    loop {
        let x0 = rng.random_range(0..w);
        let y0 = rng.random_range(0..h);
        let x1 = rng.random_range(x0 + 1..=w);
        let y1 = rng.random_range(y0 + 1..=h);
        if (x1 - x0) * (y1 - y0) < w * h {
            return BBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64);
        }
    }
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (tol {tol})");
}

/// Outcome of camera-motion removal on one scene with known ground truth.
#[derive(Debug)]
pub struct Recovery {
    pub camera: [f64; 2],
    /// Magnitude of the mean background flow before and after.
    pub before: f64,
    pub after: f64,
    /// Largest deviation of the recovered mean object flow from the true
    /// object-relative flow, over objects and components.
    pub relative_error: f64,
}

/// Scene with camera flow magnitude in [1, 5] and objects kept away from
/// the corner windows, then normalized with the default corner fraction.
pub fn camera_recovery(seed: u64, sigma: f64, w: usize, h: usize) -> Recovery {
    use motion_wsod::camnorm::{normalize_camera_motion, CornerFraction};
    use motion_wsod::synth::{render_flow, ObjectSpec, SceneSpec};
    let mut r = rng(seed);
    let speed = r.random_range(1.0..=5.0);
    let angle = r.random_range(0.0..std::f64::consts::TAU);
    let camera = [speed * angle.cos(), speed * angle.sin()];
    let cf = CornerFraction::default();
    let (_, ch) = cf.window(w, h);
    let mut objects = Vec::new();
    for _ in 0..r.random_range(1..=3) {
        let bw = r.random_range(w / 8..=w / 4) as f64;
        let bh = r.random_range(h / 8..=h / 4) as f64;
        // object rows stay strictly between the top and bottom windows
        let x0 = r.random_range(0.0..w as f64 - bw).floor();
        let y0 = r.random_range(ch as f64 + 1.0..h as f64 - ch as f64 - bh - 1.0).floor();
        let speed = r.random_range(0.5..4.0);
        let a = r.random_range(0.0..std::f64::consts::TAU);
        let bbox = BBox::new(x0, y0, x0 + bw, y0 + bh);
        // overlapping objects would add their flows; keep them disjoint
        if objects.iter().all(|o: &ObjectSpec| o.bbox.intersection(&bbox) == 0.0) {
            objects.push(ObjectSpec {
                class: 0,
                bbox,
                flow: [speed * a.cos(), speed * a.sin()],
            });
        }
    }
    let spec = SceneSpec {
        width: w,
        height: h,
        classes: 1,
        proposals: 1,
        texture_seed: 0,
        objects,
        contexts: vec![],
        camera_flow: camera,
        noise_sigma: sigma,
        appearance: Default::default(),
        degradation: None,
    };
    let flow = render_flow(&spec, seed);
    let (out, _) = normalize_camera_motion(&flow, cf);
    let region_mean = |f: &FlowField, keep: &dyn Fn(usize, usize) -> bool| {
        let (mut su, mut sv, mut n) = (0.0, 0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                if keep(x, y) {
                    su += f.u()[y * w + x] as f64;
                    sv += f.v()[y * w + x] as f64;
                    n += 1.0;
                }
            }
        }
        [su / n, sv / n]
    };
    let in_any = |x: usize, y: usize| spec.objects.iter().any(|o| inside_ref(&o.bbox, x, y));
    let bg = |x: usize, y: usize| !in_any(x, y);
    let norm = |a: [f64; 2]| a[0].hypot(a[1]);
    let before = norm(region_mean(&flow, &bg));
    let after = norm(region_mean(&out, &bg));
    let mut relative_error: f64 = 0.0;
    for o in &spec.objects {
        let m = region_mean(&out, &|x, y| inside_ref(&o.bbox, x, y));
        relative_error = relative_error
            .max((m[0] - o.flow[0]).abs())
            .max((m[1] - o.flow[1]).abs());
    }
    Recovery {
        camera,
        before,
        after,
        relative_error,
    }
}
