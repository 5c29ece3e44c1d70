mod common;

use common::*;
use motion_wsod::camnorm::{corner_stats, CornerFraction};
use motion_wsod::contrastive::{nce_loss, similarity_matrix};
use motion_wsod::flowio::{magnitude, normalize_magnitudes};
use motion_wsod::milhead::{forward, mil_loss};
use motion_wsod::selection::box_motion_stats;
use motion_wsod::{BBox, EmbeddingBatch, ImageLabels, ProposalFeatures};
use rand::Rng;

const TOL: f64 = 1e-9;
const INSTANCES: u64 = 60;

#[test]
fn mil_forward_and_loss_match_scalar_loops() {
    let mut rng = rng(11);
    for _ in 0..INSTANCES {
        let (r, c, d) = (
            rng.random_range(1..=6),
            rng.random_range(1..=4),
            rng.random_range(1..=8),
        );
        let head = random_head(c, d, &mut rng);
        let phi = random_matrix(r, d, 2.0, &mut rng);
        let boxes = (0..r).map(|i| BBox::new(0.0, 0.0, 1.0 + i as f64, 2.0)).collect();
        let feats = ProposalFeatures::new(phi.clone(), boxes, 16, 16).unwrap();
        let out = forward(&head, &feats).unwrap();
        let oracle = mil_forward_ref(&head, &phi);
        for i in 0..r {
            for k in 0..c {
                assert_close(out.p_det.get(i, k), oracle.p_det[i][k], TOL, "p_det");
                assert_close(out.p_cls.get(i, k), oracle.p_cls[i][k], TOL, "p_cls");
            }
        }
        for k in 0..c {
            assert_close(out.p_hat[k], oracle.p_hat[k], TOL, "p_hat");
        }
        let y: Vec<u8> = (0..c).map(|_| rng.random_range(0..=1)).collect();
        let loss = mil_loss(&out, &ImageLabels::new(y.clone()).unwrap()).unwrap();
        assert_close(loss, bce_ref(&oracle.p_hat, &y), TOL, "mil loss");
    }
}

#[test]
fn the_spec_sized_mil_instance() {
    // R=3, C=2, D=4 at the tighter 1e-10
    let mut rng = rng(5);
    let head = random_head(2, 4, &mut rng);
    let phi = random_matrix(3, 4, 1.0, &mut rng);
    let boxes = vec![BBox::new(0.0, 0.0, 2.0, 2.0); 3];
    let out = forward(&head, &ProposalFeatures::new(phi.clone(), boxes, 4, 4).unwrap()).unwrap();
    let oracle = mil_forward_ref(&head, &phi);
    for k in 0..2 {
        assert_close(out.p_hat[k], oracle.p_hat[k], 1e-10, "p_hat");
    }
}

#[test]
fn nce_matches_explicit_similarities() {
    let mut rng = rng(12);
    for n in 0..INSTANCES {
        let b = if n == 0 { 4 } else { rng.random_range(1..=6) };
        let dim = rng.random_range(1..=16);
        let img = random_matrix(b, dim, 1.0, &mut rng);
        let mot = random_matrix(b, dim, 1.0, &mut rng);
        let rho = rng.random_range(0.05..2.0);
        let batch = EmbeddingBatch::new(img.clone(), mot.clone(), rho).unwrap();
        assert_close(nce_loss(&batch).unwrap(), nce_ref(&img, &mot, rho), 1e-10, "nce");
        let s = similarity_matrix(&batch).unwrap();
        let cos = |a: &[f64], c: &[f64]| {
            let dot: f64 = a.iter().zip(c).map(|(x, y)| x * y).sum();
            dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * c.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        for i in 0..b {
            for j in 0..b {
                assert_close(s.get(i, j), cos(img.row(i), mot.row(j)) / rho, 1e-10, "similarity");
            }
        }
    }
}

#[test]
fn corner_stats_match_scalar_loops() {
    let mut rng = rng(13);
    for _ in 0..INSTANCES {
        let (w, h) = (rng.random_range(2..40), rng.random_range(2..40));
        let flow = random_flow(w, h, 6.0, &mut rng);
        let f = rng.random_range(0.01..=0.5);
        let stats = corner_stats(&flow, CornerFraction::new(f).unwrap());
        for (s, (u, v, m)) in stats.iter().zip(corner_ref(&flow, f)) {
            assert_close(s.mean_flow[0], u, TOL, "corner u");
            assert_close(s.mean_flow[1], v, TOL, "corner v");
            assert_close(s.mean_magnitude, m, TOL, "corner magnitude");
        }
    }
}

#[test]
fn box_stats_match_scalar_loops() {
    let mut rng = rng(14);
    for n in 0..INSTANCES {
        let (w, h) = (rng.random_range(2..30), rng.random_range(2..30));
        let flow = random_flow(w, h, 3.0, &mut rng);
        let mag = normalize_magnitudes(&magnitude(&flow));
        let b = if n % 2 == 0 {
            random_box(w, h, &mut rng)
        } else {
            // fractional boxes exercise the pixel-center rule
            let x0 = rng.random_range(0.0..w as f64 - 1.0);
            let y0 = rng.random_range(0.0..h as f64 - 1.0);
            BBox::new(x0, y0, x0 + 1.0, y0 + 1.0)
        };
        let (ib, ob) = box_motion_stats(&mag, &b).unwrap();
        let (ri, ro) = box_stats_ref(mag.values(), w, h, &b);
        assert_close(ib, ri, TOL, "ib");
        assert_close(ob, ro, TOL, "ob");
    }
}

#[test]
fn magnitude_matches_per_pixel_recompute() {
    let mut rng = rng(15);
    for _ in 0..INSTANCES {
        let flow = random_flow(rng.random_range(1..20), rng.random_range(1..20), 50.0, &mut rng);
        let mag = magnitude(&flow);
        for (k, (&u, &v)) in flow.u().iter().zip(flow.v()).enumerate() {
            let want = ((u as f64).powi(2) + (v as f64).powi(2)).sqrt();
            assert!((mag.values()[k] - want).abs() <= 1e-6 * want.max(1e-30));
        }
    }
}
