//! Central finite-difference checks of the hand-written gradients.
//!
//! The numerical side only ever calls the forward losses, so it stays
//! independent of the analytic backward code it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::contrastive::{nce_backward, nce_loss, EmbeddingBatch};
use crate::geometry::BBox;
use crate::linalg::Matrix;
use crate::milhead::{forward, mil_backward, mil_loss, ImageLabels, MilGradients, MilHead, ProposalFeatures};
use crate::numeric::softmax;
use crate::trainer::{batch_objective, Model, MotionView};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error. Components whose true value is
/// below this are compared absolutely at this scale, where central
/// differences with `STEP` hit their round-off limit.
pub const REL_FLOOR: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub instances: usize,
    pub parameters_checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl SuiteReport {
    fn new(suite: &str, instances: usize, errors: impl IntoIterator<Item = f64>) -> Self {
        let (mut n, mut max) = (0, 0.0f64);
        for e in errors {
            n += 1;
            max = if e.is_nan() { f64::INFINITY } else { max.max(e) };
        }
        Self {
            suite: suite.to_string(),
            instances,
            parameters_checked: n,
            max_rel_error: max,
            tolerance: TOLERANCE,
            passed: max < TOLERANCE,
        }
    }
}

/// Flattens head parameters as `w_det, b_det, w_cls, b_cls`.
pub fn flatten_head(h: &MilHead) -> Vec<f64> {
    let mut v = h.w_det.as_slice().to_vec();
    v.extend(&h.b_det);
    v.extend(h.w_cls.as_slice());
    v.extend(&h.b_cls);
    v
}

pub fn unflatten_head(v: &[f64], classes: usize, dim: usize) -> MilHead {
    let cd = classes * dim;
    MilHead {
        w_det: Matrix::from_vec(classes, dim, v[..cd].to_vec()).unwrap(),
        b_det: v[cd..cd + classes].to_vec(),
        w_cls: Matrix::from_vec(classes, dim, v[cd + classes..2 * cd + classes].to_vec()).unwrap(),
        b_cls: v[2 * cd + classes..].to_vec(),
    }
}

fn flatten_grads(g: &MilGradients) -> Vec<f64> {
    let mut v = g.w_det.as_slice().to_vec();
    v.extend(&g.b_det);
    v.extend(g.w_cls.as_slice());
    v.extend(&g.b_cls);
    v
}

/// Random MIL instance with `R ≤ 5`, `C ≤ 4`, `D ≤ 8`.
pub fn random_mil_instance(rng: &mut ChaCha8Rng) -> (MilHead, ProposalFeatures, ImageLabels) {
    let r = rng.random_range(1..=5);
    let c = rng.random_range(1..=4);
    let d = rng.random_range(1..=8);
    let phi = Matrix::from_fn(r, d, |_, _| rng.random_range(-1.0..1.0));
    let boxes = (0..r).map(|i| BBox::new(i as f64, 0.0, i as f64 + 1.0, 1.0)).collect();
    let feats = ProposalFeatures::new(phi, boxes, 8, 8).unwrap();
    let head = MilHead::random(c, d, 1.0, rng);
    let mut head = head;
    for b in head.b_det.iter_mut().chain(head.b_cls.iter_mut()) {
        *b = rng.random_range(-0.5..0.5);
    }
    let labels = ImageLabels::new((0..c).map(|_| rng.random_range(0..=1)).collect()).unwrap();
    (head, feats, labels)
}

/// Per-parameter relative errors for one MIL instance.
pub fn mil_errors(head: &MilHead, feats: &ProposalFeatures, labels: &ImageLabels) -> Vec<f64> {
    let (c, d) = (head.classes(), head.dim());
    let analytic = flatten_grads(&mil_backward(head, feats, labels).unwrap());
    let numeric = central_difference(
        |p| {
            let h = unflatten_head(p, c, d);
            mil_loss(&forward(&h, feats).unwrap(), labels).unwrap()
        },
        &flatten_head(head),
        STEP,
    );
    analytic.iter().zip(&numeric).map(|(&a, &n)| rel_error(a, n)).collect()
}

pub fn check_milhead(instances: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let errors: Vec<f64> = (0..instances)
        .flat_map(|_| {
            let (h, f, l) = random_mil_instance(&mut rng);
            mil_errors(&h, &f, &l)
        })
        .collect();
    SuiteReport::new("milhead", instances, errors)
}

/// Random batch with `2 ≤ B ≤ 5`, `1 ≤ dim ≤ 16`.
pub fn random_embedding_batch(rng: &mut ChaCha8Rng) -> EmbeddingBatch {
    let b = rng.random_range(2..=5);
    let dim = rng.random_range(1..=16);
    let mut m = || loop {
        let m = Matrix::from_fn(b, dim, |_, _| rng.random_range(-1.0..1.0));
        if (0..b).all(|r| crate::linalg::norm(m.row(r)) > 0.1) {
            return m;
        }
    };
    let (img, mot) = (m(), m());
    EmbeddingBatch::new(img, mot, rng.random_range(0.1..2.0)).unwrap()
}

/// Per-parameter relative errors for one batch: image rows, motion rows, ρ.
pub fn nce_errors(batch: &EmbeddingBatch) -> Vec<f64> {
    let (b, dim) = (batch.len(), batch.dim());
    let (_, g) = nce_backward(batch).unwrap();
    let mut x = batch.img_proj().as_slice().to_vec();
    x.extend(batch.mot_proj().as_slice());
    x.push(batch.rho());
    let n = b * dim;
    let numeric = central_difference(
        |p| {
            let img = Matrix::from_vec(b, dim, p[..n].to_vec()).unwrap();
            let mot = Matrix::from_vec(b, dim, p[n..2 * n].to_vec()).unwrap();
            nce_loss(&EmbeddingBatch::new(img, mot, p[2 * n]).unwrap()).unwrap()
        },
        &x,
        STEP,
    );
    let mut analytic = g.img_proj.as_slice().to_vec();
    analytic.extend(g.mot_proj.as_slice());
    analytic.push(g.rho);
    analytic.iter().zip(&numeric).map(|(&a, &n)| rel_error(a, n)).collect()
}

pub fn check_contrastive(instances: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let errors: Vec<f64> = (0..instances)
        .flat_map(|_| nce_errors(&random_embedding_batch(&mut rng)))
        .collect();
    SuiteReport::new("contrastive", instances, errors)
}

/// Random mini-batch for the combined MIL + NCE objective.
pub struct ObjectiveInstance {
    pub model: Model,
    pub images: Vec<(ProposalFeatures, ImageLabels, MotionView)>,
    pub lambda: f64,
}

pub fn random_objective_instance(rng: &mut ChaCha8Rng) -> ObjectiveInstance {
    let b = rng.random_range(2..=4);
    let c = rng.random_range(1..=3);
    let d = rng.random_range(2..=6);
    let e = rng.random_range(2..=6);
    let images = (0..b)
        .map(|_| {
            let r = rng.random_range(2..=5);
            let phi = Matrix::from_fn(r, d, |_, _| rng.random_range(-1.0..1.0));
            let boxes = (0..r).map(|i| BBox::new(i as f64, 0.0, i as f64 + 1.0, 1.0)).collect();
            let feats = ProposalFeatures::new(phi, boxes, 8, 8).unwrap();
            let mut y: Vec<u8> = (0..c).map(|_| rng.random_range(0..=1)).collect();
            y[rng.random_range(0..c)] = 1;
            let energy: Vec<f64> = (0..r).map(|_| rng.random_range(-2.0..2.0)).collect();
            let motion = MotionView {
                features: Matrix::from_fn(r, d, |_, _| rng.random_range(-1.0..1.0)),
                weights: softmax(&energy),
            };
            (feats, ImageLabels::new(y).unwrap(), motion)
        })
        .collect();
    ObjectiveInstance {
        model: Model {
            head: MilHead::random(c, d, 1.0, rng),
            projection: Matrix::from_fn(e, d, |_, _| rng.random_range(-1.0..1.0)),
            temperature: rng.random_range(0.2..1.5),
        },
        images,
        lambda: rng.random_range(0.5..2.0),
    }
}

/// Per-parameter relative errors of the batch objective over head weights,
/// projection and temperature.
pub fn objective_errors(inst: &ObjectiveInstance) -> Vec<f64> {
    let batch: Vec<_> = inst.images.iter().map(|(f, l, m)| (f, l, Some(m))).collect();
    let (c, d) = (inst.model.head.classes(), inst.model.head.dim());
    let (pr, pc) = (inst.model.projection.rows(), inst.model.projection.cols());
    let g = batch_objective(&inst.model, &batch, inst.lambda, true).unwrap();
    let n_head = flatten_head(&inst.model.head).len();
    let mut x = flatten_head(&inst.model.head);
    x.extend(inst.model.projection.as_slice());
    x.push(inst.model.temperature);
    let numeric = central_difference(
        |p| {
            let model = Model {
                head: unflatten_head(&p[..n_head], c, d),
                projection: Matrix::from_vec(pr, pc, p[n_head..n_head + pr * pc].to_vec()).unwrap(),
                temperature: p[n_head + pr * pc],
            };
            let o = batch_objective(&model, &batch, inst.lambda, true).unwrap();
            o.mil_loss + inst.lambda * o.nce_loss.unwrap()
        },
        &x,
        STEP,
    );
    let mut analytic = flatten_grads(&g.head);
    analytic.extend(g.projection.as_slice());
    analytic.push(g.temperature);
    analytic.iter().zip(&numeric).map(|(&a, &n)| rel_error(a, n)).collect()
}

pub fn check_objective(instances: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let errors: Vec<f64> = (0..instances)
        .flat_map(|_| objective_errors(&random_objective_instance(&mut rng)))
        .collect();
    SuiteReport::new("trainer-objective", instances, errors)
}

/// Markdown pass/fail table.
pub fn report_table(reports: &[SuiteReport]) -> String {
    let mut s =
        String::from("| suite | instances | params | max rel err | tol | result |\n|---|---|---|---|---|---|\n");
    for r in reports {
        s.push_str(&format!(
            "| {} | {} | {} | {:.3e} | {:.0e} | {} |\n",
            r.suite,
            r.instances,
            r.parameters_checked,
            r.max_rel_error,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        ));
    }
    s
}
