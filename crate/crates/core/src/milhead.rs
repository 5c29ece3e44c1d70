//! Multiple-instance detection head.
//!
//! Two parallel linear layers score every proposal for every class. The
//! detection scores are softmaxed over proposals, the classification scores
//! over classes, and their elementwise product summed over proposals gives
//! the image-level class prediction trained with binary cross-entropy.

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::linalg::{dot, Matrix};
use crate::numeric::softmax_into;

/// Clamp applied to image-level predictions before the log.
pub const PRED_EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum MilError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid proposals: {0}")]
    InvalidProposals(String),
    #[error("labels must be 0 or 1")]
    NonBinaryLabel,
}

/// Proposal features `φ(v_i)` (one row per proposal) and their boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProposalFeaturesRepr", into = "ProposalFeaturesRepr")]
pub struct ProposalFeatures {
    image_width: usize,
    image_height: usize,
    phi: Matrix,
    boxes: Vec<BBox>,
}

#[derive(Serialize, Deserialize)]
struct ProposalFeaturesRepr {
    image_width: usize,
    image_height: usize,
    features: Matrix,
    boxes: Vec<BBox>,
}

impl TryFrom<ProposalFeaturesRepr> for ProposalFeatures {
    type Error = MilError;
    fn try_from(r: ProposalFeaturesRepr) -> Result<Self, MilError> {
        ProposalFeatures::new(r.features, r.boxes, r.image_width, r.image_height)
    }
}

impl From<ProposalFeatures> for ProposalFeaturesRepr {
    fn from(p: ProposalFeatures) -> Self {
        Self {
            image_width: p.image_width,
            image_height: p.image_height,
            features: p.phi,
            boxes: p.boxes,
        }
    }
}

impl ProposalFeatures {
    pub fn new(phi: Matrix, boxes: Vec<BBox>, image_width: usize, image_height: usize) -> Result<Self, MilError> {
        if phi.rows() == 0 {
            return Err(MilError::InvalidProposals("no proposals".into()));
        }
        if phi.rows() != boxes.len() {
            return Err(MilError::DimensionMismatch(format!(
                "{} feature rows for {} boxes",
                phi.rows(),
                boxes.len()
            )));
        }
        if !phi.is_finite() {
            return Err(MilError::InvalidProposals("non-finite feature".into()));
        }
        if let Some(i) = boxes.iter().position(|b| !b.is_valid_in(image_width, image_height)) {
            return Err(MilError::InvalidProposals(format!(
                "box {i} is empty or outside the {image_width}x{image_height} image"
            )));
        }
        Ok(Self {
            image_width,
            image_height,
            phi,
            boxes,
        })
    }

    pub fn len(&self) -> usize {
        self.phi.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.phi.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.phi
    }

    pub fn boxes(&self) -> &[BBox] {
        &self.boxes
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.image_width, self.image_height)
    }
}

/// Binary image-level labels `y_c`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct ImageLabels(Vec<u8>);

impl ImageLabels {
    pub fn new(y: Vec<u8>) -> Result<Self, MilError> {
        if y.iter().any(|&v| v > 1) {
            return Err(MilError::NonBinaryLabel);
        }
        Ok(Self(y))
    }

    /// Labels with the given classes present out of `classes`.
    pub fn from_present(classes: usize, present: &[usize]) -> Self {
        let mut y = vec![0; classes];
        for &c in present {
            y[c] = 1;
        }
        Self(y)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, c: usize) -> bool {
        self.0[c] == 1
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn present(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter_map(|(c, &y)| (y == 1).then_some(c))
    }
}

impl TryFrom<Vec<u8>> for ImageLabels {
    type Error = MilError;
    fn try_from(y: Vec<u8>) -> Result<Self, MilError> {
        Self::new(y)
    }
}

impl From<ImageLabels> for Vec<u8> {
    fn from(l: ImageLabels) -> Self {
        l.0
    }
}

/// How the summed proposal evidence becomes `p̂_c`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// `clamp(s, ε, 1-ε)`; the sum is already a probability.
    #[default]
    Clamp,
    /// Literal logistic `1 / (1 + e^{-s})`, kept for comparison.
    Logistic,
}

impl Aggregation {
    fn apply(self, s: f64) -> f64 {
        match self {
            Aggregation::Clamp => s.clamp(PRED_EPS, 1.0 - PRED_EPS),
            Aggregation::Logistic => (1.0 / (1.0 + (-s).exp())).clamp(PRED_EPS, 1.0 - PRED_EPS),
        }
    }

    /// `dp̂/ds`; zero wherever the clamp is active.
    fn derivative(self, s: f64) -> f64 {
        match self {
            Aggregation::Clamp => {
                if (PRED_EPS..=1.0 - PRED_EPS).contains(&s) {
                    1.0
                } else {
                    0.0
                }
            }
            Aggregation::Logistic => {
                let p = 1.0 / (1.0 + (-s).exp());
                if (PRED_EPS..=1.0 - PRED_EPS).contains(&p) {
                    p * (1.0 - p)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Detection/classification weights (`C × D`) and biases (`C`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilHead {
    pub w_det: Matrix,
    pub b_det: Vec<f64>,
    pub w_cls: Matrix,
    pub b_cls: Vec<f64>,
}

impl MilHead {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            w_det: Matrix::zeros(classes, dim),
            b_det: vec![0.0; classes],
            w_cls: Matrix::zeros(classes, dim),
            b_cls: vec![0.0; classes],
        }
    }

    /// Gaussian weights with standard deviation `std`, zero biases.
    pub fn random<R: Rng + ?Sized>(classes: usize, dim: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let mut head = Self::zeros(classes, dim);
        for w in head.w_det.as_mut_slice() {
            *w = normal.sample(rng);
        }
        for w in head.w_cls.as_mut_slice() {
            *w = normal.sample(rng);
        }
        head
    }

    pub fn classes(&self) -> usize {
        self.b_det.len()
    }

    pub fn dim(&self) -> usize {
        self.w_det.cols()
    }

    /// Checks internal shapes and finiteness.
    pub fn validate(&self) -> Result<(), MilError> {
        let c = self.b_det.len();
        let d = self.w_det.cols();
        let ok = self.w_det.rows() == c && self.w_cls.rows() == c && self.w_cls.cols() == d && self.b_cls.len() == c;
        if !ok {
            return Err(MilError::DimensionMismatch("inconsistent head shapes".into()));
        }
        let finite = self.w_det.is_finite()
            && self.w_cls.is_finite()
            && self.b_det.iter().chain(&self.b_cls).all(|b| b.is_finite());
        if !finite {
            return Err(MilError::DimensionMismatch("non-finite head parameter".into()));
        }
        Ok(())
    }

    /// Plain SGD step `θ ← θ - lr · g`.
    pub fn sgd_step(&mut self, grads: &MilGradients, lr: f64) {
        self.w_det.axpy(-lr, &grads.w_det);
        self.w_cls.axpy(-lr, &grads.w_cls);
        for (b, g) in self.b_det.iter_mut().zip(&grads.b_det) {
            *b -= lr * g;
        }
        for (b, g) in self.b_cls.iter_mut().zip(&grads.b_cls) {
            *b -= lr * g;
        }
    }

    fn check(&self, feats: &ProposalFeatures) -> Result<(), MilError> {
        self.validate()?;
        if feats.dim() != self.dim() {
            return Err(MilError::DimensionMismatch(format!(
                "feature dim {} vs head dim {}",
                feats.dim(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Gradients with the same shapes as [`MilHead`].
#[derive(Debug, Clone, PartialEq)]
pub struct MilGradients {
    pub w_det: Matrix,
    pub b_det: Vec<f64>,
    pub w_cls: Matrix,
    pub b_cls: Vec<f64>,
}

impl MilGradients {
    pub fn zeros_like(head: &MilHead) -> Self {
        let MilHead { w_det, w_cls, .. } = MilHead::zeros(head.classes(), head.dim());
        Self {
            w_det,
            b_det: vec![0.0; head.classes()],
            w_cls,
            b_cls: vec![0.0; head.classes()],
        }
    }

    pub fn add_scaled(&mut self, other: &MilGradients, scale: f64) {
        self.w_det.axpy(scale, &other.w_det);
        self.w_cls.axpy(scale, &other.w_cls);
        for (a, b) in self.b_det.iter_mut().zip(&other.b_det) {
            *a += scale * b;
        }
        for (a, b) in self.b_cls.iter_mut().zip(&other.b_cls) {
            *a += scale * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w_det.is_finite() && self.w_cls.is_finite() && self.b_det.iter().chain(&self.b_cls).all(|v| v.is_finite())
    }
}

/// Forward pass results; all `R × C` matrices are indexed `[proposal, class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MilOutput {
    pub scores_det: Matrix,
    pub scores_cls: Matrix,
    /// Softmax over proposals, per class.
    pub p_det: Matrix,
    /// Softmax over classes, per proposal.
    pub p_cls: Matrix,
    /// `Σ_i p_det · p_cls` before aggregation.
    pub evidence: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub aggregation: Aggregation,
}

impl MilOutput {
    /// Per-proposal localization score for class `c`, `p_det · p_cls`.
    pub fn proposal_score(&self, i: usize, c: usize) -> f64 {
        self.p_det.get(i, c) * self.p_cls.get(i, c)
    }

    /// Highest-scoring proposal for class `c` (first on ties).
    pub fn top_proposal(&self, c: usize) -> usize {
        let mut best = 0;
        for i in 1..self.p_det.rows() {
            if self.proposal_score(i, c) > self.proposal_score(best, c) {
                best = i;
            }
        }
        best
    }
}

pub fn forward(head: &MilHead, feats: &ProposalFeatures) -> Result<MilOutput, MilError> {
    forward_with(head, feats, Aggregation::Clamp)
}

pub fn forward_with(head: &MilHead, feats: &ProposalFeatures, aggregation: Aggregation) -> Result<MilOutput, MilError> {
    head.check(feats)?;
    let r = feats.len();
    let c = head.classes();
    let phi = feats.features();

    let scores_det = Matrix::from_fn(r, c, |i, k| dot(head.w_det.row(k), phi.row(i)) + head.b_det[k]);
    let scores_cls = Matrix::from_fn(r, c, |i, k| dot(head.w_cls.row(k), phi.row(i)) + head.b_cls[k]);

    let mut p_det = Matrix::zeros(r, c);
    let mut col = vec![0.0; r];
    let mut out_col = vec![0.0; r];
    for k in 0..c {
        for i in 0..r {
            col[i] = scores_det.get(i, k);
        }
        softmax_into(&col, &mut out_col);
        for i in 0..r {
            p_det.set(i, k, out_col[i]);
        }
    }
    let mut p_cls = Matrix::zeros(r, c);
    for i in 0..r {
        softmax_into(scores_cls.row(i), p_cls.row_mut(i));
    }

    let evidence: Vec<f64> = (0..c)
        .map(|k| (0..r).map(|i| p_det.get(i, k) * p_cls.get(i, k)).sum())
        .collect();
    let p_hat = evidence.iter().map(|&s| aggregation.apply(s)).collect();
    Ok(MilOutput {
        scores_det,
        scores_cls,
        p_det,
        p_cls,
        evidence,
        p_hat,
        aggregation,
    })
}

/// Binary cross-entropy summed over classes.
pub fn mil_loss(out: &MilOutput, labels: &ImageLabels) -> Result<f64, MilError> {
    if labels.len() != out.p_hat.len() {
        return Err(MilError::DimensionMismatch(format!(
            "{} labels for {} classes",
            labels.len(),
            out.p_hat.len()
        )));
    }
    Ok(out
        .p_hat
        .iter()
        .zip(labels.as_slice())
        .map(|(&p, &y)| if y == 1 { -p.ln() } else { -(1.0 - p).ln() })
        .sum())
}

/// Gradients of the loss with respect to the raw detection and
/// classification scores.
pub fn score_gradients(out: &MilOutput, labels: &ImageLabels) -> Result<(Matrix, Matrix), MilError> {
    let c = out.p_hat.len();
    if labels.len() != c {
        return Err(MilError::DimensionMismatch(format!(
            "{} labels for {c} classes",
            labels.len()
        )));
    }
    let r = out.p_det.rows();
    // dL/ds_c
    let g: Vec<f64> = (0..c)
        .map(|k| {
            let p = out.p_hat[k];
            let dl_dp = if labels.get(k) { -1.0 / p } else { 1.0 / (1.0 - p) };
            dl_dp * out.aggregation.derivative(out.evidence[k])
        })
        .collect();

    let mut d_det = Matrix::zeros(r, c);
    for k in 0..c {
        for i in 0..r {
            let pd = out.p_det.get(i, k);
            d_det.set(i, k, g[k] * pd * (out.p_cls.get(i, k) - out.evidence[k]));
        }
    }
    let mut d_cls = Matrix::zeros(r, c);
    for i in 0..r {
        let upstream: Vec<f64> = (0..c).map(|k| g[k] * out.p_det.get(i, k)).collect();
        let mean: f64 = (0..c).map(|k| out.p_cls.get(i, k) * upstream[k]).sum();
        for k in 0..c {
            d_cls.set(i, k, out.p_cls.get(i, k) * (upstream[k] - mean));
        }
    }
    Ok((d_det, d_cls))
}

/// Chains score gradients through the two linear layers.
pub fn param_gradients(head: &MilHead, feats: &ProposalFeatures, d_det: &Matrix, d_cls: &Matrix) -> MilGradients {
    let mut grads = MilGradients::zeros_like(head);
    let phi = feats.features();
    for i in 0..feats.len() {
        let x = phi.row(i);
        for k in 0..head.classes() {
            let (gd, gc) = (d_det.get(i, k), d_cls.get(i, k));
            grads.b_det[k] += gd;
            grads.b_cls[k] += gc;
            for (j, &xj) in x.iter().enumerate() {
                grads.w_det.add_at(k, j, gd * xj);
                grads.w_cls.add_at(k, j, gc * xj);
            }
        }
    }
    grads
}

pub fn mil_backward(head: &MilHead, feats: &ProposalFeatures, labels: &ImageLabels) -> Result<MilGradients, MilError> {
    mil_backward_with(head, feats, labels, Aggregation::Clamp)
}

pub fn mil_backward_with(
    head: &MilHead,
    feats: &ProposalFeatures,
    labels: &ImageLabels,
    aggregation: Aggregation,
) -> Result<MilGradients, MilError> {
    let out = forward_with(head, feats, aggregation)?;
    let (d_det, d_cls) = score_gradients(&out, labels)?;
    Ok(param_gradients(head, feats, &d_det, &d_cls))
}

/// Single-precision forward path; returns the same quantities widened to
/// `f64` for comparison against [`forward`].
pub fn forward_f32(head: &MilHead, feats: &ProposalFeatures) -> Result<MilOutput, MilError> {
    head.check(feats)?;
    let r = feats.len();
    let c = head.classes();
    let phi: Vec<f32> = feats.features().as_slice().iter().map(|&x| x as f32).collect();
    let d = feats.dim();
    let affine = |w: &Matrix, b: &[f64]| -> Vec<f32> {
        let w: Vec<f32> = w.as_slice().iter().map(|&x| x as f32).collect();
        let mut s = vec![0f32; r * c];
        for i in 0..r {
            for k in 0..c {
                let row = &w[k * d..(k + 1) * d];
                let x = &phi[i * d..(i + 1) * d];
                s[i * c + k] = row.iter().zip(x).map(|(a, b)| a * b).sum::<f32>() + b[k] as f32;
            }
        }
        s
    };
    let sd = affine(&head.w_det, &head.b_det);
    let sc = affine(&head.w_cls, &head.b_cls);
    let (pd, pc) = dual_softmax(&sd, &sc, r, c);
    let evidence: Vec<f32> = (0..c)
        .map(|k| (0..r).map(|i| pd[i * c + k] * pc[i * c + k]).sum())
        .collect();
    let widen = |v: &[f32]| Matrix::from_vec(r, c, v.iter().map(|&x| x as f64).collect()).unwrap();
    let evidence: Vec<f64> = evidence.iter().map(|&x| x as f64).collect();
    Ok(MilOutput {
        scores_det: widen(&sd),
        scores_cls: widen(&sc),
        p_det: widen(&pd),
        p_cls: widen(&pc),
        p_hat: evidence.iter().map(|&s| Aggregation::Clamp.apply(s)).collect(),
        evidence,
        aggregation: Aggregation::Clamp,
    })
}

fn dual_softmax<T: Float>(sd: &[T], sc: &[T], r: usize, c: usize) -> (Vec<T>, Vec<T>) {
    let mut pd = vec![T::zero(); r * c];
    let mut col = vec![T::zero(); r];
    let mut out = vec![T::zero(); r];
    for k in 0..c {
        for i in 0..r {
            col[i] = sd[i * c + k];
        }
        softmax_into(&col, &mut out);
        for i in 0..r {
            pd[i * c + k] = out[i];
        }
    }
    let mut pc = vec![T::zero(); r * c];
    for i in 0..r {
        softmax_into(&sc[i * c..(i + 1) * c], &mut pc[i * c..(i + 1) * c]);
    }
    (pd, pc)
}
