//! Symmetric NCE objective between paired RGB and motion projections.
//!
//! Rows are L2-normalized, cosine similarities are divided by the
//! temperature `ρ`, and each row (RGB → motion) and each column
//! (motion → RGB) is scored with a log-softmax whose positive is the
//! diagonal. The positive is counted once in each denominator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, norm, Matrix};
use crate::numeric::{log_sum_exp, softmax_into};

/// Rows with a smaller L2 norm cannot be normalized.
pub const MIN_ROW_NORM: f64 = 1e-12;
/// Lower bound enforced on `ρ` after each update.
pub const MIN_TEMPERATURE: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum ContrastiveError {
    #[error("row {row} of the {side} projections has (near) zero norm")]
    ZeroVector { side: &'static str, row: usize },
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
}

/// Paired projections: row `i` of `img_proj` pairs with row `i` of `mot_proj`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EmbeddingBatchRepr", into = "EmbeddingBatchRepr")]
pub struct EmbeddingBatch {
    img_proj: Matrix,
    mot_proj: Matrix,
    rho: f64,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingBatchRepr {
    img_proj: Matrix,
    mot_proj: Matrix,
    rho: f64,
}

impl TryFrom<EmbeddingBatchRepr> for EmbeddingBatch {
    type Error = ContrastiveError;
    fn try_from(r: EmbeddingBatchRepr) -> Result<Self, Self::Error> {
        EmbeddingBatch::new(r.img_proj, r.mot_proj, r.rho)
    }
}

impl From<EmbeddingBatch> for EmbeddingBatchRepr {
    fn from(b: EmbeddingBatch) -> Self {
        Self {
            img_proj: b.img_proj,
            mot_proj: b.mot_proj,
            rho: b.rho,
        }
    }
}

impl EmbeddingBatch {
    pub fn new(img_proj: Matrix, mot_proj: Matrix, rho: f64) -> Result<Self, ContrastiveError> {
        if img_proj.rows() == 0 {
            return Err(ContrastiveError::InvalidBatch("empty batch".into()));
        }
        if (img_proj.rows(), img_proj.cols()) != (mot_proj.rows(), mot_proj.cols()) {
            return Err(ContrastiveError::InvalidBatch(format!(
                "shape {}x{} vs {}x{}",
                img_proj.rows(),
                img_proj.cols(),
                mot_proj.rows(),
                mot_proj.cols()
            )));
        }
        if !(rho.is_finite() && rho > 0.0) {
            return Err(ContrastiveError::InvalidBatch(format!(
                "temperature {rho} must be positive"
            )));
        }
        if !img_proj.is_finite() || !mot_proj.is_finite() {
            return Err(ContrastiveError::InvalidBatch("non-finite projection".into()));
        }
        Ok(Self {
            img_proj,
            mot_proj,
            rho,
        })
    }

    pub fn len(&self) -> usize {
        self.img_proj.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.img_proj.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.img_proj.cols()
    }

    pub fn img_proj(&self) -> &Matrix {
        &self.img_proj
    }

    pub fn mot_proj(&self) -> &Matrix {
        &self.mot_proj
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Same projections with the image and motion sides exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            img_proj: self.mot_proj.clone(),
            mot_proj: self.img_proj.clone(),
            rho: self.rho,
        }
    }
}

/// Gradients of the NCE loss.
#[derive(Debug, Clone, PartialEq)]
pub struct NceGradients {
    pub img_proj: Matrix,
    pub mot_proj: Matrix,
    pub rho: f64,
}

fn normalized_rows(m: &Matrix, side: &'static str) -> Result<(Matrix, Vec<f64>), ContrastiveError> {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let n = norm(m.row(r));
        if !(n >= MIN_ROW_NORM) {
            return Err(ContrastiveError::ZeroVector { side, row: r });
        }
        for x in out.row_mut(r) {
            *x /= n;
        }
        norms.push(n);
    }
    Ok((out, norms))
}

struct Normalized {
    img: Matrix,
    mot: Matrix,
    img_norms: Vec<f64>,
    mot_norms: Vec<f64>,
}

fn normalize(batch: &EmbeddingBatch) -> Result<Normalized, ContrastiveError> {
    let (img, img_norms) = normalized_rows(&batch.img_proj, "image")?;
    let (mot, mot_norms) = normalized_rows(&batch.mot_proj, "motion")?;
    Ok(Normalized {
        img,
        mot,
        img_norms,
        mot_norms,
    })
}

fn similarities(n: &Normalized, rho: f64) -> Matrix {
    let b = n.img.rows();
    Matrix::from_fn(b, b, |a, c| dot(n.img.row(a), n.mot.row(c)) / rho)
}

/// `S[a, b] = ⟨x̂_a, ŷ_b⟩ / ρ`.
pub fn similarity_matrix(batch: &EmbeddingBatch) -> Result<Matrix, ContrastiveError> {
    Ok(similarities(&normalize(batch)?, batch.rho))
}

fn column(s: &Matrix, c: usize) -> Vec<f64> {
    (0..s.rows()).map(|r| s.get(r, c)).collect()
}

/// Returns `(L_{M→I}, L_{I→M})`: the row-wise and column-wise terms.
pub fn nce_directions(batch: &EmbeddingBatch) -> Result<(f64, f64), ContrastiveError> {
    let s = similarity_matrix(batch)?;
    let b = s.rows();
    let rows: f64 = (0..b).map(|a| log_sum_exp(s.row(a)) - s.get(a, a)).sum();
    let cols: f64 = (0..b).map(|c| log_sum_exp(&column(&s, c)) - s.get(c, c)).sum();
    Ok((rows / b as f64, cols / b as f64))
}

/// Average of the two directional terms.
pub fn nce_loss(batch: &EmbeddingBatch) -> Result<f64, ContrastiveError> {
    let (a, b) = nce_directions(batch)?;
    Ok(0.5 * (a + b))
}

/// Loss and analytic gradients through the normalization, the temperature
/// and both log-softmaxes.
pub fn nce_backward(batch: &EmbeddingBatch) -> Result<(f64, NceGradients), ContrastiveError> {
    let n = normalize(batch)?;
    let rho = batch.rho;
    let s = similarities(&n, rho);
    let b = s.rows();
    let bf = b as f64;

    // dL/dS
    let mut g = Matrix::zeros(b, b);
    let mut loss = 0.0;
    let mut p = vec![0.0; b];
    for a in 0..b {
        softmax_into(s.row(a), &mut p);
        loss += log_sum_exp(s.row(a)) - s.get(a, a);
        for c in 0..b {
            let delta = if a == c { 1.0 } else { 0.0 };
            g.add_at(a, c, (p[c] - delta) / (2.0 * bf));
        }
    }
    for c in 0..b {
        let col = column(&s, c);
        softmax_into(&col, &mut p);
        loss += log_sum_exp(&col) - s.get(c, c);
        for a in 0..b {
            let delta = if a == c { 1.0 } else { 0.0 };
            g.add_at(a, c, (p[a] - delta) / (2.0 * bf));
        }
    }
    loss /= 2.0 * bf;

    let d_rho: f64 = (0..b)
        .flat_map(|a| (0..b).map(move |c| (a, c)))
        .map(|(a, c)| -g.get(a, c) * s.get(a, c) / rho)
        .sum();

    let dim = batch.dim();
    let mut d_img = Matrix::zeros(b, dim);
    let mut d_mot = Matrix::zeros(b, dim);
    for a in 0..b {
        // gradient w.r.t. the unit vectors
        let mut gx = vec![0.0; dim];
        let mut gy = vec![0.0; dim];
        for c in 0..b {
            let w = g.get(a, c) / rho;
            for (o, &y) in gx.iter_mut().zip(n.mot.row(c)) {
                *o += w * y;
            }
            let w = g.get(c, a) / rho;
            for (o, &x) in gy.iter_mut().zip(n.img.row(c)) {
                *o += w * x;
            }
        }
        project_out(&gx, n.img.row(a), n.img_norms[a], d_img.row_mut(a));
        project_out(&gy, n.mot.row(a), n.mot_norms[a], d_mot.row_mut(a));
    }
    Ok((
        loss,
        NceGradients {
            img_proj: d_img,
            mot_proj: d_mot,
            rho: d_rho,
        },
    ))
}

/// Backprop through `x̂ = x / |x|`: `(g - x̂ ⟨x̂, g⟩) / |x|`.
fn project_out(g: &[f64], unit: &[f64], len: f64, out: &mut [f64]) {
    let along = dot(unit, g);
    for ((o, &gi), &ui) in out.iter_mut().zip(g).zip(unit) {
        *o = (gi - ui * along) / len;
    }
}
