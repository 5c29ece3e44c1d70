//! Desk-scale training loop: MIL loss plus a weighted Siamese NCE term.
//!
//! Both branches share one hand-crafted proposal feature extractor and one
//! linear projection into the embedding space. The RGB branch pools its
//! proposal features with the MIL detection distribution of the labeled
//! classes; the motion branch pools the same extractor's features on the
//! color-coded flow with a softmax over per-proposal motion energy. The
//! NCE gradient therefore reaches the detection layer, pulling detection
//! mass toward proposals that move. Evaluation reads RGB features only.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camnorm::{normalize_camera_motion, CornerFraction};
use crate::contrastive::{nce_backward, ContrastiveError, EmbeddingBatch, MIN_TEMPERATURE};
use crate::eval::{evaluate_samples, ClassLocalization};
use crate::features::{box_features, RgbImage};
use crate::flowio::{colorize, magnitude, normalize_magnitudes, FlowField, MagnitudeMap};
use crate::linalg::{dot, Matrix};
use crate::milhead::{
    forward, mil_loss, param_gradients, score_gradients, MilError, MilGradients, MilHead, MilOutput, ProposalFeatures,
};
use crate::numeric::softmax;
use crate::selection::{select_dataset, SelectionConfig, SelectionInput, SelectionRecord};
use crate::synth::{derive_seed, SynthSample};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("empty training set{0}")]
    EmptyDataset(&'static str),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Mil(#[from] MilError),
    #[error(transparent)]
    Contrastive(#[from] ContrastiveError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the NCE term.
    pub lambda: f64,
    pub seed: u64,
    pub use_motion: bool,
    pub use_normalization: bool,
    pub use_selection: bool,
    pub embed_dim: usize,
    pub init_temperature: f64,
    /// Step size of `log ρ`, relative to `learning_rate`.
    pub temperature_lr_scale: f64,
    /// Std of the initial MIL weights.
    pub init_std: f64,
    /// Softmax sharpness of the motion-branch pooling.
    pub motion_sharpness: f64,
    pub corner_fraction: CornerFraction,
    pub selection: SelectionConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 120,
            batch_size: 8,
            lambda: 5.0,
            seed: 0,
            use_motion: false,
            use_normalization: false,
            use_selection: false,
            embed_dim: 32,
            init_temperature: 0.2,
            temperature_lr_scale: 0.1,
            init_std: 0.01,
            motion_sharpness: 10.0,
            corner_fraction: CornerFraction::default(),
            selection: SelectionConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be non-negative");
        }
        if self.batch_size == 0 || self.embed_dim == 0 {
            return bad("batch size and embedding dim must be positive");
        }
        if !(self.init_temperature > 0.0
            && self.temperature_lr_scale >= 0.0
            && self.init_std >= 0.0
            && self.motion_sharpness >= 0.0)
        {
            return bad("temperature must be positive, init std and sharpness non-negative");
        }
        Ok(())
    }
}

/// Learned parameters. Inference only needs `head`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub head: MilHead,
    /// Shared Siamese projection, `embed_dim × feature_dim`.
    pub projection: Matrix,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mil_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nce_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Mean MIL loss over the training images before the first update.
    pub initial_mil_loss: f64,
    /// Mean MIL loss over the training images after the last update.
    pub final_mil_loss: f64,
    pub train_images: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_images: Option<usize>,
    pub corloc: f64,
    pub per_class: Vec<ClassLocalization>,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Model,
    pub report: TrainReport,
    /// Selection manifest when selection was enabled.
    pub selection: Option<Vec<SelectionRecord>>,
}

/// Motion branch input for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionView {
    /// Extractor features of the color-coded flow, one row per proposal.
    pub features: Matrix,
    /// Pooling weights over proposals, summing to one.
    pub weights: Vec<f64>,
}

/// The flow the motion branch sees: camera-normalized or raw.
pub fn motion_flow(flow: &FlowField, normalize: bool, corner_fraction: CornerFraction) -> FlowField {
    if normalize {
        normalize_camera_motion(flow, corner_fraction).0
    } else {
        flow.clone()
    }
}

/// Soft IoU between a box and the motion mask `m ∈ [0, 1]`:
/// `Σ_in m / (Σ_all m + Σ_in (1 − m))`. Zero when nothing moves.
pub fn motion_overlap(mag: &MagnitudeMap, b: &crate::geometry::BBox) -> f64 {
    let (xs, ys) = b.pixel_ranges(mag.width(), mag.height());
    let total: f64 = mag.values().iter().sum();
    let (mut inside, mut empty) = (0.0, 0.0);
    for y in ys {
        for x in xs.clone() {
            let m = mag.at(x, y);
            inside += m;
            empty += 1.0 - m;
        }
    }
    let union = total + empty;
    if union > 0.0 {
        inside / union
    } else {
        0.0
    }
}

/// Motion saliency in `[0, 1]`: absolute deviation of each pixel's flow
/// magnitude from the image median, scaled by its maximum. A uniform field
/// (pure translation) has no salient pixels.
pub fn motion_saliency(flow: &FlowField) -> MagnitudeMap {
    let mag = magnitude(flow);
    let mut sorted = mag.values().to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted.get(sorted.len() / 2).copied().unwrap_or(0.0);
    let dev: Vec<f64> = mag.values().iter().map(|m| (m - median).abs()).collect();
    let dev = MagnitudeMap::new(flow.width(), flow.height(), dev).expect("finite deviations");
    normalize_magnitudes(&dev)
}

/// Motion branch input: extractor features on the color-coded flow, pooled
/// with `softmax(sharpness · overlap)` of each proposal with the saliency.
pub fn motion_view(flow: &FlowField, proposals: &ProposalFeatures, sharpness: f64) -> MotionView {
    let img = RgbImage::from_color_image(&colorize(flow));
    let features = box_features(&img, proposals.boxes());
    let sal = motion_saliency(flow);
    let energy: Vec<f64> = proposals
        .boxes()
        .iter()
        .map(|b| sharpness * motion_overlap(&sal, b))
        .collect();
    MotionView {
        features,
        weights: softmax(&energy),
    }
}

struct TrainImage<'a> {
    proposals: &'a ProposalFeatures,
    labels: &'a crate::milhead::ImageLabels,
    motion: Option<MotionView>,
}

/// Detection-weighted pooling weights over proposals: mean over labeled
/// classes of `p_det[·, c]` (uniform when no class is labeled).
fn detection_attention(out: &MilOutput, labels: &crate::milhead::ImageLabels) -> (Vec<f64>, Vec<usize>) {
    let r = out.p_det.rows();
    let present: Vec<usize> = labels.present().collect();
    if present.is_empty() {
        return (vec![1.0 / r as f64; r], present);
    }
    let k = present.len() as f64;
    let att = (0..r)
        .map(|i| present.iter().map(|&c| out.p_det.get(i, c)).sum::<f64>() / k)
        .collect();
    (att, present)
}

fn pool(features: &Matrix, weights: &[f64]) -> Vec<f64> {
    features.tr_mul_vec(weights)
}

fn random_projection(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = Normal::new(0.0, 1.0 / (cols as f64).sqrt()).unwrap();
    Matrix::from_fn(rows, cols, |_, _| n.sample(rng))
}

/// Losses and gradients of one mini-batch.
pub struct BatchGradients {
    pub mil_loss: f64,
    pub nce_loss: Option<f64>,
    pub head: MilGradients,
    pub projection: Matrix,
    pub temperature: f64,
}

/// Value and gradient of `mean_k L_mil,k + λ · L_NCE` over a batch.
/// `motion` must be present for every image when `use_motion` is set.
pub fn batch_objective(
    model: &Model,
    batch: &[(&ProposalFeatures, &crate::milhead::ImageLabels, Option<&MotionView>)],
    lambda: f64,
    use_motion: bool,
) -> Result<BatchGradients, TrainError> {
    let b = batch.len();
    let bf = b as f64;
    let head = &model.head;
    let mut outs = Vec::with_capacity(b);
    let mut mil = 0.0;
    let mut score_grads = Vec::with_capacity(b);
    for (props, labels, _) in batch {
        let out = forward(head, props)?;
        mil += mil_loss(&out, labels)?;
        let (mut d_det, mut d_cls) = score_gradients(&out, labels)?;
        for x in d_det.as_mut_slice().iter_mut().chain(d_cls.as_mut_slice()) {
            *x /= bf;
        }
        score_grads.push((d_det, d_cls));
        outs.push(out);
    }
    mil /= bf;

    let p = &model.projection;
    let mut d_proj = Matrix::zeros(p.rows(), p.cols());
    let mut d_temp = 0.0;
    let mut nce = None;
    if use_motion {
        let mut pooled_img = Vec::with_capacity(b);
        let mut pooled_mot = Vec::with_capacity(b);
        let mut atts = Vec::with_capacity(b);
        for ((props, labels, motion), out) in batch.iter().zip(&outs) {
            let motion = motion.expect("motion view required when use_motion is set");
            let (att, present) = detection_attention(out, labels);
            pooled_img.push(pool(props.features(), &att));
            pooled_mot.push(pool(&motion.features, &motion.weights));
            atts.push((att, present));
        }
        let img_proj =
            Matrix::try_from(pooled_img.iter().map(|z| p.mul_vec(z)).collect::<Vec<_>>()).expect("rectangular");
        let mot_proj =
            Matrix::try_from(pooled_mot.iter().map(|q| p.mul_vec(q)).collect::<Vec<_>>()).expect("rectangular");
        let eb = EmbeddingBatch::new(img_proj, mot_proj, model.temperature)?;
        let (loss, g) = nce_backward(&eb)?;
        nce = Some(loss);
        if lambda > 0.0 {
            d_temp = lambda * g.rho;
            for k in 0..b {
                let (gi, gm) = (g.img_proj.row(k), g.mot_proj.row(k));
                for r in 0..p.rows() {
                    for c in 0..p.cols() {
                        d_proj.add_at(r, c, lambda * (gi[r] * pooled_img[k][c] + gm[r] * pooled_mot[k][c]));
                    }
                }
                // back through the detection-weighted pooling into det scores
                let dz = p.tr_mul_vec(gi);
                let props = batch[k].0;
                let d_att: Vec<f64> = (0..props.len())
                    .map(|i| lambda * dot(props.features().row(i), &dz))
                    .collect();
                let (_, present) = &atts[k];
                let kf = present.len() as f64;
                let out = &outs[k];
                let d_det = &mut score_grads[k].0;
                for &c in present {
                    let mean: f64 = (0..props.len()).map(|j| out.p_det.get(j, c) * d_att[j]).sum();
                    for i in 0..props.len() {
                        d_det.add_at(i, c, out.p_det.get(i, c) * (d_att[i] - mean) / kf);
                    }
                }
            }
        }
    }

    let mut grads = MilGradients::zeros_like(head);
    for ((props, _, _), (d_det, d_cls)) in batch.iter().zip(&score_grads) {
        grads.add_scaled(&param_gradients(head, props, d_det, d_cls), 1.0);
    }
    Ok(BatchGradients {
        mil_loss: mil,
        nce_loss: nce,
        head: grads,
        projection: d_proj,
        temperature: d_temp,
    })
}

fn mean_mil_loss(head: &MilHead, images: &[TrainImage<'_>]) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for im in images {
        total += mil_loss(&forward(head, im.proposals)?, im.labels)?;
    }
    Ok(total / images.len() as f64)
}

/// Boxes a model predicts for selection: per image, the top proposal of the
/// labeled class with the highest image-level prediction.
fn predicted_boxes(head: &MilHead, samples: &[&SynthSample]) -> Result<Vec<crate::geometry::BBox>, TrainError> {
    samples
        .iter()
        .map(|s| {
            let out = forward(head, &s.proposals)?;
            let c = s
                .labels
                .present()
                .max_by(|&a, &b| out.p_hat[a].total_cmp(&out.p_hat[b]))
                .unwrap_or_else(|| {
                    (0..out.p_hat.len())
                        .max_by(|&a, &b| out.p_hat[a].total_cmp(&out.p_hat[b]))
                        .unwrap()
                });
            Ok(s.proposals.boxes()[out.top_proposal(c)])
        })
        .collect()
}

/// Runs motion-driven selection using boxes predicted by a first-pass model
/// trained with the same config, minus selection, on all images. The
/// statistics always use camera-normalized magnitudes: selection curates the
/// dataset and should not depend on whether the motion branch normalizes.
pub fn select_training_images(train: &[SynthSample], cfg: &TrainConfig) -> Result<Vec<SelectionRecord>, TrainError> {
    let baseline_cfg = TrainConfig {
        use_selection: false,
        ..cfg.clone()
    };
    let refs: Vec<&SynthSample> = train.iter().collect();
    let baseline = fit(&refs, &baseline_cfg)?.0;
    let boxes = predicted_boxes(&baseline.head, &refs)?;
    let maps: Vec<MagnitudeMap> = train
        .iter()
        .map(|s| {
            let f = motion_flow(&s.flow, true, cfg.corner_fraction);
            normalize_magnitudes(&magnitude(&f))
        })
        .collect();
    let inputs: Vec<SelectionInput<'_>> = train
        .iter()
        .zip(&maps)
        .zip(boxes)
        .map(|((s, m), b)| SelectionInput {
            image_id: s.id.clone(),
            magnitudes: m,
            predicted_box: b,
        })
        .collect();
    Ok(select_dataset(&inputs, &cfg.selection))
}

/// SGD over the given images; returns the model and per-epoch statistics.
fn fit(samples: &[&SynthSample], cfg: &TrainConfig) -> Result<(Model, Vec<EpochStats>, f64, f64), TrainError> {
    cfg.validate()?;
    let first = samples.first().ok_or(TrainError::EmptyDataset(""))?;
    let classes = first.labels.len();
    let dim = first.proposals.dim();
    if samples
        .iter()
        .any(|s| s.labels.len() != classes || s.proposals.dim() != dim)
    {
        return Err(MilError::DimensionMismatch("inconsistent samples".into()).into());
    }

    let images: Vec<TrainImage<'_>> = samples
        .iter()
        .map(|s| TrainImage {
            proposals: &s.proposals,
            labels: &s.labels,
            motion: cfg.use_motion.then(|| {
                let f = motion_flow(&s.flow, cfg.use_normalization, cfg.corner_fraction);
                motion_view(&f, &s.proposals, cfg.motion_sharpness)
            }),
        })
        .collect();

    let mut head_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 100));
    let mut proj_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 101));
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 102));
    let mut model = Model {
        head: MilHead::random(classes, dim, cfg.init_std, &mut head_rng),
        projection: random_projection(cfg.embed_dim, dim, &mut proj_rng),
        temperature: cfg.init_temperature,
    };

    let initial = mean_mil_loss(&model.head, &images)?;
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let (mut mil_sum, mut nce_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk
                .iter()
                .map(|&i| (images[i].proposals, images[i].labels, images[i].motion.as_ref()))
                .collect();
            let g = batch_objective(&model, &batch, cfg.lambda, cfg.use_motion)?;
            let total = g.mil_loss + cfg.lambda * g.nce_loss.unwrap_or(0.0);
            if !total.is_finite() || !g.head.is_finite() {
                return Err(TrainError::NonFiniteLoss { step });
            }
            model.head.sgd_step(&g.head, cfg.learning_rate);
            if cfg.use_motion && cfg.lambda > 0.0 {
                model.projection.axpy(-cfg.learning_rate, &g.projection);
                // SGD on log ρ keeps the temperature positive and scale-free
                let step = cfg.learning_rate * cfg.temperature_lr_scale * model.temperature * g.temperature;
                model.temperature = (model.temperature * (-step).exp()).max(MIN_TEMPERATURE);
            }
            mil_sum += g.mil_loss;
            nce_sum += g.nce_loss.unwrap_or(0.0);
            batches += 1;
            step += 1;
        }
        epochs.push(EpochStats {
            epoch,
            mil_loss: mil_sum / batches as f64,
            nce_loss: cfg.use_motion.then(|| nce_sum / batches as f64),
        });
    }
    let final_loss = mean_mil_loss(&model.head, &images)?;
    Ok((model, epochs, initial, final_loss))
}

/// Trains on `train` (optionally filtered by motion-driven selection) and
/// reports CorLoc on `eval`.
pub fn train(train: &[SynthSample], eval: &[SynthSample], cfg: &TrainConfig) -> Result<Trained, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyDataset(""));
    }
    let (selected, manifest) = if cfg.use_selection {
        let manifest = select_training_images(train, cfg)?;
        let kept: Vec<&SynthSample> = train
            .iter()
            .zip(&manifest)
            .filter_map(|(s, r)| r.selected.then_some(s))
            .collect();
        if kept.is_empty() {
            return Err(TrainError::EmptyDataset(" after selection"));
        }
        (kept, Some(manifest))
    } else {
        (train.iter().collect(), None)
    };
    let (model, epochs, initial, final_loss) = fit(&selected, cfg)?;
    let eval_report = evaluate_samples(&model.head, eval)?;
    Ok(Trained {
        report: TrainReport {
            epochs,
            initial_mil_loss: initial,
            final_mil_loss: final_loss,
            train_images: selected.len(),
            selected_images: manifest.as_ref().map(|_| selected.len()),
            corloc: eval_report.corloc,
            per_class: eval_report.per_class,
        },
        model,
        selection: manifest,
    })
}
