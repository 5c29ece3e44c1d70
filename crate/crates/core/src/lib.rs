//! Motion-augmented weakly-supervised object detection.
//!
//! The crate covers the full pipeline at desk scale:
//!
//! * [`flowio`]: flow fields, `.flo` files, magnitudes and color coding;
//! * [`camnorm`]: corner-based camera-motion estimation and subtraction;
//! * [`selection`]: motion-driven training-image selection;
//! * [`milhead`]: the multiple-instance detection head with gradients;
//! * [`contrastive`]: the symmetric NCE objective with learnable temperature;
//! * [`synth`]: synthetic scenes standing in for real datasets and flow;
//! * [`trainer`] / [`eval`] / [`ablation`]: SGD training, CorLoc, and the
//!   toggle grid over motion, normalization and selection.

// Index loops mirror the math; negated comparisons are deliberate NaN guards.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod camnorm;
pub mod contrastive;
pub mod eval;
pub mod features;
pub mod flowio;
pub mod geometry;
pub mod gradcheck;
pub mod linalg;
pub mod milhead;
pub mod numeric;
pub mod selection;
pub mod synth;
pub mod trainer;

pub use camnorm::{BackgroundEstimate, CornerFraction, CornerId, CornerStats};
pub use contrastive::EmbeddingBatch;
pub use flowio::{ColorImage, FlowError, FlowField, MagnitudeMap};
pub use geometry::BBox;
pub use linalg::Matrix;
pub use milhead::{ImageLabels, MilHead, MilOutput, ProposalFeatures};
pub use selection::{SelectionConfig, SelectionRecord};
pub use synth::{BenchmarkConfig, SceneSpec, SynthSample};
pub use trainer::{Model, TrainConfig, TrainReport};
