//! Correct-localization (CorLoc) evaluation.
//!
//! For every labeled class of every image, the proposal with the highest
//! `p_det · p_cls` is compared with the image's true boxes of that class at
//! IoU ≥ 0.5. Only RGB proposal features are read.

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::milhead::{forward, ImageLabels, MilError, MilHead, ProposalFeatures};
use crate::synth::{SynthSample, TruthBox};

pub const CORLOC_IOU: f64 = 0.5;

/// What evaluation needs from a sample; flow is deliberately absent.
#[derive(Debug, Clone, Copy)]
pub struct EvalItem<'a> {
    pub proposals: &'a ProposalFeatures,
    pub labels: &'a ImageLabels,
    pub truth: &'a [TruthBox],
}

impl<'a> From<&'a SynthSample> for EvalItem<'a> {
    fn from(s: &'a SynthSample) -> Self {
        Self {
            proposals: &s.proposals,
            labels: &s.labels,
            truth: &s.truth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLocalization {
    pub class: usize,
    pub images: usize,
    pub correct: usize,
    pub corloc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub corloc: f64,
    pub evaluated: usize,
    pub correct: usize,
    pub per_class: Vec<ClassLocalization>,
}

/// Top-scoring proposal box for class `c`.
pub fn localize(head: &MilHead, proposals: &ProposalFeatures, class: usize) -> Result<BBox, MilError> {
    let out = forward(head, proposals)?;
    Ok(proposals.boxes()[out.top_proposal(class)])
}

pub fn evaluate<'a, I>(head: &MilHead, items: I) -> Result<EvalReport, MilError>
where
    I: IntoIterator<Item = EvalItem<'a>>,
{
    let classes = head.classes();
    let mut images = vec![0usize; classes];
    let mut correct = vec![0usize; classes];
    for item in items {
        let out = forward(head, item.proposals)?;
        for c in item.labels.present() {
            let b = item.proposals.boxes()[out.top_proposal(c)];
            let hit = item.truth.iter().any(|t| t.class == c && t.bbox.iou(&b) >= CORLOC_IOU);
            images[c] += 1;
            correct[c] += hit as usize;
        }
    }
    let evaluated: usize = images.iter().sum();
    let hits: usize = correct.iter().sum();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(EvalReport {
        corloc: ratio(hits, evaluated),
        evaluated,
        correct: hits,
        per_class: (0..classes)
            .map(|c| ClassLocalization {
                class: c,
                images: images[c],
                correct: correct[c],
                corloc: ratio(correct[c], images[c]),
            })
            .collect(),
    })
}

pub fn evaluate_samples(head: &MilHead, samples: &[SynthSample]) -> Result<EvalReport, MilError> {
    evaluate(head, samples.iter().map(EvalItem::from))
}

impl EvalReport {
    /// Markdown table of per-class localization.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| class | images | correct | CorLoc |\n|---|---|---|---|\n");
        for c in &self.per_class {
            s.push_str(&format!(
                "| {} | {} | {} | {:.3} |\n",
                c.class, c.images, c.correct, c.corloc
            ));
        }
        s.push_str(&format!(
            "| all | {} | {} | {:.3} |\n",
            self.evaluated, self.correct, self.corloc
        ));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    #[test]
    fn perfect_head_on_trivial_data() {
        // feature 0 marks the object proposal; the head scores it highest
        let boxes = vec![BBox::new(0.0, 0.0, 4.0, 4.0), BBox::new(4.0, 4.0, 8.0, 8.0)];
        let phi = Matrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        let props = ProposalFeatures::new(phi, boxes, 8, 8).unwrap();
        let labels = ImageLabels::from_present(1, &[0]);
        let truth = vec![TruthBox {
            class: 0,
            bbox: BBox::new(4.0, 4.0, 8.0, 8.0),
        }];
        let mut head = MilHead::zeros(1, 1);
        head.w_det.set(0, 0, 5.0);
        let item = EvalItem {
            proposals: &props,
            labels: &labels,
            truth: &truth,
        };
        let r = evaluate(&head, [item, item]).unwrap();
        assert_eq!(r.corloc, 1.0);
        assert_eq!(r.per_class[0].images, 2);
        assert!(r.to_markdown().contains("| all | 2 | 2 | 1.000 |"));

        head.w_det.set(0, 0, -5.0);
        assert_eq!(evaluate(&head, [item]).unwrap().corloc, 0.0);
    }
}
