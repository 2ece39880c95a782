//! Instance-level precision, recall and F-measure.
//!
//! Per image, detections are visited in descending score order and each is
//! matched to the still-unmatched ground-truth instance it overlaps most; the
//! match is a true positive when that IoU reaches the threshold. Counts are
//! summed over images before the ratios are taken.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AnnotationTier, Dataset};
use crate::error::{Error, Result};
use crate::geometry::{mask_iou, rasterize_all, rect_iou, AxisRect, BitMask, Detection, Polygon};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MatchOn {
    Mask,
    Box,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub match_on: MatchOn,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            match_on: MatchOn::Mask,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "iou threshold {} must lie in (0, 1)",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl std::ops::AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEval {
    pub image_id: String,
    #[serde(flatten)]
    pub counts: MatchCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Sorted by image id.
    pub per_image: Vec<ImageEval>,
}

impl EvalReport {
    pub fn from_counts(per_image: Vec<ImageEval>) -> Self {
        let mut total = MatchCounts::default();
        for im in &per_image {
            total += im.counts;
        }
        let precision = ratio(total.tp, total.tp + total.fp);
        let recall = ratio(total.tp, total.tp + total.fn_);
        EvalReport {
            precision,
            recall,
            f_measure: f_measure(precision, recall),
            true_positives: total.tp,
            false_positives: total.fp,
            false_negatives: total.fn_,
            per_image,
        }
    }

    /// `P=… R=… F=…` with three decimals.
    pub fn summary_line(&self) -> String {
        format!(
            "P={:.3} R={:.3} F={:.3}",
            self.precision, self.recall, self.f_measure
        )
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Detections of one image.
#[derive(Debug, Clone)]
pub struct ImageDetections {
    pub image_id: String,
    pub detections: Vec<Detection>,
}

/// Greedy one-to-one matching. Rows of `iou` are detections already in
/// visiting order, columns are ground-truth instances.
pub fn greedy_match(iou: &[Vec<f64>], n_truth: usize, threshold: f64) -> MatchCounts {
    let mut taken = vec![false; n_truth];
    let mut tp = 0;
    for row in iou {
        let best = (0..n_truth)
            .filter(|&j| !taken[j])
            .fold(None::<(usize, f64)>, |best, j| match best {
                Some((_, v)) if v >= row[j] => best,
                _ => Some((j, row[j])),
            });
        if let Some((j, v)) = best {
            if v >= threshold {
                taken[j] = true;
                tp += 1;
            }
        }
    }
    MatchCounts {
        tp,
        fp: iou.len() - tp,
        fn_: n_truth - tp,
    }
}

/// Largest instance count per side accepted by [`brute_force_match`].
pub const BRUTE_FORCE_CAP: usize = 8;

/// Exhaustive maximum-cardinality one-to-one matching over pairs whose IoU
/// reaches the threshold. A reference for bounding [`greedy_match`].
pub fn brute_force_match(iou: &[Vec<f64>], n_truth: usize, threshold: f64) -> Result<MatchCounts> {
    let n_det = iou.len();
    if n_det > BRUTE_FORCE_CAP || n_truth > BRUTE_FORCE_CAP {
        return Err(Error::TooLarge {
            count: n_det.max(n_truth),
            cap: BRUTE_FORCE_CAP,
        });
    }
    fn search(iou: &[Vec<f64>], threshold: f64, det: usize, used: u32, n_truth: usize) -> usize {
        if det == iou.len() {
            return 0;
        }
        let mut best = search(iou, threshold, det + 1, used, n_truth);
        for j in 0..n_truth {
            if used & (1 << j) == 0 && iou[det][j] >= threshold {
                best = best.max(1 + search(iou, threshold, det + 1, used | (1 << j), n_truth));
            }
        }
        best
    }
    let tp = search(iou, threshold, 0, 0, n_truth);
    Ok(MatchCounts {
        tp,
        fp: n_det - tp,
        fn_: n_truth - tp,
    })
}

/// Ground truth of one image prepared for matching.
struct Truth {
    masks: Vec<BitMask>,
    boxes: Vec<AxisRect>,
}

fn union_rect(polys: &[Polygon]) -> Option<AxisRect> {
    polys
        .iter()
        .map(Polygon::bounding_rect)
        .reduce(|a, b| a.union(&b))
}

fn match_image(dets: &[Detection], truth: &Truth, cfg: &EvalConfig) -> Result<MatchCounts> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score().total_cmp(&dets[a].score()));
    let n_truth = truth.masks.len();
    let iou = order
        .iter()
        .map(|&d| {
            (0..n_truth)
                .map(|t| match cfg.match_on {
                    MatchOn::Mask => mask_iou(dets[d].mask(), &truth.masks[t]),
                    MatchOn::Box => Ok(rect_iou(dets[d].bbox(), &truth.boxes[t])),
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(greedy_match(&iou, n_truth, cfg.iou_threshold))
}

pub fn evaluate(
    detections: &[ImageDetections],
    truth: &Dataset,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    if !truth.is_empty() && truth.uniform_tier() != Some(AnnotationTier::Strong) {
        return Err(Error::TierMismatch(
            "evaluation needs STRONG ground truth".into(),
        ));
    }
    let mut by_id: HashMap<&str, &[Detection]> = HashMap::new();
    for d in detections {
        if by_id.insert(d.image_id.as_str(), &d.detections).is_some() {
            return Err(Error::InvalidConfig(format!(
                "detections listed twice for {}",
                d.image_id
            )));
        }
    }
    let known: HashSet<&str> = truth.image_ids().collect();
    if let Some(stray) = by_id.keys().find(|id| !known.contains(*id)) {
        return Err(Error::InvalidConfig(format!(
            "detections for unknown image {stray}"
        )));
    }

    let (w, h) = (truth.image_width, truth.image_height);
    let mut per_image = truth
        .records
        .par_iter()
        .map(|rec| {
            let groups = rec.instance_polygons();
            let truth = Truth {
                masks: groups
                    .iter()
                    .map(|polys| rasterize_all(polys, w, h))
                    .collect::<Result<_>>()?,
                boxes: groups
                    .iter()
                    .map(|polys| {
                        union_rect(polys).unwrap_or(AxisRect {
                            x_min: 0.,
                            y_min: 0.,
                            x_max: 0.,
                            y_max: 0.,
                        })
                    })
                    .collect(),
            };
            let dets = by_id.get(rec.image_id.as_str()).copied().unwrap_or(&[]);
            Ok(ImageEval {
                image_id: rec.image_id.clone(),
                counts: match_image(dets, &truth, cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    per_image.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok(EvalReport::from_counts(per_image))
}
