//! Turning a detector's output on weakly annotated images into pseudo
//! strong annotations.
//!
//! * naive: keep every candidate scoring above `score_s`;
//! * filter: keep candidates scoring above `score_s_prime` whose box
//!   overlaps some weak box by more than `iou_t`;
//! * local: ask the detector for a mask inside each weak box, one
//!   annotation per box.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    read_pgm, Annotation, AnnotationRecord, AnnotationTier, Dataset, InstanceMeta, Provenance,
    PseudoTag,
};
use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::geometry::{
    mask_bbox, mask_to_polygon, rasterize_all, rect_iou, AxisRect, BitMask, Detection,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub score_s: f64,
    pub score_s_prime: f64,
    pub iou_t: f64,
    /// Keep local annotations whose mask came back empty.
    pub keep_empty_local_masks: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            score_s: 0.5,
            score_s_prime: 0.4,
            iou_t: 0.3,
            keep_empty_local_masks: true,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("score_s", self.score_s),
            ("score_s_prime", self.score_s_prime),
            ("iou_t", self.iou_t),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Pseudo-labelling strategy over a weakly annotated pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Strategy {
    Naive,
    Filter,
    Local,
}

impl Strategy {
    pub fn provenance(self) -> Provenance {
        match self {
            Strategy::Naive => Provenance::Naive,
            Strategy::Filter => Provenance::Filter,
            Strategy::Local => Provenance::Local,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Naive => "naive",
            Strategy::Filter => "filter",
            Strategy::Local => "local",
        }
    }

    /// Whether a pool record of this tier can be annotated. Naive ignores
    /// weak boxes, so it takes WEAK as well as NONE records.
    pub fn accepts(self, tier: AnnotationTier) -> bool {
        match self {
            Strategy::Naive => tier != AnnotationTier::Strong,
            Strategy::Filter | Strategy::Local => tier == AnnotationTier::Weak,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoAnnotation {
    pub bbox: AxisRect,
    /// Image frame.
    pub mask: BitMask,
    pub provenance: Provenance,
    pub round: u32,
    /// Detector score; absent for local annotations.
    pub score: Option<f64>,
}

fn from_detection(d: &Detection, provenance: Provenance) -> PseudoAnnotation {
    PseudoAnnotation {
        bbox: *d.bbox(),
        mask: d.mask().clone(),
        provenance,
        round: 0,
        score: Some(d.score()),
    }
}

/// Candidates with `score > score_s`, in input order.
pub fn naive_select(candidates: &[Detection], cfg: &StrategyConfig) -> Vec<PseudoAnnotation> {
    candidates
        .iter()
        .filter(|d| d.score() > cfg.score_s)
        .map(|d| from_detection(d, Provenance::Naive))
        .collect()
}

/// Candidates with `score > score_s_prime` whose box overlaps at least one
/// weak box with IoU above `iou_t`, in input order.
pub fn filter_select(
    candidates: &[Detection],
    weak_boxes: &[AxisRect],
    cfg: &StrategyConfig,
) -> Vec<PseudoAnnotation> {
    candidates
        .iter()
        .filter(|d| d.score() > cfg.score_s_prime)
        .filter(|d| weak_boxes.iter().any(|b| rect_iou(d.bbox(), b) > cfg.iou_t))
        .map(|d| from_detection(d, Provenance::Filter))
        .collect()
}

/// One annotation per weak box, in box order. The box itself is kept as the
/// annotation's box; the mask may be empty.
pub fn local_generate<D: Detector + ?Sized>(
    model: &D,
    image: &crate::data::GrayImage,
    weak_boxes: &[AxisRect],
) -> Result<Vec<PseudoAnnotation>> {
    weak_boxes
        .iter()
        .map(|b| {
            Ok(PseudoAnnotation {
                bbox: *b,
                mask: model.mask_for_box(image, b)?,
                provenance: Provenance::Local,
                round: 0,
                score: None,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoImage {
    pub image_id: String,
    pub image_path: PathBuf,
    pub annotations: Vec<PseudoAnnotation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PseudoStats {
    pub images: usize,
    pub annotations: usize,
    pub empty_masks: usize,
    /// Over annotations that carry a score.
    pub mean_score: Option<f64>,
}

/// Pseudo annotations for a pool, sorted by image id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PseudoSet {
    pub images: Vec<PseudoImage>,
    pub image_width: u32,
    pub image_height: u32,
}

impl PseudoSet {
    pub fn annotation_count(&self) -> usize {
        self.images.iter().map(|i| i.annotations.len()).sum()
    }

    pub fn stats(&self) -> PseudoStats {
        let all = self.images.iter().flat_map(|i| &i.annotations);
        let scores: Vec<f64> = all.clone().filter_map(|a| a.score).collect();
        PseudoStats {
            images: self.images.len(),
            annotations: self.annotation_count(),
            empty_masks: all.filter(|a| a.mask.is_empty()).count(),
            mean_score: (!scores.is_empty())
                .then(|| scores.iter().sum::<f64>() / scores.len() as f64),
        }
    }

    /// STRONG manifest records: each mask traced to polygons, grouped per
    /// annotation through `instances`.
    pub fn to_records(&self) -> Vec<AnnotationRecord> {
        self.images
            .iter()
            .map(|img| {
                let mut polygons = Vec::new();
                let mut instances = Vec::with_capacity(img.annotations.len());
                for a in &img.annotations {
                    let polys = mask_to_polygon(&a.mask);
                    instances.push(InstanceMeta {
                        bbox: a.bbox,
                        polygon_count: polys.len(),
                        score: a.score,
                    });
                    polygons.extend(polys);
                }
                let mut rec = AnnotationRecord::new(
                    img.image_id.clone(),
                    img.image_path.clone(),
                    Annotation::Strong(polygons),
                );
                let first = img.annotations.first();
                rec.pseudo = first.map(|a| PseudoTag {
                    provenance: a.provenance,
                    round: a.round,
                });
                rec.instances = Some(instances);
                rec
            })
            .collect()
    }

    /// Inverse of [`PseudoSet::to_records`] for records carrying a pseudo tag
    /// or an instance grouping. Masks are re-rasterized at the given size.
    pub fn from_records(records: &[AnnotationRecord], width: u32, height: u32) -> Result<Self> {
        let mut images = Vec::with_capacity(records.len());
        for rec in records {
            if rec.tier() != AnnotationTier::Strong {
                return Err(Error::WrongTier {
                    expected: AnnotationTier::Strong.to_string(),
                    found: rec.tier().to_string(),
                });
            }
            let groups = rec.instance_polygons();
            let tag = match (&rec.pseudo, groups.is_empty()) {
                (Some(t), _) => t.clone(),
                (None, true) => PseudoTag {
                    provenance: Provenance::Local,
                    round: 0,
                },
                (None, false) => {
                    return Err(Error::TierViolation {
                        image_id: rec.image_id.clone(),
                        message: "pseudo record without provenance".into(),
                    })
                }
            };
            let metas = rec.instances.as_deref();
            let annotations = groups
                .iter()
                .enumerate()
                .map(|(k, polys)| {
                    let mask = rasterize_all(polys, width, height)?;
                    let meta = metas.map(|m| &m[k]);
                    let bbox = match meta {
                        Some(m) => m.bbox,
                        None => mask_bbox(&mask)?,
                    };
                    Ok(PseudoAnnotation {
                        bbox,
                        mask,
                        provenance: tag.provenance,
                        round: tag.round,
                        score: meta.and_then(|m| m.score),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            images.push(PseudoImage {
                image_id: rec.image_id.clone(),
                image_path: rec.image_path.clone(),
                annotations,
            });
        }
        images.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        Ok(PseudoSet {
            images,
            image_width: width,
            image_height: height,
        })
    }
}

pub(crate) fn check_pool(strategy: Strategy, pool: &Dataset) -> Result<()> {
    match pool.records.iter().find(|r| !strategy.accepts(r.tier())) {
        Some(bad) => Err(Error::TierMismatch(format!(
            "{} strategy cannot annotate {}, which is {}",
            strategy.name(),
            bad.image_id,
            bad.tier()
        ))),
        None => Ok(()),
    }
}

/// Runs `strategy` over every pool image with `model`, reading each image
/// from its recorded path.
pub fn annotate_pool<D: Detector + ?Sized>(
    model: &D,
    pool: &Dataset,
    strategy: Strategy,
    cfg: &StrategyConfig,
    round: u32,
) -> Result<PseudoSet> {
    annotate_pool_with(model, pool, strategy, cfg, round, |rec| {
        read_pgm(&rec.image_path)
    })
}

/// [`annotate_pool`] with a caller-supplied image source.
pub fn annotate_pool_with<D, F>(
    model: &D,
    pool: &Dataset,
    strategy: Strategy,
    cfg: &StrategyConfig,
    round: u32,
    load: F,
) -> Result<PseudoSet>
where
    D: Detector + ?Sized,
    F: Fn(&AnnotationRecord) -> Result<crate::data::GrayImage> + Sync,
{
    cfg.validate()?;
    check_pool(strategy, pool)?;
    let mut images = pool
        .records
        .par_iter()
        .map(|rec| {
            let image = load(rec)?;
            let mut annotations = match strategy {
                Strategy::Naive => naive_select(&model.detect(&image), cfg),
                Strategy::Filter => {
                    filter_select(&model.detect(&image), rec.rects().unwrap_or(&[]), cfg)
                }
                Strategy::Local => {
                    let mut a = local_generate(model, &image, rec.rects().unwrap_or(&[]))?;
                    if !cfg.keep_empty_local_masks {
                        a.retain(|p| !p.mask.is_empty());
                    }
                    a
                }
            };
            for a in &mut annotations {
                a.round = round;
            }
            Ok(PseudoImage {
                image_id: rec.image_id.clone(),
                image_path: rec.image_path.clone(),
                annotations,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    images.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok(PseudoSet {
        images,
        image_width: pool.image_width,
        image_height: pool.image_height,
    })
}
