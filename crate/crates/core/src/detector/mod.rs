//! The detector contract consumed by the strategies, and a small trainable
//! reference detector: per-pixel logistic regression over patch features.
//!
//! Proposals are the 4-connected components of the thresholded probability
//! map; a component's score is its mean pixel probability. `mask_for_box`
//! thresholds the same map inside a caller-supplied box, which is what the
//! local strategy feeds weak rectangles through.

mod features;
mod io;

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use features::FeatureLayout;
pub use io::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};

use crate::data::GrayImage;
use crate::error::{Error, Result};
use crate::geometry::{connected_components, mask_bbox, AxisRect, BitMask, Detection};

/// Pixel probability at or above which `mask_for_box` sets a pixel.
pub const MASK_THRESHOLD: f64 = 0.5;

/// What every strategy needs from a detector.
pub trait Detector: Sync {
    /// Candidate detections sorted by descending score.
    fn detect(&self, image: &GrayImage) -> Vec<Detection>;

    /// Image-frame mask confined to `bx`; empty when the box holds no text.
    fn mask_for_box(&self, image: &GrayImage, bx: &AxisRect) -> Result<BitMask>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub seed: u64,
    /// Probability threshold for proposal components, in (0, 1).
    pub score_threshold_for_proposals: f64,
    pub min_component_pixels: u32,
    pub patch_radius: u32,
    pub l2: f64,
    /// Loss weight of text pixels relative to background pixels in
    /// original annotations.
    pub positive_weight: f64,
    /// The same weight for pseudo annotations. Kept separate because a
    /// large value here widens pseudo masks a little more every round.
    pub pseudo_positive_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 4,
            learning_rate: 1.0,
            batch_size: 64,
            seed: 0,
            score_threshold_for_proposals: 0.5,
            min_component_pixels: 8,
            patch_radius: 2,
            l2: 0.0,
            positive_weight: 1.5,
            pseudo_positive_weight: 1.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("train config: {m}")));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate {} must be positive",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        let t = self.score_threshold_for_proposals;
        if !(t > 0.0 && t < 1.0) {
            return bad(format!("proposal threshold {t} must lie in (0, 1)"));
        }
        for w in [self.positive_weight, self.pseudo_positive_weight] {
            if !(w > 0.0 && w.is_finite()) {
                return bad(format!("positive weight {w} must be positive"));
            }
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad(format!("l2 {} must be non-negative", self.l2));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleSource {
    Original,
    Pseudo,
}

#[derive(Debug, Clone)]
pub struct TrainExample {
    pub image: Arc<GrayImage>,
    /// Image-frame instance masks; their union is the positive class.
    pub masks: Vec<BitMask>,
    pub source: ExampleSource,
}

impl TrainExample {
    pub fn new(image: Arc<GrayImage>, masks: Vec<BitMask>, source: ExampleSource) -> Result<Self> {
        for m in &masks {
            if m.width() != image.width() || m.height() != image.height() {
                return Err(Error::DimensionMismatch(format!(
                    "{}x{} mask on a {}x{} image",
                    m.width(),
                    m.height(),
                    image.width(),
                    image.height()
                )));
            }
        }
        Ok(TrainExample {
            image,
            masks,
            source,
        })
    }

    fn labels(&self) -> Vec<bool> {
        let mut labels = vec![false; self.image.pixels().len()];
        for m in &self.masks {
            for (l, b) in labels.iter_mut().zip(m.bits()) {
                *l |= *b;
            }
        }
        labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrainingMeta {
    /// Number of `train` calls this parameter vector has been through.
    pub rounds_seen: u32,
    /// Total epochs across those calls.
    pub epochs: u32,
    pub seed: u64,
}

/// Patch-feature logistic regression detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    layout: FeatureLayout,
    /// Feature weights followed by the bias.
    params: Vec<f64>,
    score_threshold: f64,
    min_component_pixels: u32,
    meta: TrainingMeta,
}

impl DetectorModel {
    pub fn new(patch_radius: u32, score_threshold: f64, min_component_pixels: u32) -> Self {
        let layout = FeatureLayout::new(patch_radius);
        DetectorModel {
            params: vec![0.0; layout.len() + 1],
            layout,
            score_threshold,
            min_component_pixels,
            meta: TrainingMeta::default(),
        }
    }

    pub(crate) fn from_parts(
        layout: FeatureLayout,
        params: Vec<f64>,
        score_threshold: f64,
        min_component_pixels: u32,
        meta: TrainingMeta,
    ) -> Result<Self> {
        if params.len() != layout.len() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for {} features",
                params.len(),
                layout.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidConfig("non-finite model parameter".into()));
        }
        Ok(DetectorModel {
            layout,
            params,
            score_threshold,
            min_component_pixels,
            meta,
        })
    }

    pub fn layout(&self) -> FeatureLayout {
        self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn score_threshold(&self) -> f64 {
        self.score_threshold
    }

    pub fn min_component_pixels(&self) -> u32 {
        self.min_component_pixels
    }

    pub fn meta(&self) -> TrainingMeta {
        self.meta
    }

    fn logit(&self, f: &[f32]) -> f64 {
        let (w, b) = self.params.split_at(f.len());
        let mut z = b[0];
        for (wi, xi) in w.iter().zip(f) {
            z += wi * *xi as f64;
        }
        z
    }

    /// Text probability of every pixel of the window, row-major.
    pub fn probability_window(&self, image: &GrayImage, window: (u32, u32, u32, u32)) -> Vec<f64> {
        let feats = self.layout.extract(image, window);
        feats
            .chunks_exact(self.layout.len())
            .map(|f| sigmoid(self.logit(f)))
            .collect()
    }

    pub fn probability_map(&self, image: &GrayImage) -> Vec<f64> {
        self.probability_window(image, (0, 0, image.width(), image.height()))
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Binary cross-entropy of one sample from its logit, computed stably.
fn bce_from_logit(z: f64, label: bool) -> f64 {
    let softplus = |t: f64| t.max(0.0) + (-t.abs()).exp().ln_1p();
    if label {
        softplus(-z)
    } else {
        softplus(z)
    }
}

impl Detector for DetectorModel {
    fn detect(&self, image: &GrayImage) -> Vec<Detection> {
        let probs = self.probability_map(image);
        let (w, h) = (image.width(), image.height());
        let mut on = BitMask::image(w, h).expect("images have positive size");
        for (i, p) in probs.iter().enumerate() {
            if *p >= self.score_threshold {
                on.set(i as u32 % w, i as u32 / w, true);
            }
        }
        let mut dets: Vec<Detection> = connected_components(&on)
            .into_iter()
            .filter(|c| c.len() >= self.min_component_pixels as usize)
            .map(|comp| {
                let mut mask = BitMask::image(w, h).expect("images have positive size");
                let mut total = 0.0;
                for &(x, y) in &comp {
                    mask.set(x, y, true);
                    total += probs[(y * w + x) as usize];
                }
                let score = (total / comp.len() as f64).clamp(0.0, 1.0);
                let bbox = mask_bbox(&mask).expect("components are non-empty");
                Detection::new(bbox, mask, score).expect("component lies in its own box")
            })
            .collect();
        dets.sort_by(|a, b| b.score().total_cmp(&a.score()));
        dets
    }

    fn mask_for_box(&self, image: &GrayImage, bx: &AxisRect) -> Result<BitMask> {
        if bx.is_degenerate() {
            return Err(bx.degenerate_error());
        }
        let (w, h) = (image.width(), image.height());
        let mut mask = BitMask::image(w, h)?;
        let (x0, y0, x1, y1) = bx.pixel_window(w, h);
        if x0 >= x1 || y0 >= y1 {
            return Ok(mask);
        }
        let probs = self.probability_window(image, (x0, y0, x1, y1));
        let ww = x1 - x0;
        for (i, p) in probs.iter().enumerate() {
            if *p >= MASK_THRESHOLD {
                mask.set(x0 + i as u32 % ww, y0 + i as u32 / ww, true);
            }
        }
        Ok(mask)
    }
}

/// Per-epoch mean training loss alongside the trained model.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DetectorModel,
    pub epoch_losses: Vec<f64>,
}

/// Trains (or fine-tunes `base`) with mini-batch gradient descent on
/// per-pixel binary cross-entropy. Deterministic for a fixed seed.
pub fn train(
    base: Option<&DetectorModel>,
    examples: &[TrainExample],
    cfg: &TrainConfig,
) -> Result<DetectorModel> {
    train_with_log(base, examples, cfg).map(|o| o.model)
}

pub fn train_with_log(
    base: Option<&DetectorModel>,
    examples: &[TrainExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut model = match base {
        Some(b) => {
            if b.layout.patch_radius != cfg.patch_radius {
                return Err(Error::InvalidConfig(format!(
                    "base model uses patch radius {}, config asks for {}",
                    b.layout.patch_radius, cfg.patch_radius
                )));
            }
            let mut m = b.clone();
            m.score_threshold = cfg.score_threshold_for_proposals;
            m.min_component_pixels = cfg.min_component_pixels;
            m
        }
        None => DetectorModel::new(
            cfg.patch_radius,
            cfg.score_threshold_for_proposals,
            cfg.min_component_pixels,
        ),
    };
    let layout = model.layout;
    let n_feat = layout.len();

    let prepared: Vec<(Vec<f32>, Vec<bool>)> = examples
        .par_iter()
        .map(|ex| {
            let img = &ex.image;
            (
                layout.extract(img, (0, 0, img.width(), img.height())),
                ex.labels(),
            )
        })
        .collect();
    let mut order: Vec<(u32, u32)> = prepared
        .iter()
        .enumerate()
        .flat_map(|(e, (_, labels))| (0..labels.len() as u32).map(move |p| (e as u32, p)))
        .collect();
    if order.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }

    let positive_weight: Vec<f64> = examples
        .iter()
        .map(|ex| match ex.source {
            ExampleSource::Original => cfg.positive_weight,
            ExampleSource::Pseudo => cfg.pseudo_positive_weight,
        })
        .collect();
    let mut grad = vec![0.0; n_feat + 1];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs as usize);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(((model.meta.epochs + epoch) as u64) << 1);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size as usize) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &(e, p) in batch {
                let (feats, labels) = &prepared[e as usize];
                let f = &feats[p as usize * n_feat..(p as usize + 1) * n_feat];
                let label = labels[p as usize];
                let z = model.logit(f);
                let weight = if label { positive_weight[e as usize] } else { 1.0 };
                loss_sum += weight * bce_from_logit(z, label);
                let err = weight * (sigmoid(z) - if label { 1.0 } else { 0.0 });
                for (g, x) in grad.iter_mut().zip(f) {
                    *g += err * *x as f64;
                }
                grad[n_feat] += err;
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            for (i, (w, g)) in model.params.iter_mut().zip(&grad).enumerate() {
                let decay = if i < n_feat { cfg.l2 * *w } else { 0.0 };
                *w -= scale * g + cfg.learning_rate * decay;
            }
        }
        let mean_loss = loss_sum / order.len() as f64;
        if !mean_loss.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }
        epoch_losses.push(mean_loss);
    }
    model.meta = TrainingMeta {
        rounds_seen: model.meta.rounds_seen + 1,
        epochs: model.meta.epochs + cfg.epochs,
        seed: cfg.seed,
    };
    Ok(TrainOutcome {
        model,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::OnceLock;

    use super::*;
    use crate::data::{generate_scene, SceneSpec};
    use crate::geometry::{mask_iou, rasterize};

    fn spec(instances: u32, seed: u64) -> SceneSpec {
        SceneSpec {
            instances_per_image: (instances, instances),
            contrast: (90.0, 130.0),
            noise_level: 0.0,
            seed,
            ..SceneSpec::default()
        }
    }

    fn examples(spec: &SceneSpec, n: u32) -> Vec<TrainExample> {
        (0..n)
            .map(|i| {
                let scene = generate_scene(spec, i).unwrap();
                let masks = scene
                    .ribbons
                    .iter()
                    .map(|r| rasterize(&r.polygon, spec.width, spec.height).unwrap())
                    .collect();
                TrainExample::new(Arc::new(scene.image), masks, ExampleSource::Original).unwrap()
            })
            .collect()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            epochs: 6,
            positive_weight: 3.0,
            ..TrainConfig::default()
        }
    }

    fn trained() -> &'static (DetectorModel, Vec<f64>) {
        static MODEL: OnceLock<(DetectorModel, Vec<f64>)> = OnceLock::new();
        MODEL.get_or_init(|| {
            let out = train_with_log(None, &examples(&spec(2, 1), 24), &cfg()).unwrap();
            (out.model, out.epoch_losses)
        })
    }

    #[test]
    fn training_is_deterministic() {
        let ex = examples(&spec(2, 5), 3);
        let c = TrainConfig {
            epochs: 2,
            ..cfg()
        };
        let a = train(None, &ex, &c).unwrap();
        let b = train(None, &ex, &c).unwrap();
        assert_eq!(a.params(), b.params());
        let other = train(None, &ex, &TrainConfig { seed: 9, ..c }).unwrap();
        assert_ne!(a.params(), other.params());
    }

    #[test]
    fn config_and_input_checks() {
        let zero = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(zero.validate(), Err(Error::InvalidConfig(_))));
        assert!(matches!(
            train(None, &[], &TrainConfig::default()),
            Err(Error::EmptyTrainingSet)
        ));
        let img = Arc::new(GrayImage::new(8, 8));
        let wrong = BitMask::image(4, 4).unwrap();
        assert!(TrainExample::new(img, vec![wrong], ExampleSource::Pseudo).is_err());
    }

    #[test]
    fn loss_decreases_and_fine_tuning_counts_rounds() {
        let (model, losses) = trained();
        assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
        assert_eq!(model.meta().rounds_seen, 1);
        let tuned = train(Some(model), &examples(&spec(1, 2), 2), &cfg()).unwrap();
        assert_eq!(tuned.meta().rounds_seen, 2);
        assert_eq!(tuned.meta().epochs, 12);
    }

    #[test]
    fn held_out_pixel_accuracy() {
        let (model, _) = trained();
        let (mut right, mut total) = (0usize, 0usize);
        for ex in examples(&spec(2, 77), 10) {
            let labels = ex.labels();
            let probs = model.probability_map(&ex.image);
            right += probs
                .iter()
                .zip(&labels)
                .filter(|(p, l)| (**p >= MASK_THRESHOLD) == **l)
                .count();
            total += labels.len();
        }
        let acc = right as f64 / total as f64;
        assert!(acc >= 0.95, "accuracy {acc}");
    }

    #[test]
    fn black_image_yields_nothing() {
        let (model, _) = trained();
        assert!(model.detect(&GrayImage::new(64, 64)).is_empty());
    }

    #[test]
    fn ribbons_are_detected() {
        let (model, _) = trained();
        let single = examples(&spec(1, 31), 1).remove(0);
        let dets = model.detect(&single.image);
        assert_eq!(dets.len(), 1);
        let iou = mask_iou(dets[0].mask(), &single.masks[0]).unwrap();
        assert!(iou >= 0.7, "iou {iou}");

        let pair = examples(&spec(2, 32), 1).remove(0);
        let dets = model.detect(&pair.image);
        assert_eq!(dets.len(), 2);
        assert!(dets.windows(2).all(|w| w[0].score() >= w[1].score()));
        for d in &dets {
            assert!(d.mask().is_within(d.bbox()));
            assert!((0.0..=1.0).contains(&d.score()));
        }
        let mut inter = dets[0].mask().clone();
        inter.union_with(dets[1].mask()).unwrap();
        assert_eq!(inter.count(), dets[0].mask().count() + dets[1].mask().count());
    }

    #[test]
    fn mask_for_box_behaviour() {
        let (model, _) = trained();
        let ex = examples(&spec(1, 40), 1).remove(0);
        let truth = &ex.masks[0];
        let bx = mask_bbox(truth).unwrap();
        let m = model.mask_for_box(&ex.image, &bx).unwrap();
        assert!(m.is_within(&bx));
        let iou = mask_iou(&m, truth).unwrap();
        assert!(iou >= 0.7, "iou {iou}");

        let blank = GrayImage::new(64, 64);
        let empty = model
            .mask_for_box(&blank, &AxisRect::new(10., 10., 30., 30.).unwrap())
            .unwrap();
        assert!(empty.is_empty());

        let full = AxisRect::new(0., 0., 64., 64.).unwrap();
        let whole = model.mask_for_box(&ex.image, &full).unwrap();
        let probs = model.probability_map(&ex.image);
        let expected: Vec<bool> = probs.iter().map(|p| *p >= MASK_THRESHOLD).collect();
        assert_eq!(whole.bits(), &expected[..]);

        let degenerate = AxisRect {
            x_min: 3.,
            y_min: 3.,
            x_max: 3.,
            y_max: 9.,
        };
        assert!(matches!(
            model.mask_for_box(&ex.image, &degenerate),
            Err(Error::DegenerateBox { .. })
        ));
    }

    #[test]
    fn mask_for_box_is_monotone() {
        let (model, _) = trained();
        let ex = examples(&spec(2, 50), 1).remove(0);
        let small = AxisRect::new(12.5, 8., 40., 33.7).unwrap();
        let big = AxisRect::new(5., 2., 60., 50.).unwrap();
        let a = model.mask_for_box(&ex.image, &small).unwrap();
        let b = model.mask_for_box(&ex.image, &big).unwrap();
        assert!(a.iter_set().all(|(x, y)| b.get(x, y)));
    }

    #[test]
    fn save_load_preserves_detections() {
        let (model, _) = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_model(model, &path).unwrap();
        let back = load_model(&path).unwrap();
        for ex in examples(&spec(3, 60), 10) {
            assert_eq!(model.detect(&ex.image), back.detect(&ex.image));
        }
    }
}
