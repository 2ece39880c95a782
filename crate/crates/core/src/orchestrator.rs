//! Recursive training: train on the strong subset, pseudo-label the pool,
//! retrain on both, evaluate, repeat.
//!
//! Run directory layout:
//!
//! ```text
//! run_dir/
//!   metrics.jsonl            one line per round
//!   f_vs_round.tsv           round, P, R, F, pseudo count
//!   timings.tsv              round, wall seconds
//!   round_<k>/model.bin
//!   round_<k>/metrics.json   full evaluation report
//!   round_<k>/pseudo_manifest.jsonl   (rounds that used pseudo labels)
//! ```
//!
//! Everything except `timings.tsv` is a deterministic function of the
//! inputs and the configuration.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{read_pgm, write_manifest, AnnotationTier, Dataset, GrayImage};
use crate::detector::{
    load_model, save_model, train, Detector, DetectorModel, ExampleSource, TrainConfig,
    TrainExample,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalConfig, EvalReport, ImageDetections};
use crate::geometry::rasterize;
use crate::strategies::{annotate_pool_with, check_pool, PseudoSet, Strategy, StrategyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PipelineStrategy {
    Naive,
    Filter,
    Local,
    /// Upper bound: the pool is used with its full strong annotations.
    Fully,
}

impl PipelineStrategy {
    pub fn as_strategy(self) -> Option<Strategy> {
        match self {
            PipelineStrategy::Naive => Some(Strategy::Naive),
            PipelineStrategy::Filter => Some(Strategy::Filter),
            PipelineStrategy::Local => Some(Strategy::Local),
            PipelineStrategy::Fully => None,
        }
    }
}

/// Parameters each retraining round starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RetrainOrigin {
    FromBaseline,
    FromPrevious,
}

/// Model that labels the pool in each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnnotateWith {
    Latest,
    Best,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub strategy: PipelineStrategy,
    /// Retraining rounds after the baseline; ignored by the fully
    /// supervised setting, which always trains once.
    pub rounds: u32,
    pub strategy_cfg: StrategyConfig,
    pub train_cfg: TrainConfig,
    pub eval_cfg: EvalConfig,
    pub retrain_origin: RetrainOrigin,
    pub annotate_with: AnnotateWith,
    /// Round `k` trains with seed `seed + k`.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            strategy: PipelineStrategy::Local,
            rounds: 3,
            strategy_cfg: StrategyConfig::default(),
            train_cfg: TrainConfig::default(),
            eval_cfg: EvalConfig::default(),
            retrain_origin: RetrainOrigin::FromBaseline,
            annotate_with: AnnotateWith::Latest,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.strategy_cfg.validate()?;
        self.train_cfg.validate()?;
        self.eval_cfg.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub pseudo_count: usize,
    /// Relative to the run directory.
    pub model_path: PathBuf,
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub reports: Vec<RoundReport>,
    pub best_round: u32,
    pub complete: bool,
    /// Why the run stopped early.
    pub failure: Option<String>,
}

impl RunResult {
    pub fn best(&self) -> &RoundReport {
        &self.reports[self.best_round as usize]
    }
}

/// Round with the highest F-measure; the earliest wins ties.
pub fn best_round(reports: &[RoundReport]) -> Option<u32> {
    let mut best: Option<&RoundReport> = None;
    for r in reports {
        if best.is_none_or(|b| r.f_measure > b.f_measure) {
            best = Some(r);
        }
    }
    best.map(|r| r.round)
}

pub struct PipelineInputs<'a> {
    pub strong: &'a Dataset,
    pub pool: &'a Dataset,
    pub test: &'a Dataset,
    /// Used as the round-0 model instead of training one on `strong`.
    pub initial_model: Option<DetectorModel>,
    /// Used in round 1 instead of annotating the pool.
    pub seed_pseudo: Option<PseudoSet>,
}

impl<'a> PipelineInputs<'a> {
    pub fn new(strong: &'a Dataset, pool: &'a Dataset, test: &'a Dataset) -> Self {
        PipelineInputs {
            strong,
            pool,
            test,
            initial_model: None,
            seed_pseudo: None,
        }
    }
}

pub fn run_pipeline(
    strong: &Dataset,
    pool: &Dataset,
    test: &Dataset,
    cfg: &PipelineConfig,
    run_dir: &Path,
) -> Result<RunResult> {
    run_pipeline_with(PipelineInputs::new(strong, pool, test), cfg, run_dir)
}

pub fn run_pipeline_with(
    inputs: PipelineInputs<'_>,
    cfg: &PipelineConfig,
    run_dir: &Path,
) -> Result<RunResult> {
    cfg.validate()?;
    check_inputs(&inputs, cfg)?;
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let images = ImageCache::load(&[inputs.strong, inputs.pool, inputs.test])?;
    let mut run = Run {
        inputs,
        cfg,
        run_dir,
        images,
        reports: Vec::new(),
    };
    match run.execute() {
        Ok(()) => {
            let best_round = best_round(&run.reports).unwrap_or(0);
            Ok(RunResult {
                reports: run.reports,
                best_round,
                complete: true,
                failure: None,
            })
        }
        Err(e) if !run.reports.is_empty() => {
            let best_round = best_round(&run.reports).unwrap_or(0);
            Ok(RunResult {
                reports: run.reports,
                best_round,
                complete: false,
                failure: Some(e.to_string()),
            })
        }
        Err(e) => Err(e),
    }
}

fn check_inputs(inputs: &PipelineInputs<'_>, cfg: &PipelineConfig) -> Result<()> {
    if inputs.initial_model.is_none() {
        if inputs.strong.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        if inputs.strong.uniform_tier() != Some(AnnotationTier::Strong) {
            return Err(Error::TierMismatch(
                "the strong subset must be STRONG".into(),
            ));
        }
    }
    if inputs.test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    match cfg.strategy.as_strategy() {
        Some(s) => check_pool(s, inputs.pool)?,
        None => {
            if let Some(bad) = inputs
                .pool
                .records
                .iter()
                .find(|r| r.tier() != AnnotationTier::Strong)
            {
                return Err(Error::TierMismatch(format!(
                    "the fully supervised setting needs a STRONG pool, {} is {}",
                    bad.image_id,
                    bad.tier()
                )));
            }
        }
    }
    let sets = [
        ("strong", inputs.strong),
        ("pool", inputs.pool),
        ("test", inputs.test),
    ];
    let mut owner: HashMap<&str, &str> = HashMap::new();
    for (name, d) in sets {
        for id in d.image_ids() {
            if let Some(prev) = owner.insert(id, name) {
                return Err(Error::DisjointnessViolation(format!(
                    "image {id} is in both the {prev} and {name} sets"
                )));
            }
        }
    }
    let dims: HashSet<(u32, u32)> = sets
        .iter()
        .filter(|(_, d)| !d.is_empty())
        .map(|(_, d)| (d.image_width, d.image_height))
        .collect();
    if dims.len() > 1 {
        return Err(Error::DimensionMismatch(format!(
            "datasets disagree on image size: {dims:?}"
        )));
    }
    Ok(())
}

struct ImageCache(HashMap<String, Arc<GrayImage>>);

impl ImageCache {
    fn load(sets: &[&Dataset]) -> Result<Self> {
        let loaded = sets
            .iter()
            .flat_map(|d| &d.records)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|r| Ok((r.image_id.clone(), Arc::new(read_pgm(&r.image_path)?))))
            .collect::<Result<HashMap<_, _>>>()?;
        Ok(ImageCache(loaded))
    }

    fn get(&self, id: &str) -> Result<&Arc<GrayImage>> {
        self.0
            .get(id)
            .ok_or_else(|| Error::MissingImage(PathBuf::from(id)))
    }
}

struct Run<'a> {
    inputs: PipelineInputs<'a>,
    cfg: &'a PipelineConfig,
    run_dir: &'a Path,
    images: ImageCache,
    reports: Vec<RoundReport>,
}

impl Run<'_> {
    fn execute(&mut self) -> Result<()> {
        let start = Instant::now();
        let strong_examples = self.strong_examples(self.inputs.strong)?;
        let baseline = match self.inputs.initial_model.take() {
            Some(m) => m,
            None => train(None, &strong_examples, &self.round_train_cfg(0))?,
        };
        let mut best_f = self.finish_round(0, &baseline, None, start)?.f_measure;

        let mut latest = baseline.clone();
        let mut best = baseline.clone();
        let rounds = match self.cfg.strategy {
            PipelineStrategy::Fully => 1,
            _ => self.cfg.rounds,
        };
        for round in 1..=rounds {
            let start = Instant::now();
            let (pseudo_examples, pseudo) = match self.cfg.strategy.as_strategy() {
                None => (self.strong_examples(self.inputs.pool)?, None),
                Some(strategy) => {
                    let set = match (round, self.inputs.seed_pseudo.take()) {
                        (1, Some(seeded)) => seeded,
                        _ => {
                            let annotator = match self.cfg.annotate_with {
                                AnnotateWith::Latest => &latest,
                                AnnotateWith::Best => &best,
                            };
                            let images = &self.images;
                            annotate_pool_with(
                                annotator,
                                self.inputs.pool,
                                strategy,
                                &self.cfg.strategy_cfg,
                                round,
                                |r| images.get(&r.image_id).map(|i| (**i).clone()),
                            )?
                        }
                    };
                    self.check_leakage(&set)?;
                    (self.pseudo_examples(&set)?, Some(set))
                }
            };
            let mut examples = strong_examples.clone();
            examples.extend(pseudo_examples);
            let origin = match self.cfg.retrain_origin {
                RetrainOrigin::FromBaseline => &baseline,
                RetrainOrigin::FromPrevious => &latest,
            };
            let model = train(Some(origin), &examples, &self.round_train_cfg(round))?;
            let report = self.finish_round(round, &model, pseudo.as_ref(), start)?;
            if report.f_measure > best_f {
                best_f = report.f_measure;
                best = model.clone();
            }
            latest = model;
        }
        Ok(())
    }

    fn round_train_cfg(&self, round: u32) -> TrainConfig {
        TrainConfig {
            seed: self.cfg.seed.wrapping_add(round as u64),
            ..self.cfg.train_cfg.clone()
        }
    }

    fn strong_examples(&self, d: &Dataset) -> Result<Vec<TrainExample>> {
        d.records
            .par_iter()
            .map(|r| {
                let image = self.images.get(&r.image_id)?.clone();
                let masks = r
                    .instance_polygons()
                    .iter()
                    .flat_map(|g| g.iter())
                    .map(|p| rasterize(p, image.width(), image.height()))
                    .collect::<Result<Vec<_>>>()?;
                TrainExample::new(image, masks, ExampleSource::Original)
            })
            .collect()
    }

    fn pseudo_examples(&self, set: &PseudoSet) -> Result<Vec<TrainExample>> {
        set.images
            .iter()
            .map(|img| {
                let image = self.images.get(&img.image_id)?.clone();
                let masks = img.annotations.iter().map(|a| a.mask.clone()).collect();
                TrainExample::new(image, masks, ExampleSource::Pseudo)
            })
            .collect()
    }

    fn check_leakage(&self, set: &PseudoSet) -> Result<()> {
        let pool: HashSet<&str> = self.inputs.pool.image_ids().collect();
        for img in &set.images {
            if !pool.contains(img.image_id.as_str()) {
                return Err(Error::DisjointnessViolation(format!(
                    "pseudo label for {} which is not a pool image",
                    img.image_id
                )));
            }
        }
        Ok(())
    }

    fn evaluate(&self, model: &DetectorModel) -> Result<EvalReport> {
        let dets = self
            .inputs
            .test
            .records
            .par_iter()
            .map(|r| {
                Ok(ImageDetections {
                    image_id: r.image_id.clone(),
                    detections: model.detect(self.images.get(&r.image_id)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        evaluate(&dets, self.inputs.test, &self.cfg.eval_cfg)
    }

    fn finish_round(
        &mut self,
        round: u32,
        model: &DetectorModel,
        pseudo: Option<&PseudoSet>,
        start: Instant,
    ) -> Result<RoundReport> {
        let eval = self.evaluate(model)?;
        let rel_dir = PathBuf::from(format!("round_{round}"));
        let dir = self.run_dir.join(&rel_dir);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        save_model(model, &dir.join("model.bin"))?;
        write_json(
            &dir.join("metrics.json"),
            &RoundMetrics { round, eval: &eval },
        )?;
        if let Some(set) = pseudo {
            write_manifest(&set.to_records(), &dir.join("pseudo_manifest.jsonl"))?;
        }
        let report = RoundReport {
            round,
            precision: eval.precision,
            recall: eval.recall,
            f_measure: eval.f_measure,
            pseudo_count: pseudo.map_or(0, PseudoSet::annotation_count),
            model_path: rel_dir.join("model.bin"),
            wall_time: start.elapsed().as_secs_f64(),
        };
        self.reports.push(report.clone());
        self.write_summaries()?;
        Ok(report)
    }

    fn write_summaries(&self) -> Result<()> {
        let mut jsonl = String::new();
        let mut tsv = String::from("round\tprecision\trecall\tf_measure\tpseudo_count\n");
        let mut timings = String::from("round\twall_seconds\n");
        for r in &self.reports {
            jsonl.push_str(&serde_json::to_string(r).expect("reports serialize"));
            jsonl.push('\n');
            let _ = writeln!(
                tsv,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{}",
                r.round, r.precision, r.recall, r.f_measure, r.pseudo_count
            );
            let _ = writeln!(timings, "{}\t{:.3}", r.round, r.wall_time);
        }
        write_text(&self.run_dir.join("metrics.jsonl"), &jsonl)?;
        write_text(&self.run_dir.join("f_vs_round.tsv"), &tsv)?;
        write_text(&self.run_dir.join("timings.tsv"), &timings)
    }
}

#[derive(Serialize)]
struct RoundMetrics<'a> {
    round: u32,
    #[serde(flatten)]
    eval: &'a EvalReport,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("metrics serialize");
    text.push('\n');
    write_text(path, &text)
}

/// Labels a WEAK pool from another domain with a saved model using the
/// local strategy, and writes the result as a manifest.
pub fn cross_domain_annotate(
    model_path: &Path,
    target_pool: &Dataset,
    strategy_cfg: &StrategyConfig,
    out_manifest: &Path,
) -> Result<PseudoSet> {
    let model = load_model(model_path)?;
    let set =
        crate::strategies::annotate_pool(&model, target_pool, Strategy::Local, strategy_cfg, 0)?;
    write_manifest(&set.to_records(), out_manifest)?;
    Ok(set)
}
