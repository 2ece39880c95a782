use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use textboot::data::{
    generate_synthetic, load_dataset, parse_manifest, save_dataset, split_dataset, write_manifest,
    Dataset, Downgrade, SceneSpec,
};
use textboot::detector::{load_model, TrainConfig};
use textboot::evaluation::{evaluate, EvalConfig, ImageDetections, MatchOn};
use textboot::geometry::{mask_bbox, rasterize_all, Detection};
use textboot::orchestrator::{
    run_pipeline_with, AnnotateWith, PipelineConfig, PipelineInputs, PipelineStrategy,
    RetrainOrigin,
};
use textboot::strategies::{annotate_pool, PseudoSet, Strategy, StrategyConfig};

use crate::run_manifest::RunManifest;
use crate::{
    AnnotateArgs, AnnotateStrategyArg, AnnotatorArg, DowngradeArg, EvalArgs, MatchArg, OriginArg,
    RunArgs, SplitArgs, StrategyArg, SynthArgs, ThresholdArgs, TrainArgs,
};

/// Environment variable naming the directory relative run paths resolve against.
pub const RUN_ROOT_ENV: &str = "TEXTBOOT_RUN_ROOT";

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SceneSpec::default(),
    };
    let pair = |v: &Option<Vec<f64>>, slot: &mut (f64, f64)| {
        if let Some(v) = v {
            *slot = (v[0], v[1]);
        }
    };
    let pair_u = |v: &Option<Vec<u32>>, slot: &mut (u32, u32)| {
        if let Some(v) = v {
            *slot = (v[0], v[1]);
        }
    };
    if let Some(n) = a.n_images {
        spec.n_images = n;
    }
    if let Some(w) = a.width {
        spec.width = w;
    }
    if let Some(h) = a.height {
        spec.height = h;
    }
    pair_u(&a.instances, &mut spec.instances_per_image);
    pair(&a.curvature, &mut spec.curvature);
    pair_u(&a.stroke_width, &mut spec.stroke_width);
    pair(&a.length, &mut spec.length);
    pair(&a.contrast, &mut spec.contrast);
    pair_u(&a.distractors, &mut spec.distractors_per_image);
    if let Some(n) = a.noise {
        spec.noise_level = n;
    }
    if let Some(p) = a.points_per_side {
        spec.points_per_side = p;
    }
    if let Some(p) = a.prefix {
        spec.id_prefix = p;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let d = generate_synthetic(&spec, &a.out)?;
    println!(
        "wrote {} images ({}x{}, {} instances) to {}",
        d.len(),
        d.image_width,
        d.image_height,
        d.instance_count(),
        a.out.join("manifest.jsonl").display()
    );
    Ok(())
}

pub fn split(a: SplitArgs) -> Result<()> {
    let d = load_dataset(&a.manifest)?;
    let to = match a.downgrade {
        DowngradeArg::Weak => Downgrade::Weak,
        DowngradeArg::None => Downgrade::None,
    };
    let (strong, rest) = split_dataset(&d, a.strong_fraction, a.seed, to)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_dataset(&strong, &a.out.join("strong.jsonl"))?;
    save_dataset(&rest, &a.out.join("rest.jsonl"))?;
    println!(
        "strong: {} records, rest: {} records -> {}",
        strong.len(),
        rest.len(),
        a.out.display()
    );
    Ok(())
}

fn strategy_cfg(t: &ThresholdArgs) -> StrategyConfig {
    StrategyConfig {
        score_s: t.score_s,
        score_s_prime: t.score_sprime,
        iou_t: t.iou_t,
        keep_empty_local_masks: !t.drop_empty_local_masks,
    }
}

fn train_cfg(t: &TrainArgs) -> TrainConfig {
    let mut c = TrainConfig::default();
    macro_rules! set {
        ($($field:ident <- $flag:ident),*) => {
            $(if let Some(v) = t.$flag { c.$field = v; })*
        };
    }
    set!(
        epochs <- epochs,
        learning_rate <- learning_rate,
        batch_size <- batch_size,
        score_threshold_for_proposals <- proposal_threshold,
        min_component_pixels <- min_component_pixels,
        patch_radius <- patch_radius,
        positive_weight <- positive_weight,
        pseudo_positive_weight <- pseudo_positive_weight,
        l2 <- l2
    );
    c
}

fn match_on(m: MatchArg) -> MatchOn {
    match m {
        MatchArg::Mask => MatchOn::Mask,
        MatchArg::Box => MatchOn::Box,
    }
}

/// Relative run directories land under `$TEXTBOOT_RUN_ROOT` when it is set.
pub fn resolve_run_dir(out: &Path) -> PathBuf {
    match std::env::var_os(RUN_ROOT_ENV) {
        Some(root) if out.is_relative() => PathBuf::from(root).join(out),
        _ => out.to_path_buf(),
    }
}

pub fn run(a: RunArgs) -> Result<()> {
    let cfg = PipelineConfig {
        strategy: match a.strategy {
            StrategyArg::Naive => PipelineStrategy::Naive,
            StrategyArg::Filter => PipelineStrategy::Filter,
            StrategyArg::Local => PipelineStrategy::Local,
            StrategyArg::Fully => PipelineStrategy::Fully,
        },
        rounds: a.rounds,
        strategy_cfg: strategy_cfg(&a.thresholds),
        train_cfg: train_cfg(&a.train),
        eval_cfg: EvalConfig {
            iou_threshold: a.iou,
            match_on: match_on(a.match_on),
        },
        retrain_origin: match a.retrain_origin {
            OriginArg::Baseline => RetrainOrigin::FromBaseline,
            OriginArg::Previous => RetrainOrigin::FromPrevious,
        },
        annotate_with: match a.annotate_with {
            AnnotatorArg::Latest => AnnotateWith::Latest,
            AnnotatorArg::Best => AnnotateWith::Best,
        },
        seed: a.seed,
    };
    if a.strong.is_none() && a.initial_model.is_none() {
        bail!("either --strong or --initial-model is required");
    }
    let strong = match &a.strong {
        Some(p) => load_dataset(p)?,
        None => Dataset::default(),
    };
    let pool = load_dataset(&a.pool)?;
    let test = load_dataset(&a.test)?;
    let mut inputs = PipelineInputs::new(&strong, &pool, &test);
    if let Some(p) = &a.initial_model {
        inputs.initial_model = Some(load_model(p)?);
    }
    if let Some(p) = &a.seed_pseudo {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let records = parse_manifest(&text, p)?;
        inputs.seed_pseudo = Some(PseudoSet::from_records(
            &records,
            pool.image_width,
            pool.image_height,
        )?);
    }

    let run_dir = resolve_run_dir(&a.out);
    let result = run_pipeline_with(inputs, &cfg, &run_dir)?;
    for r in &result.reports {
        println!(
            "round {}: P={:.3} R={:.3} F={:.3} pseudo={}",
            r.round, r.precision, r.recall, r.f_measure, r.pseudo_count
        );
    }
    let best = result.best();
    println!("best round {}: F={:.3}", best.round, best.f_measure);

    let mut input_files = vec![("pool", a.pool.as_path()), ("test", a.test.as_path())];
    if let Some(p) = &a.strong {
        input_files.insert(0, ("strong", p.as_path()));
    }
    if let Some(p) = &a.initial_model {
        input_files.push(("initial_model", p.as_path()));
    }
    if let Some(p) = &a.seed_pseudo {
        input_files.push(("seed_pseudo", p.as_path()));
    }
    RunManifest::build(&cfg, &input_files, &result, &run_dir)?.write(&run_dir)?;

    if let Some(why) = &result.failure {
        bail!("run stopped after round {}: {why}", result.reports.len() - 1);
    }
    Ok(())
}

/// Detections from a manifest: one per instance group with a non-empty
/// rasterization, scored by the instance score or 1 when absent.
pub fn detections_from_manifest(path: &Path, width: u32, height: u32) -> Result<Vec<ImageDetections>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let records = parse_manifest(&text, path)?;
    records
        .iter()
        .map(|rec| {
            let scores: Vec<Option<f64>> = match &rec.instances {
                Some(inst) => inst.iter().map(|i| i.score).collect(),
                None => vec![None; rec.instance_polygons().len()],
            };
            let mut detections = Vec::new();
            for (polys, score) in rec.instance_polygons().iter().zip(scores) {
                let mask = rasterize_all(polys, width, height)?;
                if mask.is_empty() {
                    continue;
                }
                let bbox = mask_bbox(&mask)?;
                detections.push(Detection::new(bbox, mask, score.unwrap_or(1.0))?);
            }
            Ok(ImageDetections {
                image_id: rec.image_id.clone(),
                detections,
            })
        })
        .collect()
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let truth = load_dataset(&a.gt)?;
    let dets = detections_from_manifest(&a.det, truth.image_width, truth.image_height)?;
    let cfg = EvalConfig {
        iou_threshold: a.iou,
        match_on: match_on(a.match_on),
    };
    let report = evaluate(&dets, &truth, &cfg)?;
    println!("{}", report.summary_line());
    println!(
        "TP={} FP={} FN={}",
        report.true_positives, report.false_positives, report.false_negatives
    );
    if let Some(out) = &a.out {
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

pub fn annotate(a: AnnotateArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let pool = load_dataset(&a.pool)?;
    let strategy = match a.strategy {
        AnnotateStrategyArg::Naive => Strategy::Naive,
        AnnotateStrategyArg::Filter => Strategy::Filter,
        AnnotateStrategyArg::Local => Strategy::Local,
    };
    let set = annotate_pool(&model, &pool, strategy, &strategy_cfg(&a.thresholds), a.round)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_manifest(&set.to_records(), &a.out)?;
    let stats = set.stats();
    println!(
        "{} pseudo annotations over {} images ({} empty masks) -> {}",
        stats.annotations,
        stats.images,
        stats.empty_masks,
        a.out.display()
    );
    Ok(())
}
