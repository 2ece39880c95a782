use std::fs;
use std::path::Path;

use textboot::data::{
    downgrade_to_weak, generate_synthetic, split_dataset, AnnotationRecord, Dataset, Downgrade,
    SceneSpec,
};
use textboot::detector::{load_model, TrainConfig};
use textboot::orchestrator::{
    cross_domain_annotate, run_pipeline, run_pipeline_with, PipelineConfig, PipelineInputs,
    PipelineStrategy,
};
use textboot::strategies::StrategyConfig;
use textboot::Error;

struct Fixture {
    _dir: tempfile::TempDir,
    root: std::path::PathBuf,
    strong: Dataset,
    weak: Dataset,
    full: Dataset,
    test: Dataset,
}

fn subset(d: &Dataset, records: &[AnnotationRecord]) -> Dataset {
    Dataset::new(records.to_vec(), d.image_width, d.image_height).unwrap()
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let spec = SceneSpec {
        n_images: 24,
        width: 40,
        height: 40,
        length: (16.0, 28.0),
        seed: 5,
        ..SceneSpec::default()
    };
    let all = generate_synthetic(&spec, &root.join("data")).unwrap();
    let train = subset(&all, &all.records[..18]);
    let test = subset(&all, &all.records[18..]);
    let (strong, weak) = split_dataset(&train, 0.25, 1, Downgrade::Weak).unwrap();
    let full: Vec<_> = train
        .records
        .iter()
        .filter(|r| weak.image_ids().any(|id| id == r.image_id))
        .cloned()
        .collect();
    let full = subset(&all, &full);
    Fixture {
        _dir: dir,
        root,
        strong,
        weak,
        full,
        test,
    }
}

fn cfg(strategy: PipelineStrategy, rounds: u32) -> PipelineConfig {
    PipelineConfig {
        strategy,
        rounds,
        train_cfg: TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        },
        seed: 3,
        ..PipelineConfig::default()
    }
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn zero_rounds_reports_only_the_baseline() {
    let f = fixture();
    let r = run_pipeline(&f.strong, &f.weak, &f.test, &cfg(PipelineStrategy::Local, 0), &f.root.join("run"))
        .unwrap();
    assert_eq!(r.reports.len(), 1);
    assert_eq!(r.best_round, 0);
    assert!(r.complete);
    assert_eq!(r.reports[0].pseudo_count, 0);
}

#[test]
fn every_strategy_writes_its_rounds() {
    let f = fixture();
    for s in [PipelineStrategy::Naive, PipelineStrategy::Filter, PipelineStrategy::Local] {
        let dir = f.root.join(format!("run_{s:?}"));
        let r = run_pipeline(&f.strong, &f.weak, &f.test, &cfg(s, 2), &dir).unwrap();
        assert_eq!(r.reports.len(), 3);
        let best = r.reports.iter().map(|x| x.f_measure).fold(f64::MIN, f64::max);
        assert_eq!(r.best().f_measure, best);
        for rep in &r.reports {
            assert_eq!(rep.f_measure, textboot::evaluation::f_measure(rep.precision, rep.recall));
            assert!(dir.join(&rep.model_path).is_file());
            assert!(dir.join(format!("round_{}/metrics.json", rep.round)).is_file());
        }
        assert!(dir.join("round_1/pseudo_manifest.jsonl").is_file());
        assert!(!dir.join("round_0/pseudo_manifest.jsonl").exists());
        let metrics = fs::read_to_string(dir.join("metrics.jsonl")).unwrap();
        assert_eq!(metrics.lines().count(), 3);
        let table = fs::read_to_string(dir.join("f_vs_round.tsv")).unwrap();
        assert_eq!(table.lines().count(), 4);
    }
    let local = run_pipeline(
        &f.strong,
        &f.weak,
        &f.test,
        &cfg(PipelineStrategy::Local, 1),
        &f.root.join("local_count"),
    )
    .unwrap();
    assert_eq!(local.reports[1].pseudo_count, f.weak.instance_count());
}

#[test]
fn fully_supervised_trains_once_without_pseudo_labels() {
    let f = fixture();
    let r = run_pipeline(&f.strong, &f.full, &f.test, &cfg(PipelineStrategy::Fully, 3), &f.root.join("fully"))
        .unwrap();
    assert_eq!(r.reports.len(), 2);
    assert!(r.reports.iter().all(|x| x.pseudo_count == 0));
    let err = run_pipeline(&f.strong, &f.weak, &f.test, &cfg(PipelineStrategy::Fully, 1), &f.root.join("x"))
        .unwrap_err();
    assert!(matches!(err, Error::TierMismatch(_)));
}

#[test]
fn overlapping_sets_are_rejected() {
    let f = fixture();
    let err = run_pipeline(&f.strong, &f.weak, &f.weak, &cfg(PipelineStrategy::Naive, 1), &f.root.join("bad"));
    assert!(matches!(err, Err(Error::DisjointnessViolation(_))));
    let mut leaky = f.weak.clone();
    leaky.records.push(downgrade_to_weak(&f.test.records[0]).unwrap());
    let err = run_pipeline(&f.strong, &leaky, &f.test, &cfg(PipelineStrategy::Local, 1), &f.root.join("bad2"));
    assert!(matches!(err, Err(Error::DisjointnessViolation(_))));
}

#[test]
fn unlabelled_pools_only_suit_naive() {
    let f = fixture();
    let (_, none) = split_dataset(&subset(&f.full, &f.full.records), 0.2, 0, Downgrade::None).unwrap();
    let err = run_pipeline(&f.strong, &none, &f.test, &cfg(PipelineStrategy::Filter, 1), &f.root.join("f"));
    assert!(matches!(err, Err(Error::TierMismatch(_))));
    let ok = run_pipeline(&f.strong, &none, &f.test, &cfg(PipelineStrategy::Naive, 1), &f.root.join("n"));
    assert_eq!(ok.unwrap().reports.len(), 2);
}

#[test]
fn identical_runs_produce_identical_artifacts() {
    let f = fixture();
    let c = cfg(PipelineStrategy::Filter, 2);
    let (a, b) = (f.root.join("a"), f.root.join("b"));
    let ra = run_pipeline(&f.strong, &f.weak, &f.test, &c, &a).unwrap();
    let rb = run_pipeline(&f.strong, &f.weak, &f.test, &c, &b).unwrap();
    assert_eq!(ra.best_round, rb.best_round);
    for file in ["metrics.jsonl", "f_vs_round.tsv"] {
        assert_eq!(read(&a.join(file)), read(&b.join(file)), "{file}");
    }
    for k in 0..=2 {
        for file in ["model.bin", "metrics.json"] {
            let rel = format!("round_{k}/{file}");
            assert_eq!(read(&a.join(&rel)), read(&b.join(&rel)), "{rel}");
        }
    }
}

#[test]
fn cross_domain_seed_feeds_a_new_run() {
    let f = fixture();
    let src = f.root.join("src");
    let r = run_pipeline(&f.strong, &f.weak, &f.test, &cfg(PipelineStrategy::Local, 0), &src).unwrap();
    let model_path = src.join(&r.best().model_path);

    let empty = cross_domain_annotate(&model_path, &Dataset::default(), &StrategyConfig::default(), &f.root.join("e.jsonl"))
        .unwrap();
    assert_eq!(empty.annotation_count(), 0);

    let out = f.root.join("seed.jsonl");
    let set = cross_domain_annotate(&model_path, &f.weak, &StrategyConfig::default(), &out).unwrap();
    assert_eq!(set.annotation_count(), f.weak.instance_count());
    assert!(out.is_file());

    let err = cross_domain_annotate(&model_path, &f.full, &StrategyConfig::default(), &f.root.join("s.jsonl"));
    assert!(matches!(err, Err(Error::TierMismatch(_))));

    let none = Dataset::default();
    let mut inputs = PipelineInputs::new(&none, &f.weak, &f.test);
    inputs.initial_model = Some(load_model(&model_path).unwrap());
    inputs.seed_pseudo = Some(set);
    let adapted = run_pipeline_with(inputs, &cfg(PipelineStrategy::Local, 1), &f.root.join("adapt")).unwrap();
    assert_eq!(adapted.reports.len(), 2);
    assert_eq!(adapted.reports[1].pseudo_count, f.weak.instance_count());
}
