use proptest::prelude::*;
use textboot::data::{Annotation, AnnotationRecord, Dataset};
use textboot::evaluation::{
    brute_force_match, evaluate, f_measure, greedy_match, EvalConfig, ImageDetections, MatchOn,
};
use textboot::geometry::{rasterize, rect_iou, AxisRect, Detection, Polygon};

const W: u32 = 48;
const H: u32 = 32;

fn rect() -> impl Strategy<Value = AxisRect> {
    (0u32..W - 4, 0u32..H - 4, 3u32..16, 3u32..12).prop_map(|(x, y, w, h)| {
        AxisRect::new(
            x as f64,
            y as f64,
            (x + w).min(W) as f64,
            (y + h).min(H) as f64,
        )
        .unwrap()
    })
}

/// Truth boxes plus detections that are mostly jittered copies of them, so
/// the table has the overlap structure of a real image.
fn scene(max: usize) -> impl Strategy<Value = (Vec<AxisRect>, Vec<AxisRect>)> {
    prop::collection::vec(rect(), 0..=max).prop_flat_map(move |truth| {
        let n = truth.len();
        let det = prop::collection::vec(
            (any::<bool>(), 0..n.max(1), -3i32..=3, -3i32..=3, rect()),
            0..=max,
        );
        (Just(truth), det)
    })
    .prop_map(|(truth, specs)| {
        let dets = specs
            .into_iter()
            .map(|(copy, i, dx, dy, fresh)| match truth.get(i) {
                Some(t) if copy => t.translate(dx as f64, dy as f64),
                _ => fresh,
            })
            .collect();
        (truth, dets)
    })
}

fn table(dets: &[AxisRect], truth: &[AxisRect]) -> Vec<Vec<f64>> {
    dets.iter()
        .map(|d| truth.iter().map(|t| rect_iou(d, t)).collect())
        .collect()
}

fn rect_poly(r: &AxisRect) -> Polygon {
    Polygon::from_rect(r).unwrap()
}

fn detection(r: &AxisRect, score: f64) -> Detection {
    let mask = rasterize(&rect_poly(r), W, H).unwrap();
    let clipped = AxisRect::new(
        r.x_min.max(0.0),
        r.y_min.max(0.0),
        r.x_max.min(W as f64),
        r.y_max.min(H as f64),
    )
    .unwrap_or(*r);
    Detection::new(clipped, mask, score).unwrap()
}

fn dataset(images: &[Vec<AxisRect>]) -> Dataset {
    let records = images
        .iter()
        .enumerate()
        .map(|(i, rects)| {
            AnnotationRecord::new(
                format!("img{i:02}"),
                format!("/nonexistent/img{i:02}.pgm"),
                Annotation::Strong(rects.iter().map(rect_poly).collect()),
            )
        })
        .collect();
    Dataset::new(records, W, H).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn greedy_is_within_one_of_optimal((truth, dets) in scene(6), thr in 0.1f64..0.9) {
        let iou = table(&dets, &truth);
        let g = greedy_match(&iou, truth.len(), thr);
        let b = brute_force_match(&iou, truth.len(), thr).unwrap();
        prop_assert!(g.tp <= b.tp);
        prop_assert!(g.tp + 1 >= b.tp, "greedy {} optimal {}", g.tp, b.tp);
        prop_assert_eq!(g.tp + g.fn_, truth.len());
        prop_assert_eq!(g.tp + g.fp, dets.len());
        prop_assert_eq!(b.tp + b.fn_, truth.len());
        prop_assert_eq!(b.tp + b.fp, dets.len());
    }

    #[test]
    fn raising_the_threshold_never_adds_matches(
        images in prop::collection::vec(scene(5), 1..5),
        lo in 0.1f64..0.9,
        step in 0.0f64..0.5,
    ) {
        let truth = dataset(&images.iter().map(|(t, _)| t.clone()).collect::<Vec<_>>());
        let dets: Vec<ImageDetections> = images
            .iter()
            .enumerate()
            .map(|(i, (_, d))| ImageDetections {
                image_id: format!("img{i:02}"),
                detections: d.iter().enumerate().map(|(k, r)| detection(r, 1.0 - k as f64 * 0.05)).collect(),
            })
            .collect();
        for match_on in [MatchOn::Mask, MatchOn::Box] {
            let at = |t: f64| evaluate(&dets, &truth, &EvalConfig { iou_threshold: t, match_on }).unwrap();
            let (a, b) = (at(lo), at((lo + step).min(0.99)));
            prop_assert!(b.true_positives <= a.true_positives);
            for r in [&a, &b] {
                prop_assert_eq!(r.true_positives + r.false_negatives, truth.instance_count());
                prop_assert_eq!(
                    r.true_positives + r.false_positives,
                    dets.iter().map(|d| d.detections.len()).sum::<usize>()
                );
                prop_assert_eq!(r.f_measure, f_measure(r.precision, r.recall));
            }
        }
    }

    #[test]
    fn image_order_does_not_matter(
        images in prop::collection::vec(scene(5), 1..5),
        rotate in 0usize..5,
    ) {
        let truth = dataset(&images.iter().map(|(t, _)| t.clone()).collect::<Vec<_>>());
        let dets: Vec<ImageDetections> = images
            .iter()
            .enumerate()
            .map(|(i, (_, d))| ImageDetections {
                image_id: format!("img{i:02}"),
                detections: d.iter().map(|r| detection(r, 0.5)).collect(),
            })
            .collect();
        let cfg = EvalConfig::default();
        let base = evaluate(&dets, &truth, &cfg).unwrap();
        let mut shuffled = dets.clone();
        shuffled.reverse();
        let k = rotate % shuffled.len();
        shuffled.rotate_left(k);
        let again = evaluate(&shuffled, &truth, &cfg).unwrap();
        prop_assert_eq!(base.true_positives, again.true_positives);
        prop_assert_eq!(base.false_positives, again.false_positives);
        prop_assert_eq!(base.per_image, again.per_image);
    }
}

#[test]
fn perfect_detections_score_one() {
    let rects = vec![
        AxisRect::new(2.0, 2.0, 12.0, 8.0).unwrap(),
        AxisRect::new(20.0, 10.0, 30.0, 20.0).unwrap(),
    ];
    let truth = dataset(std::slice::from_ref(&rects));
    let dets = vec![ImageDetections {
        image_id: "img00".into(),
        detections: rects.iter().map(|r| detection(r, 0.9)).collect(),
    }];
    let r = evaluate(&dets, &truth, &EvalConfig::default()).unwrap();
    assert_eq!((r.precision, r.recall, r.f_measure), (1.0, 1.0, 1.0));
}
