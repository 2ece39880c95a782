use proptest::prelude::*;
use textboot::data::{GrayImage, Provenance};
use textboot::detector::{Detector, DetectorModel};
use textboot::error::Result;
use textboot::geometry::{rect_iou, AxisRect, BitMask, Detection};
use textboot::strategies::{filter_select, local_generate, naive_select, StrategyConfig};

const W: u32 = 40;
const H: u32 = 30;

fn rect() -> impl Strategy<Value = AxisRect> {
    (0u32..W - 1, 0u32..H - 1, 1u32..14, 1u32..14).prop_map(|(x, y, w, h)| {
        AxisRect::new(
            x as f64,
            y as f64,
            (x + w).min(W) as f64,
            (y + h).min(H) as f64,
        )
        .unwrap()
    })
}

/// A filled box with a random score; scores sit on a coarse grid so that
/// threshold ties actually occur.
fn detection() -> impl Strategy<Value = Detection> {
    (rect(), 0u32..=20).prop_map(|(b, s)| {
        let mut m = BitMask::image(W, H).unwrap();
        let (x0, y0, x1, y1) = b.pixel_window(W, H);
        for y in y0..y1 {
            for x in x0..x1 {
                m.set(x, y, true);
            }
        }
        Detection::new(b, m, s as f64 / 20.0).unwrap()
    })
}

fn grid() -> impl Strategy<Value = f64> {
    (0u32..=20).prop_map(|v| v as f64 / 20.0)
}

fn cfg(s: f64, s_prime: f64, t: f64) -> StrategyConfig {
    StrategyConfig {
        score_s: s,
        score_s_prime: s_prime,
        iou_t: t,
        ..StrategyConfig::default()
    }
}

fn key(p: &textboot::strategies::PseudoAnnotation) -> (AxisRect, BitMask) {
    (p.bbox, p.mask.clone())
}

/// Every candidate against every weak box, no short-circuiting.
fn brute_filter(c: &[Detection], g: &[AxisRect], s_prime: f64, t: f64) -> Vec<usize> {
    let mut keep = Vec::new();
    for (i, d) in c.iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for b in g {
            best = best.max(rect_iou(d.bbox(), b));
        }
        if d.score() > s_prime && best > t {
            keep.push(i);
        }
    }
    keep
}

/// Marks every pixel of the box whose left column is even.
struct Stripes;

impl Detector for Stripes {
    fn detect(&self, _: &GrayImage) -> Vec<Detection> {
        Vec::new()
    }

    fn mask_for_box(&self, image: &GrayImage, bx: &AxisRect) -> Result<BitMask> {
        let mut m = BitMask::image(image.width(), image.height())?;
        let (x0, y0, x1, y1) = bx.pixel_window(image.width(), image.height());
        for y in y0..y1 {
            for x in (x0..x1).filter(|x| x % 2 == 0) {
                m.set(x, y, true);
            }
        }
        Ok(m)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn filter_equals_double_loop(
        c in prop::collection::vec(detection(), 0..12),
        g in prop::collection::vec(rect(), 0..8),
        s_prime in grid(),
        t in grid(),
    ) {
        let got = filter_select(&c, &g, &cfg(0.5, s_prime, t));
        let want: Vec<_> = brute_filter(&c, &g, s_prime, t)
            .into_iter()
            .map(|i| (*c[i].bbox(), c[i].mask().clone()))
            .collect();
        prop_assert_eq!(got.iter().map(key).collect::<Vec<_>>(), want);
        prop_assert!(got.iter().all(|p| p.provenance == Provenance::Filter));
        if g.is_empty() {
            prop_assert!(got.is_empty());
        }
    }

    #[test]
    fn naive_is_a_monotone_subset(
        c in prop::collection::vec(detection(), 0..12),
        s1 in grid(),
        s2 in grid(),
    ) {
        let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        let loose: Vec<_> = naive_select(&c, &cfg(lo, 0.4, 0.3)).iter().map(key).collect();
        let strict: Vec<_> = naive_select(&c, &cfg(hi, 0.4, 0.3)).iter().map(key).collect();
        let all: Vec<_> = c.iter().map(|d| (*d.bbox(), d.mask().clone())).collect();
        prop_assert!(loose.iter().all(|k| all.contains(k)));
        prop_assert!(strict.iter().all(|k| loose.contains(k)));
        let expected = c.iter().filter(|d| d.score() > lo).count();
        prop_assert_eq!(loose.len(), expected);
    }

    #[test]
    fn filter_never_adds_to_naive_at_equal_thresholds(
        c in prop::collection::vec(detection(), 0..12),
        g in prop::collection::vec(rect(), 0..8),
        s in grid(),
        t in grid(),
    ) {
        let config = cfg(s, s, t);
        let naive: Vec<_> = naive_select(&c, &config).iter().map(key).collect();
        let filtered: Vec<_> = filter_select(&c, &g, &config).iter().map(key).collect();
        prop_assert!(filtered.iter().all(|k| naive.contains(k)));
    }

    #[test]
    fn local_keeps_every_box_bit_for_bit(
        g in prop::collection::vec((-5.0f64..35.0, -5.0f64..25.0, 0.5f64..12.0, 0.5f64..12.0), 0..10),
    ) {
        let boxes: Vec<AxisRect> = g
            .iter()
            .map(|&(x, y, w, h)| AxisRect::new(x, y, x + w, y + h).unwrap())
            .collect();
        let image = GrayImage::new(W, H);
        let out = local_generate(&Stripes, &image, &boxes).unwrap();
        prop_assert_eq!(out.len(), boxes.len());
        for (p, b) in out.iter().zip(&boxes) {
            prop_assert_eq!(p.bbox.x_min.to_bits(), b.x_min.to_bits());
            prop_assert_eq!(p.bbox.y_min.to_bits(), b.y_min.to_bits());
            prop_assert_eq!(p.bbox.x_max.to_bits(), b.x_max.to_bits());
            prop_assert_eq!(p.bbox.y_max.to_bits(), b.y_max.to_bits());
            prop_assert_eq!(p.provenance, Provenance::Local);
            prop_assert!(p.mask.is_within(b));
        }
        prop_assert_eq!(local_generate(&Stripes, &image, &boxes).unwrap(), out);
    }
}

#[test]
fn degenerate_local_box_is_an_error() {
    let model = DetectorModel::new(2, 0.5, 8);
    let flat = AxisRect::new(3.0, 3.0, 3.0, 9.0).unwrap();
    let err = local_generate(&model, &GrayImage::new(W, H), &[flat]).unwrap_err();
    assert!(matches!(err, textboot::Error::DegenerateBox { .. }));
}
