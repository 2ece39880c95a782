//! Synthetic "curved text" scenes: bright ribbons swept along circular arcs
//! over a smooth textured background, with exact polygon ground truth.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{pgm, write_manifest, Annotation, AnnotationRecord, Dataset, GrayImage};
use crate::error::{Error, Result};
use crate::geometry::{BitMask, Point, Polygon};

/// Parameters of a synthetic dataset. Ranges are inclusive `(min, max)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub n_images: u32,
    pub width: u32,
    pub height: u32,
    pub instances_per_image: (u32, u32),
    /// Absolute ribbon curvature in radians per pixel of arc length.
    pub curvature: (f64, f64),
    pub stroke_width: (u32, u32),
    /// Arc length of a ribbon's centerline in pixels.
    pub length: (f64, f64),
    /// Ribbon brightness above the local background, in grey levels.
    pub contrast: (f64, f64),
    /// Unannotated bright dots per image.
    pub distractors_per_image: (u32, u32),
    /// Fraction of pixels replaced by salt-and-pepper noise.
    pub noise_level: f64,
    /// Minimum vertices per polygon side; CTW1500-style lines use 7 (14 in
    /// total). Strongly bent ribbons get more so the polygon hugs the arc.
    pub points_per_side: u32,
    pub id_prefix: String,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            n_images: 100,
            width: 64,
            height: 64,
            instances_per_image: (1, 3),
            curvature: (0.0, 0.05),
            stroke_width: (3, 6),
            length: (24.0, 48.0),
            contrast: (40.0, 110.0),
            distractors_per_image: (0, 0),
            noise_level: 0.02,
            points_per_side: 7,
            id_prefix: "img".into(),
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("scene spec: {m}")));
        if self.n_images == 0 {
            return bad("n_images must be at least 1");
        }
        if self.width < 16 || self.height < 16 {
            return bad("images must be at least 16x16");
        }
        let ordered = |(lo, hi): (f64, f64)| lo <= hi;
        if self.instances_per_image.0 > self.instances_per_image.1
            || self.stroke_width.0 > self.stroke_width.1
            || self.distractors_per_image.0 > self.distractors_per_image.1
            || !ordered(self.curvature)
            || !ordered(self.length)
            || !ordered(self.contrast)
        {
            return bad("every range needs min <= max");
        }
        if self.stroke_width.0 == 0 || self.length.0 <= 0.0 || self.curvature.0 < 0.0 {
            return bad("stroke width and length must be positive, curvature non-negative");
        }
        if self.curvature.1 * self.stroke_width.1 as f64 >= 1.0 {
            return bad("curvature radius must exceed the stroke width");
        }
        if self.curvature.1 * self.length.1 >= PI {
            return bad("ribbons may bend by less than half a turn");
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return bad("noise_level must lie in [0, 1]");
        }
        if self.points_per_side < 2 {
            return bad("points_per_side must be at least 2");
        }
        Ok(())
    }
}

/// A ribbon of constant width swept along a circular arc (or a segment when
/// the curvature is zero).
#[derive(Debug, Clone, PartialEq)]
pub struct Ribbon {
    pub start: Point,
    /// Tangent direction at `start`, radians.
    pub heading: f64,
    /// Signed curvature; positive bends towards +y for heading 0.
    pub curvature: f64,
    pub length: f64,
    pub width: f64,
    pub polygon: Polygon,
}

const STRAIGHT: f64 = 1e-9;
const MAX_SAG: f64 = 0.02;

impl Ribbon {
    fn centerline(start: Point, heading: f64, curvature: f64, s: f64) -> (Point, f64) {
        let theta = heading + curvature * s;
        let p = if curvature.abs() < STRAIGHT {
            Point::new(start.x + s * heading.cos(), start.y + s * heading.sin())
        } else {
            Point::new(
                start.x + (theta.sin() - heading.sin()) / curvature,
                start.y + (heading.cos() - theta.cos()) / curvature,
            )
        };
        (p, theta)
    }

    pub fn new(
        start: Point,
        heading: f64,
        curvature: f64,
        length: f64,
        width: f64,
        points_per_side: u32,
    ) -> Result<Self> {
        let k = (points_per_side as usize).max(Self::points_for_sag(curvature, length, width));
        let mut upper = Vec::with_capacity(k);
        let mut lower = Vec::with_capacity(k);
        for i in 0..k {
            let s = length * i as f64 / (k - 1) as f64;
            let (c, theta) = Self::centerline(start, heading, curvature, s);
            let (nx, ny) = (-theta.sin(), theta.cos());
            let h = width / 2.0;
            upper.push(Point::new(c.x + h * nx, c.y + h * ny));
            lower.push(Point::new(c.x - h * nx, c.y - h * ny));
        }
        lower.reverse();
        upper.extend(lower);
        Ok(Ribbon {
            start,
            heading,
            curvature,
            length,
            width,
            polygon: Polygon::new(upper)?,
        })
    }

    /// Vertices per side that keep the chord sag of the outer edge below
    /// `MAX_SAG` pixels.
    fn points_for_sag(curvature: f64, length: f64, width: f64) -> usize {
        if curvature.abs() < STRAIGHT {
            return 2;
        }
        let outer = 1.0 / curvature.abs() + width / 2.0;
        let max_step = 2.0 * (1.0 - MAX_SAG / outer).acos();
        (curvature.abs() * length / max_step).ceil() as usize + 1
    }

    /// Exact membership of a point in the swept stroke.
    pub fn contains(&self, q: Point) -> bool {
        let h = self.width / 2.0;
        if self.curvature.abs() < STRAIGHT {
            let (dx, dy) = (self.heading.cos(), self.heading.sin());
            let (vx, vy) = (q.x - self.start.x, q.y - self.start.y);
            let along = vx * dx + vy * dy;
            let across = -vx * dy + vy * dx;
            return (0.0..=self.length).contains(&along) && across.abs() <= h;
        }
        let k = self.curvature;
        let radius = 1.0 / k.abs();
        let (n0x, n0y) = (-self.heading.sin(), self.heading.cos());
        let center = Point::new(self.start.x + n0x / k, self.start.y + n0y / k);
        let (vx, vy) = (q.x - center.x, q.y - center.y);
        if ((vx * vx + vy * vy).sqrt() - radius).abs() > h {
            return false;
        }
        // Polar angle of the start point as seen from the center; the
        // centerline sweeps away from it at rate `curvature`.
        let base = if k > 0.0 {
            self.heading - PI / 2.0
        } else {
            self.heading + PI / 2.0
        };
        let delta = (vy.atan2(vx) - base) * k.signum();
        let s = delta.rem_euclid(TAU) * radius;
        s <= self.length
    }

    /// Pixels whose centers lie in the stroke.
    pub fn stroke_mask(&self, width: u32, height: u32) -> Result<BitMask> {
        let mut m = BitMask::image(width, height)?;
        let r = self.polygon.bounding_rect();
        let pad = 2.0;
        let x0 = (r.x_min - pad).floor().max(0.0) as u32;
        let y0 = (r.y_min - pad).floor().max(0.0) as u32;
        let x1 = ((r.x_max + pad).ceil().max(0.0) as u32).min(width);
        let y1 = ((r.y_max + pad).ceil().max(0.0) as u32).min(height);
        for y in y0..y1 {
            for x in x0..x1 {
                if self.contains(Point::new(x as f64 + 0.5, y as f64 + 0.5)) {
                    m.set(x, y, true);
                }
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub image: GrayImage,
    pub ribbons: Vec<Ribbon>,
}

fn sample_range<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Smooth value-noise field in `[-1, 1]`, one random lattice value per
/// `cell` pixels with smoothstep interpolation.
fn value_noise<R: Rng>(rng: &mut R, width: u32, height: u32, cell: f64) -> Vec<f64> {
    let gw = (width as f64 / cell).ceil() as usize + 2;
    let gh = (height as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(width as usize * height as usize);
    for y in 0..height {
        let fy = y as f64 / cell;
        let (gy, ty) = (fy.floor() as usize, smooth(fy.fract()));
        for x in 0..width {
            let fx = x as f64 / cell;
            let (gx, tx) = (fx.floor() as usize, smooth(fx.fract()));
            let at = |i: usize, j: usize| lattice[j * gw + i];
            let top = at(gx, gy) * (1.0 - tx) + at(gx + 1, gy) * tx;
            let bottom = at(gx, gy + 1) * (1.0 - tx) + at(gx + 1, gy + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Marks every pixel within `gap` (Chebyshev) of a set pixel of `m`.
fn occupy(occupied: &mut [bool], m: &BitMask, gap: i64) {
    let (w, h) = (m.width() as i64, m.height() as i64);
    for (x, y) in m.iter_set() {
        for dy in -gap..=gap {
            for dx in -gap..=gap {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx >= 0 && ny >= 0 && nx < w && ny < h {
                    occupied[(ny * w + nx) as usize] = true;
                }
            }
        }
    }
}

fn collides(occupied: &[bool], m: &BitMask) -> bool {
    m.iter_set()
        .any(|(x, y)| occupied[y as usize * m.width() as usize + x as usize])
}

const PLACEMENT_ATTEMPTS: usize = 200;
const MIN_GAP: i64 = 3;

/// Renders scene `index` of `spec`. Scenes are independent of each other,
/// so any subset can be regenerated.
pub fn generate_scene(spec: &SceneSpec, index: u32) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let (w, h) = (spec.width, spec.height);

    let base = rng.gen_range(50.0..=110.0);
    let amp = rng.gen_range(8.0..=30.0);
    let texture = value_noise(&mut rng, w, h, 16.0);
    let mut levels: Vec<f64> = texture.iter().map(|t| base + amp * t).collect();

    let mut occupied = vec![false; (w * h) as usize];
    let mut ribbons = Vec::new();
    let wanted = rng.gen_range(spec.instances_per_image.0..=spec.instances_per_image.1);
    for _ in 0..PLACEMENT_ATTEMPTS {
        if ribbons.len() as u32 >= wanted {
            break;
        }
        let width = rng.gen_range(spec.stroke_width.0..=spec.stroke_width.1) as f64;
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let curvature = sign * sample_range(&mut rng, spec.curvature);
        let length = sample_range(&mut rng, spec.length);
        let heading = rng.gen_range(-0.6..=0.6) + if rng.gen_bool(0.5) { PI } else { 0.0 };
        let start = Point::new(rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
        let contrast = sample_range(&mut rng, spec.contrast);
        let Ok(ribbon) = Ribbon::new(
            start,
            heading,
            curvature,
            length,
            width,
            spec.points_per_side,
        ) else {
            continue;
        };
        let bounds = ribbon.polygon.bounding_rect();
        let margin = 1.0;
        if bounds.x_min < margin
            || bounds.y_min < margin
            || bounds.x_max > w as f64 - margin
            || bounds.y_max > h as f64 - margin
        {
            continue;
        }
        let stroke = ribbon.stroke_mask(w, h)?;
        if stroke.is_empty() || collides(&occupied, &stroke) {
            continue;
        }
        occupy(&mut occupied, &stroke, MIN_GAP);
        for (x, y) in stroke.iter_set() {
            let i = (y * w + x) as usize;
            levels[i] += contrast;
        }
        ribbons.push(ribbon);
    }

    let n_dots = rng.gen_range(spec.distractors_per_image.0..=spec.distractors_per_image.1);
    let mut placed = 0;
    for _ in 0..PLACEMENT_ATTEMPTS {
        if placed >= n_dots {
            break;
        }
        let r = rng.gen_range(1.0..=2.5);
        let cx = rng.gen_range(r + 1.0..w as f64 - r - 1.0);
        let cy = rng.gen_range(r + 1.0..h as f64 - r - 1.0);
        let contrast = sample_range(&mut rng, spec.contrast);
        let mut dot = BitMask::image(w, h)?;
        for y in (cy - r).floor() as u32..=(cy + r).ceil() as u32 {
            for x in (cx - r).floor() as u32..=(cx + r).ceil() as u32 {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if x < w && y < h && dx * dx + dy * dy <= r * r {
                    dot.set(x, y, true);
                }
            }
        }
        if dot.is_empty() || collides(&occupied, &dot) {
            continue;
        }
        occupy(&mut occupied, &dot, MIN_GAP);
        for (x, y) in dot.iter_set() {
            levels[(y * w + x) as usize] += contrast;
        }
        placed += 1;
    }

    let grain = Normal::new(0.0, 4.0).expect("valid sigma");
    let mut pixels = Vec::with_capacity(levels.len());
    for v in levels {
        let mut v = v + grain.sample(&mut rng);
        if spec.noise_level > 0.0 && rng.gen_bool(spec.noise_level) {
            v = if rng.gen_bool(0.5) { 0.0 } else { 255.0 };
        }
        pixels.push(v.round().clamp(0.0, 255.0) as u8);
    }
    Ok(SyntheticScene {
        image: GrayImage::from_pixels(w, h, pixels)?,
        ribbons,
    })
}

/// Writes `spec.n_images` scenes to `out_dir/images/` and a strong-tier
/// manifest to `out_dir/manifest.jsonl`.
pub fn generate_synthetic(spec: &SceneSpec, out_dir: &Path) -> Result<Dataset> {
    spec.validate()?;
    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let images_dir = std::path::absolute(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let scenes: Vec<SyntheticScene> = (0..spec.n_images)
        .into_par_iter()
        .map(|i| generate_scene(spec, i))
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(scenes.len());
    for (i, scene) in scenes.into_iter().enumerate() {
        let id = format!("{}_{i:05}", spec.id_prefix);
        let path = images_dir.join(format!("{id}.pgm"));
        pgm::write_pgm(&path, &scene.image)?;
        let polys = scene.ribbons.into_iter().map(|r| r.polygon).collect();
        records.push(AnnotationRecord::new(id, path, Annotation::Strong(polys)));
    }
    write_manifest(&records, &out_dir.join("manifest.jsonl"))?;
    Dataset::new(records, spec.width, spec.height)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{mask_iou, rasterize};

    #[test]
    fn spec_validation() {
        assert!(SceneSpec::default().validate().is_ok());
        let zero = SceneSpec {
            n_images: 0,
            ..SceneSpec::default()
        };
        assert!(zero.validate().is_err());
        let inverted = SceneSpec {
            stroke_width: (5, 3),
            ..SceneSpec::default()
        };
        assert!(inverted.validate().is_err());
        let too_bent = SceneSpec {
            curvature: (0.0, 0.3),
            ..SceneSpec::default()
        };
        assert!(too_bent.validate().is_err());
    }

    #[test]
    fn straight_ribbon_membership() {
        let r = Ribbon::new(Point::new(10., 10.), 0.0, 0.0, 20.0, 4.0, 7).unwrap();
        assert!(r.contains(Point::new(15., 11.5)));
        assert!(!r.contains(Point::new(15., 12.5)));
        assert!(!r.contains(Point::new(31., 10.)));
        assert_eq!(r.polygon.vertices().len(), 14);
    }

    #[test]
    fn arc_membership_follows_the_bend() {
        for k in [0.04, -0.04] {
            let r = Ribbon::new(Point::new(10., 30.), 0.0, k, 30.0, 4.0, 7).unwrap();
            let (mid, _) = Ribbon::centerline(r.start, r.heading, r.curvature, 15.0);
            assert!(r.contains(mid));
            let (end, _) = Ribbon::centerline(r.start, r.heading, r.curvature, 31.0);
            assert!(!r.contains(end));
            let (before, _) = Ribbon::centerline(r.start, r.heading, r.curvature, -1.0);
            assert!(!r.contains(before));
        }
    }

    #[test]
    fn polygons_match_strokes() {
        let spec = SceneSpec {
            n_images: 30,
            curvature: (0.02, 0.06),
            stroke_width: (2, 7),
            seed: 3,
            ..SceneSpec::default()
        };
        for i in 0..spec.n_images {
            let scene = generate_scene(&spec, i).unwrap();
            for r in &scene.ribbons {
                let stroke = r.stroke_mask(spec.width, spec.height).unwrap();
                let poly = rasterize(&r.polygon, spec.width, spec.height).unwrap();
                let iou = mask_iou(&stroke, &poly).unwrap();
                assert!(iou >= 0.9, "scene {i}: iou {iou} for {r:?}");
            }
        }
    }

    #[test]
    fn scenes_are_deterministic() {
        let spec = SceneSpec {
            seed: 99,
            ..SceneSpec::default()
        };
        let a = generate_scene(&spec, 4).unwrap();
        let b = generate_scene(&spec, 4).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.ribbons, b.ribbons);
        let c = generate_scene(&spec, 5).unwrap();
        assert_ne!(a.image, c.image);
    }
}
