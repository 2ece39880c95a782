//! Annotation tiers, the line-delimited manifest format, dataset splitting
//! and the synthetic scene generator.
//!
//! # Manifest format
//!
//! A manifest is UTF-8 text with one JSON object per line. Blank lines are
//! ignored. Fields:
//!
//! | field         | type                         | present when            |
//! |---------------|------------------------------|-------------------------|
//! | `image_id`    | string, unique per manifest  | always                  |
//! | `image_path`  | string, relative to manifest | always                  |
//! | `tier`        | `"STRONG"`/`"WEAK"`/`"NONE"` | always                  |
//! | `polygons`    | `[[x0,y0,x1,y1,...], ...]`   | `STRONG` only           |
//! | `rects`       | `[[x_min,y_min,x_max,y_max], ...]` | `WEAK` only       |
//! | `provenance`  | `"NAIVE"`/`"FILTER"`/`"LOCAL"` | pseudo labels only    |
//! | `round`       | integer                      | pseudo labels only      |
//! | `instances`   | `[{"box":[..4], "polygon_count":n, "score":s?}]` | optional, `STRONG` only |
//!
//! `instances` groups the flat `polygons` list: instance `k` owns the next
//! `polygon_count` polygons. Pseudo labels and detector outputs use it so that
//! an instance can carry a box, a score, and zero or more polygons.

mod pgm;
pub mod synth;

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use pgm::{read_pgm, read_pgm_dims, write_pgm, GrayImage};
pub use synth::{generate_scene, generate_synthetic, Ribbon, SceneSpec, SyntheticScene};

use crate::error::{Error, Result};
use crate::geometry::{AxisRect, Polygon};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AnnotationTier {
    Strong,
    Weak,
    None,
}

impl std::fmt::Display for AnnotationTier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AnnotationTier::Strong => "STRONG",
            AnnotationTier::Weak => "WEAK",
            AnnotationTier::None => "NONE",
        })
    }
}

/// Which pseudo-labelling strategy produced an annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Provenance {
    Naive,
    Filter,
    Local,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Annotation {
    Strong(Vec<Polygon>),
    Weak(Vec<AxisRect>),
    None,
}

impl Annotation {
    pub fn tier(&self) -> AnnotationTier {
        match self {
            Annotation::Strong(_) => AnnotationTier::Strong,
            Annotation::Weak(_) => AnnotationTier::Weak,
            Annotation::None => AnnotationTier::None,
        }
    }
}

/// Per-instance grouping of a strong record's polygons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceMeta {
    #[serde(rename = "box", with = "rect_array")]
    pub bbox: AxisRect,
    pub polygon_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoTag {
    pub provenance: Provenance,
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub image_id: String,
    /// Absolute once loaded or generated.
    pub image_path: PathBuf,
    pub annotation: Annotation,
    pub pseudo: Option<PseudoTag>,
    pub instances: Option<Vec<InstanceMeta>>,
}

impl AnnotationRecord {
    pub fn new(
        image_id: impl Into<String>,
        image_path: impl Into<PathBuf>,
        annotation: Annotation,
    ) -> Self {
        AnnotationRecord {
            image_id: image_id.into(),
            image_path: image_path.into(),
            annotation,
            pseudo: None,
            instances: None,
        }
    }

    pub fn tier(&self) -> AnnotationTier {
        self.annotation.tier()
    }

    pub fn polygons(&self) -> Option<&[Polygon]> {
        match &self.annotation {
            Annotation::Strong(p) => Some(p),
            _ => None,
        }
    }

    pub fn rects(&self) -> Option<&[AxisRect]> {
        match &self.annotation {
            Annotation::Weak(r) => Some(r),
            _ => None,
        }
    }

    /// Polygons grouped per instance: the `instances` grouping when present,
    /// otherwise one polygon per instance.
    pub fn instance_polygons(&self) -> Vec<&[Polygon]> {
        let Some(polys) = self.polygons() else {
            return Vec::new();
        };
        match &self.instances {
            Some(instances) => {
                let mut out = Vec::with_capacity(instances.len());
                let mut at = 0;
                for inst in instances {
                    out.push(&polys[at..at + inst.polygon_count]);
                    at += inst.polygon_count;
                }
                out
            }
            None => polys.chunks(1).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub records: Vec<AnnotationRecord>,
    /// Zero for an empty dataset.
    pub image_width: u32,
    pub image_height: u32,
}

impl Dataset {
    pub fn new(
        records: Vec<AnnotationRecord>,
        image_width: u32,
        image_height: u32,
    ) -> Result<Self> {
        let d = Dataset {
            records,
            image_width,
            image_height,
        };
        d.check_unique_ids()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.image_id.as_str())
    }

    /// Tier shared by every record, or `None` when empty or mixed.
    pub fn uniform_tier(&self) -> Option<AnnotationTier> {
        let first = self.records.first()?.tier();
        self.records
            .iter()
            .all(|r| r.tier() == first)
            .then_some(first)
    }

    pub fn instance_count(&self) -> usize {
        self.records
            .iter()
            .map(|r| match &r.annotation {
                Annotation::Strong(_) => r.instance_polygons().len(),
                Annotation::Weak(rects) => rects.len(),
                Annotation::None => 0,
            })
            .sum()
    }

    fn check_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.image_id.as_str()) {
                return Err(Error::TierViolation {
                    image_id: r.image_id.clone(),
                    message: "duplicate image_id".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    image_id: String,
    image_path: String,
    tier: AnnotationTier,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    polygons: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rects: Option<Vec<[f64; 4]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    round: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    instances: Option<Vec<InstanceMeta>>,
}

mod rect_array {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::geometry::AxisRect;

    pub fn serialize<S: Serializer>(r: &AxisRect, s: S) -> Result<S::Ok, S::Error> {
        [r.x_min, r.y_min, r.x_max, r.y_max].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<AxisRect, D::Error> {
        let [a, b, c, e] = <[f64; 4]>::deserialize(d)?;
        AxisRect::new(a, b, c, e).map_err(serde::de::Error::custom)
    }
}

fn violation(image_id: &str, message: impl Into<String>) -> Error {
    Error::TierViolation {
        image_id: image_id.to_string(),
        message: message.into(),
    }
}

/// Validates a parsed line. Geometry errors surface as parse errors with
/// the offending line number; tier errors as `TierViolation`.
fn record_from_line(
    line: RecordLine,
    base_dir: &Path,
    path: &Path,
    line_no: usize,
) -> Result<AnnotationRecord> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line_no,
        message,
    };
    let id = line.image_id.as_str();
    if id.is_empty() {
        return Err(parse_err("empty image_id".into()));
    }
    let annotation = match line.tier {
        AnnotationTier::Strong => {
            if line.rects.is_some() {
                return Err(violation(id, "STRONG record carries rects"));
            }
            let polys = line
                .polygons
                .ok_or_else(|| violation(id, "STRONG record without polygons"))?;
            let polys = polys
                .iter()
                .map(|c| Polygon::from_flat(c))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| parse_err(e.to_string()))?;
            Annotation::Strong(polys)
        }
        AnnotationTier::Weak => {
            if line.polygons.is_some() {
                return Err(violation(id, "WEAK record carries polygons"));
            }
            let rects = line
                .rects
                .ok_or_else(|| violation(id, "WEAK record without rects"))?;
            let rects = rects
                .iter()
                .map(|r| AxisRect::new(r[0], r[1], r[2], r[3]))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| parse_err(e.to_string()))?;
            Annotation::Weak(rects)
        }
        AnnotationTier::None => {
            if line.polygons.is_some() || line.rects.is_some() {
                return Err(violation(id, "NONE record carries geometry"));
            }
            Annotation::None
        }
    };
    let pseudo = match (line.provenance, line.round) {
        (Some(provenance), Some(round)) => Some(PseudoTag { provenance, round }),
        (None, None) => None,
        _ => {
            return Err(parse_err(
                "provenance and round must appear together".into(),
            ))
        }
    };
    if let Some(instances) = &line.instances {
        let Annotation::Strong(polys) = &annotation else {
            return Err(violation(
                id,
                "instances are only allowed on STRONG records",
            ));
        };
        let total: usize = instances.iter().map(|i| i.polygon_count).sum();
        if total != polys.len() {
            return Err(violation(
                id,
                format!(
                    "instances own {total} polygons but record has {}",
                    polys.len()
                ),
            ));
        }
    }
    let image_path = std::path::absolute(base_dir.join(&line.image_path))
        .map_err(|e| Error::io(&line.image_path, e))?;
    Ok(AnnotationRecord {
        image_id: line.image_id,
        image_path,
        annotation,
        pseudo,
        instances: line.instances,
    })
}

fn manifest_dir(manifest_path: &Path) -> Result<PathBuf> {
    let parent = manifest_path.parent().unwrap_or(Path::new(""));
    std::path::absolute(if parent.as_os_str().is_empty() {
        Path::new(".")
    } else {
        parent
    })
    .map_err(|e| Error::io(manifest_path, e))
}

/// Parses manifest text. Image files are not touched.
pub fn parse_manifest(text: &str, manifest_path: &Path) -> Result<Vec<AnnotationRecord>> {
    let base = manifest_dir(manifest_path)?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine = serde_json::from_str(raw).map_err(|e| Error::Parse {
            path: manifest_path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        let rec = record_from_line(parsed, &base, manifest_path, line_no)?;
        if !seen.insert(rec.image_id.clone()) {
            return Err(Error::Parse {
                path: manifest_path.to_path_buf(),
                line: line_no,
                message: format!("duplicate image_id {}", rec.image_id),
            });
        }
        records.push(rec);
    }
    Ok(records)
}

/// Loads and validates a manifest, checking that every image exists and
/// that all images share one size.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let records = parse_manifest(&text, manifest_path)?;
    let mut dims: Option<(u32, u32)> = None;
    for r in &records {
        if !r.image_path.is_file() {
            return Err(Error::MissingImage(r.image_path.clone()));
        }
        let d = read_pgm_dims(&r.image_path)?;
        match dims {
            None => dims = Some(d),
            Some(prev) if prev != d => {
                return Err(Error::DimensionMismatch(format!(
                    "{} is {}x{}, dataset images are {}x{}",
                    r.image_path.display(),
                    d.0,
                    d.1,
                    prev.0,
                    prev.1
                )))
            }
            Some(_) => {}
        }
    }
    let (w, h) = dims.unwrap_or((0, 0));
    Dataset::new(records, w, h)
}

fn path_for_manifest(image_path: &Path, base: &Path) -> String {
    match image_path.strip_prefix(base) {
        Ok(rel) => rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/"),
        Err(_) => image_path.to_string_lossy().into_owned(),
    }
}

/// Manifest text for `records` as it would be written to `manifest_path`.
/// Image paths under the manifest's directory are written relative to it.
pub fn render_manifest(records: &[AnnotationRecord], manifest_path: &Path) -> Result<String> {
    let base = manifest_dir(manifest_path)?;
    let mut out = String::new();
    for r in records {
        let (polygons, rects) = match &r.annotation {
            Annotation::Strong(p) => (Some(p.iter().map(Polygon::to_flat).collect()), None),
            Annotation::Weak(rs) => (
                None,
                Some(
                    rs.iter()
                        .map(|r| [r.x_min, r.y_min, r.x_max, r.y_max])
                        .collect(),
                ),
            ),
            Annotation::None => (None, None),
        };
        let line = RecordLine {
            image_id: r.image_id.clone(),
            image_path: path_for_manifest(&r.image_path, &base),
            tier: r.tier(),
            polygons,
            rects,
            provenance: r.pseudo.as_ref().map(|p| p.provenance),
            round: r.pseudo.as_ref().map(|p| p.round),
            instances: r.instances.clone(),
        };
        out.push_str(&serde_json::to_string(&line).expect("manifest lines serialize"));
        out.push('\n');
    }
    Ok(out)
}

pub fn save_dataset(d: &Dataset, manifest_path: &Path) -> Result<()> {
    write_manifest(&d.records, manifest_path)
}

pub fn write_manifest(records: &[AnnotationRecord], manifest_path: &Path) -> Result<()> {
    let text = render_manifest(records, manifest_path)?;
    let mut f = fs::File::create(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(manifest_path, e))
}

/// Tier the non-strong part of a split is reduced to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Downgrade {
    Weak,
    None,
}

/// Replaces each instance by the tight axis-aligned bounding rectangle of
/// its polygons.
pub fn downgrade_to_weak(r: &AnnotationRecord) -> Result<AnnotationRecord> {
    if r.tier() != AnnotationTier::Strong {
        return Err(Error::WrongTier {
            expected: AnnotationTier::Strong.to_string(),
            found: r.tier().to_string(),
        });
    }
    let rects = r
        .instance_polygons()
        .into_iter()
        .filter_map(|polys| {
            polys
                .iter()
                .map(Polygon::bounding_rect)
                .reduce(|a, b| a.union(&b))
        })
        .collect();
    Ok(AnnotationRecord::new(
        r.image_id.clone(),
        r.image_path.clone(),
        Annotation::Weak(rects),
    ))
}

fn downgrade(r: &AnnotationRecord, to: Downgrade) -> Result<AnnotationRecord> {
    match (to, r.tier()) {
        (Downgrade::None, _) => Ok(AnnotationRecord::new(
            r.image_id.clone(),
            r.image_path.clone(),
            Annotation::None,
        )),
        (Downgrade::Weak, AnnotationTier::Weak) => Ok(r.clone()),
        (Downgrade::Weak, _) => downgrade_to_weak(r),
    }
}

/// Random split into a strong part of `round(strong_fraction × |d|)` records
/// and a downgraded rest. Both parts keep the input's record order.
pub fn split_dataset(
    d: &Dataset,
    strong_fraction: f64,
    seed: u64,
    rest_tier: Downgrade,
) -> Result<(Dataset, Dataset)> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(strong_fraction > 0.0 && strong_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "strong fraction must lie in (0, 1), got {strong_fraction}"
        )));
    }
    let n_strong = (strong_fraction * d.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_strong = vec![false; d.len()];
    for &i in &order[..n_strong] {
        is_strong[i] = true;
    }
    let mut strong = Vec::with_capacity(n_strong);
    let mut rest = Vec::with_capacity(d.len() - n_strong);
    for (r, s) in d.records.iter().zip(is_strong) {
        if s {
            strong.push(r.clone());
        } else {
            rest.push(downgrade(r, rest_tier)?);
        }
    }
    let part = |records| Dataset {
        records,
        image_width: d.image_width,
        image_height: d.image_height,
    };
    Ok((part(strong), part(rest)))
}
