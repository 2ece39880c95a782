//! Model file layout, all integers and floats little-endian:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "TXBTMODL"
//! 8       4     version (u32) = 1
//! 12      4     patch radius (u32)
//! 16      4     context radius (u32)
//! 20      4     feature count (u32)
//! 24      8     proposal score threshold (f64)
//! 32      4     minimum component pixels (u32)
//! 36      4     rounds seen (u32)
//! 40      4     epochs (u32)
//! 44      8     seed (u64)
//! 52      4     parameter count n (u32) = feature count + 1
//! 56      8n    parameters (f64), feature weights then bias
//! ```

use std::fs;
use std::path::Path;

use super::{DetectorModel, FeatureLayout, TrainingMeta};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"TXBTMODL";
pub const MODEL_VERSION: u32 = 1;
const HEADER_LEN: usize = 56;

pub fn encode_model(m: &DetectorModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.params.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&m.layout.patch_radius.to_le_bytes());
    out.extend_from_slice(&m.layout.context_radius.to_le_bytes());
    out.extend_from_slice(&(m.layout.len() as u32).to_le_bytes());
    out.extend_from_slice(&m.score_threshold.to_le_bytes());
    out.extend_from_slice(&m.min_component_pixels.to_le_bytes());
    out.extend_from_slice(&m.meta.rounds_seen.to_le_bytes());
    out.extend_from_slice(&m.meta.epochs.to_le_bytes());
    out.extend_from_slice(&m.meta.seed.to_le_bytes());
    out.extend_from_slice(&(m.params.len() as u32).to_le_bytes());
    for p in &m.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let chunk = self.bytes.get(self.pos..self.pos + N)?;
        self.pos += N;
        chunk.try_into().ok()
    }

    fn u32(&mut self) -> Option<u32> {
        self.take().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Option<u64> {
        self.take().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Option<f64> {
        self.take().map(f64::from_le_bytes)
    }
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<DetectorModel> {
    let fail = |message: &str| Error::VersionMismatch {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let mut r = Reader { bytes, pos: 0 };
    if r.take::<8>().as_ref() != Some(MODEL_MAGIC) {
        return Err(fail("not a model file"));
    }
    let version = r.u32().ok_or_else(|| fail("truncated header"))?;
    if version != MODEL_VERSION {
        return Err(fail(&format!(
            "file version {version}, this build reads {MODEL_VERSION}"
        )));
    }
    let header = (|| {
        Some((
            r.u32()?,
            r.u32()?,
            r.u32()?,
            r.f64()?,
            r.u32()?,
            r.u32()?,
            r.u32()?,
            r.u64()?,
            r.u32()?,
        ))
    })();
    let (patch, context, n_feat, threshold, min_px, rounds, epochs, seed, n_params) =
        header.ok_or_else(|| fail("truncated header"))?;
    let layout = FeatureLayout::new(patch);
    if layout.context_radius != context || layout.len() != n_feat as usize {
        return Err(fail("feature layout does not match this build"));
    }
    if n_params as usize != layout.len() + 1 {
        return Err(fail("parameter count does not match feature count"));
    }
    if bytes.len() != HEADER_LEN + 8 * n_params as usize {
        return Err(fail(&format!(
            "expected {} bytes, found {}",
            HEADER_LEN + 8 * n_params as usize,
            bytes.len()
        )));
    }
    let params = (0..n_params)
        .map(|_| r.f64())
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| fail("truncated parameters"))?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(fail("proposal threshold outside (0, 1)"));
    }
    DetectorModel::from_parts(
        layout,
        params,
        threshold,
        min_px,
        TrainingMeta {
            rounds_seen: rounds,
            epochs,
            seed,
        },
    )
    .map_err(|e| fail(&e.to_string()))
}

pub fn save_model(m: &DetectorModel, path: &Path) -> Result<()> {
    fs::write(path, encode_model(m)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<DetectorModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}
