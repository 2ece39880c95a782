use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use textboot::orchestrator::{PipelineConfig, RunResult};

/// Everything needed to reproduce a run and check that it was reproduced.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: PipelineConfig,
    pub seeds: Seeds,
    pub inputs: Vec<InputFile>,
    pub rounds: Vec<RoundArtifacts>,
    pub best_round: u32,
    pub complete: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Seeds {
    pub pipeline: u64,
    /// Training seed of each round, baseline first.
    pub training: Vec<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InputFile {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RoundArtifacts {
    pub round: u32,
    pub model: PathBuf,
    pub model_sha256: String,
    pub metrics: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pseudo_manifest: Option<PathBuf>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn build(
        cfg: &PipelineConfig,
        inputs: &[(&str, &Path)],
        result: &RunResult,
        run_dir: &Path,
    ) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|(role, path)| {
                Ok(InputFile {
                    role: role.to_string(),
                    path: fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf()),
                    sha256: sha256_file(path)?,
                })
            })
            .collect::<Result<_>>()?;
        let rounds = result
            .reports
            .iter()
            .map(|r| {
                let dir = PathBuf::from(format!("round_{}", r.round));
                let pseudo = dir.join("pseudo_manifest.jsonl");
                Ok(RoundArtifacts {
                    round: r.round,
                    model_sha256: sha256_file(&run_dir.join(&r.model_path))?,
                    model: r.model_path.clone(),
                    metrics: dir.join("metrics.json"),
                    pseudo_manifest: run_dir.join(&pseudo).is_file().then_some(pseudo),
                })
            })
            .collect::<Result<_>>()?;
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.clone(),
            seeds: Seeds {
                pipeline: cfg.seed,
                training: result
                    .reports
                    .iter()
                    .map(|r| cfg.seed.wrapping_add(r.round as u64))
                    .collect(),
            },
            inputs,
            rounds,
            best_round: result.best_round,
            complete: result.complete,
        })
    }

    pub fn write(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join("run_manifest.json");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
