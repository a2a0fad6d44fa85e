use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::io_util::{atomic_write, sha256_file, sha256_hex};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    GenData,
    BuildBase,
    TrainRetrieval,
    TrainDiffusion,
    Synthesize,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::GenData,
        Stage::BuildBase,
        Stage::TrainRetrieval,
        Stage::TrainDiffusion,
        Stage::Synthesize,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::BuildBase => "build-base",
            Stage::TrainRetrieval => "train-retrieval",
            Stage::TrainDiffusion => "train-diffusion",
            Stage::Synthesize => "synthesize",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    /// The stage each one consumes directly; the chain is linear.
    pub fn upstream(self) -> Option<Stage> {
        let i = Self::ALL.iter().position(|&s| s == self).expect("listed");
        i.checked_sub(1).map(|j| Self::ALL[j])
    }

    /// Config fields this stage reads.
    fn inputs(self, cfg: &RunConfig) -> serde_json::Value {
        match self {
            Stage::GenData => json!({ "corpus": cfg.corpus }),
            Stage::BuildBase => json!({ "split": cfg.split, "segments": cfg.segments }),
            Stage::TrainRetrieval => json!({ "seed": cfg.seed, "retrieval": cfg.retrieval }),
            Stage::TrainDiffusion => json!({ "seed": cfg.seed, "diffusion": cfg.diffusion }),
            Stage::Synthesize => json!({ "seed": cfg.seed, "synthesis": cfg.synthesis }),
            Stage::Evaluate => json!({ "metrics": cfg.metrics }),
            Stage::Report => json!({}),
        }
    }
}

/// Hash of a stage's config inputs chained with its upstream hash.
pub fn stage_hash(cfg: &RunConfig, stage: Stage) -> Result<String> {
    let up = stage.upstream().map(|s| stage_hash(cfg, s)).transpose()?;
    let doc = json!({ "stage": stage.name(), "inputs": stage.inputs(cfg), "upstream": up });
    Ok(sha256_hex(serde_json::to_string(&doc)?.as_bytes()))
}

/// `<out>/<stage>/<first 16 hex of the stage hash>`.
pub fn stage_dir(cfg: &RunConfig, stage: Stage) -> Result<PathBuf> {
    Ok(cfg.out_dir.join(stage.name()).join(&stage_hash(cfg, stage)?[..16]))
}

/// Directory of a completed stage, or a missing-artifact error naming it.
pub fn require(cfg: &RunConfig, stage: Stage) -> Result<PathBuf> {
    let dir = stage_dir(cfg, stage)?;
    let manifest = dir.join(MANIFEST);
    if !manifest.is_file() {
        return Err(Error::MissingArtifact { stage: stage.name().into(), path: manifest });
    }
    Ok(dir)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub stage_hash: String,
    pub config_hash: String,
    pub upstream: BTreeMap<String, String>,
    pub artifacts: Vec<ArtifactEntry>,
    pub elapsed_s: f64,
    pub tool_version: String,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?)
    }

    /// Artifact path → hash.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        self.artifacts.iter().map(|a| (a.path.clone(), a.sha256.clone())).collect()
    }
}

/// Collects a stage's files in a scratch directory that replaces the final
/// one only on [`StageWriter::finish`]; dropped unfinished writers leave
/// nothing behind.
pub struct StageWriter {
    stage: Stage,
    stage_hash: String,
    config_hash: String,
    upstream: BTreeMap<String, String>,
    tmp: PathBuf,
    dest: PathBuf,
    started: Instant,
    done: bool,
}

impl StageWriter {
    pub fn begin(cfg: &RunConfig, stage: Stage) -> Result<Self> {
        let dest = stage_dir(cfg, stage)?;
        let tmp = dest.with_extension("partial");
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        let mut upstream = BTreeMap::new();
        if let Some(up) = stage.upstream() {
            upstream.insert(up.name().to_string(), stage_hash(cfg, up)?);
        }
        let writer = Self {
            stage,
            stage_hash: stage_hash(cfg, stage)?,
            config_hash: cfg.hash()?,
            upstream,
            tmp,
            dest,
            started: Instant::now(),
            done: false,
        };
        writer.write("config.json", cfg.canonical_json()?.as_bytes())?;
        Ok(writer)
    }

    /// Path inside the scratch directory, for writers that take a path.
    pub fn path(&self, name: &str) -> PathBuf {
        self.tmp.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        atomic_write(&self.path(name), bytes)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        self.write(name, &serde_json::to_vec_pretty(value)?)
    }

    pub fn finish(mut self) -> Result<(PathBuf, RunManifest)> {
        let mut files = Vec::new();
        collect_files(&self.tmp, &self.tmp, &mut files)?;
        files.sort();
        let artifacts = files
            .iter()
            .map(|rel| {
                let p = self.tmp.join(rel);
                Ok(ArtifactEntry { path: rel.clone(), sha256: sha256_file(&p)?, bytes: fs::metadata(&p)?.len() })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            stage: self.stage.name().into(),
            stage_hash: self.stage_hash.clone(),
            config_hash: self.config_hash.clone(),
            upstream: self.upstream.clone(),
            artifacts,
            elapsed_s: self.started.elapsed().as_secs_f64(),
            tool_version: TOOL_VERSION.into(),
        };
        self.write_json(MANIFEST, &manifest)?;
        if self.dest.exists() {
            fs::remove_dir_all(&self.dest)?;
        }
        fs::rename(&self.tmp, &self.dest)?;
        self.done = true;
        Ok((self.dest.clone(), manifest))
    }
}

impl Drop for StageWriter {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("under root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}
