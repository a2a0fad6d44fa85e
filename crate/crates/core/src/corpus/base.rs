//! Motion base: the retrieval library of paired audio/motion segments.
//!
//! File layout (little-endian):
//! `"EXGB" | u32 version | u32 segments | u32 embedding dim (0 = none) |
//! u32 provenance length | provenance JSON`, then one fixed-size record per
//! segment, then each segment's motion and audio samples as `f64`, then the
//! `segments × dim` embedding matrix. A JSON manifest sits beside the file.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AudioFeatures, ClosedBy, MotionSequence, Segment, SplitRatios};
use crate::error::{Error, Result};
use crate::io_util;
use crate::numcore::checkpoint::{read_exact, read_f64, read_u32, read_u64};
use crate::numcore::Tensor;

pub const BASE_MAGIC: &[u8; 4] = b"EXGB";
pub const BASE_VERSION: u32 = 1;
const NO_LABEL: u32 = u32::MAX;

/// Where a base came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseProvenance {
    pub seed: u64,
    pub split: String,
    pub ratios: SplitRatios,
    pub motif_count: usize,
    pub clip_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionBase {
    segments: Vec<Segment>,
    embeddings: Option<Tensor>,
    pub provenance: BaseProvenance,
}

impl MotionBase {
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segment(&self, id: u64) -> Option<&Segment> {
        self.segments.iter().find(|s| s.id == id)
    }

    /// `segments × D` global embeddings, row `i` for `segments()[i]`.
    pub fn embeddings(&self) -> Option<&Tensor> {
        self.embeddings.as_ref()
    }

    pub fn set_embeddings(&mut self, e: Tensor) -> Result<()> {
        if e.rank() != 2 || e.rows() != self.segments.len() || e.cols() == 0 {
            return Err(Error::shape(format!(
                "embeddings {:?} for {} segments",
                e.shape(),
                self.segments.len()
            )));
        }
        if !e.all_finite() {
            return Err(Error::NonFinite("segment embeddings".into()));
        }
        self.embeddings = Some(e);
        Ok(())
    }
}

pub fn build_base(segments: Vec<Segment>, provenance: BaseProvenance) -> Result<MotionBase> {
    if segments.is_empty() {
        return Err(Error::invalid("motion base needs at least one segment"));
    }
    let mut seen = HashSet::new();
    for s in &segments {
        if !seen.insert(s.id) {
            return Err(Error::invalid(format!("duplicate segment id {}", s.id)));
        }
    }
    Ok(MotionBase { segments, embeddings: None, provenance })
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    seed: u64,
    split: String,
    ratios: SplitRatios,
    motif_count: usize,
    segments: usize,
    embedding_dim: usize,
    sha256: String,
}

fn put_u32(b: &mut Vec<u8>, v: u32) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(b: &mut Vec<u8>, v: u64) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(b: &mut Vec<u8>, v: f64) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn closed_code(c: ClosedBy) -> u8 {
    match c {
        ClosedBy::Limit => 0,
        ClosedBy::Gap => 1,
        ClosedBy::End => 2,
    }
}

pub fn base_to_bytes(base: &MotionBase) -> Result<Vec<u8>> {
    let prov = serde_json::to_vec(&base.provenance)?;
    let dim = base.embeddings.as_ref().map_or(0, |e| e.cols());
    let mut b = Vec::new();
    b.extend_from_slice(BASE_MAGIC);
    put_u32(&mut b, BASE_VERSION);
    put_u32(&mut b, base.segments.len() as u32);
    put_u32(&mut b, dim as u32);
    put_u32(&mut b, prov.len() as u32);
    b.extend_from_slice(&prov);
    for s in &base.segments {
        put_u64(&mut b, s.id);
        put_u64(&mut b, s.clip_id);
        put_u32(&mut b, s.first_token as u32);
        put_u32(&mut b, s.last_token as u32);
        put_f64(&mut b, s.start_s);
        put_f64(&mut b, s.end_s);
        b.push(s.conforming as u8);
        b.push(closed_code(s.closed_by));
        put_u32(&mut b, s.label.unwrap_or(NO_LABEL));
        put_u32(&mut b, s.motion.frames as u32);
        put_u32(&mut b, s.motion.joints as u32);
        put_u32(&mut b, s.motion.features as u32);
        put_f64(&mut b, s.motion.frame_rate);
        put_u32(&mut b, s.audio.frames as u32);
        put_u32(&mut b, s.audio.channels as u32);
        put_f64(&mut b, s.audio.frame_rate);
    }
    for s in &base.segments {
        s.motion.data.iter().for_each(|&v| put_f64(&mut b, v));
        s.audio.data.iter().for_each(|&v| put_f64(&mut b, v));
    }
    if let Some(e) = &base.embeddings {
        e.data().iter().for_each(|&v| put_f64(&mut b, v));
    }
    Ok(b)
}

struct Record {
    id: u64,
    clip_id: u64,
    first: usize,
    last: usize,
    start: f64,
    end: f64,
    conforming: bool,
    closed_by: ClosedBy,
    label: Option<u32>,
    motion: (usize, usize, usize, f64),
    audio: (usize, usize, f64),
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| read_f64(r)).collect()
}

pub fn base_from_bytes(bytes: &[u8]) -> Result<MotionBase> {
    let r = &mut &bytes[..];
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != BASE_MAGIC {
        return Err(Error::Format("not a motion-base file".into()));
    }
    let version = read_u32(r)?;
    if version != BASE_VERSION {
        return Err(Error::Format(format!("motion-base version {version}, expected {BASE_VERSION}")));
    }
    let count = read_u32(r)? as usize;
    let dim = read_u32(r)? as usize;
    let mut prov = vec![0u8; read_u32(r)? as usize];
    read_exact(r, &mut prov)?;
    let provenance: BaseProvenance = serde_json::from_slice(&prov)?;

    let mut records = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let id = read_u64(r)?;
        let clip_id = read_u64(r)?;
        let first = read_u32(r)? as usize;
        let last = read_u32(r)? as usize;
        let start = read_f64(r)?;
        let end = read_f64(r)?;
        let mut flags = [0u8; 2];
        read_exact(r, &mut flags)?;
        let closed_by = match flags[1] {
            0 => ClosedBy::Limit,
            1 => ClosedBy::Gap,
            2 => ClosedBy::End,
            c => return Err(Error::Format(format!("unknown close code {c}"))),
        };
        let label = Some(read_u32(r)?).filter(|&l| l != NO_LABEL);
        let motion = (read_u32(r)? as usize, read_u32(r)? as usize, read_u32(r)? as usize, read_f64(r)?);
        let audio = (read_u32(r)? as usize, read_u32(r)? as usize, read_f64(r)?);
        records.push(Record {
            id,
            clip_id,
            first,
            last,
            start,
            end,
            conforming: flags[0] != 0,
            closed_by,
            label,
            motion,
            audio,
        });
    }
    let mut segments = Vec::with_capacity(records.len());
    for rec in records {
        let (n, j, q, mr) = rec.motion;
        let (t, c, ar) = rec.audio;
        let motion = MotionSequence::new(n, j, q, mr, read_f64s(r, n * j * q)?)?;
        let audio = AudioFeatures::new(t, c, ar, read_f64s(r, t * c)?)?;
        segments.push(Segment {
            id: rec.id,
            clip_id: rec.clip_id,
            first_token: rec.first,
            last_token: rec.last,
            start_s: rec.start,
            end_s: rec.end,
            closed_by: rec.closed_by,
            conforming: rec.conforming,
            label: rec.label,
            audio,
            motion,
        });
    }
    let mut base = build_base(segments, provenance)?;
    if dim > 0 {
        base.set_embeddings(Tensor::matrix(count, dim, read_f64s(r, count * dim)?)?)?;
    }
    if !r.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", r.len())));
    }
    Ok(base)
}

/// Writes the base file and its `.json` manifest.
pub fn save_base(base: &MotionBase, path: &Path) -> Result<()> {
    let bytes = base_to_bytes(base)?;
    let manifest = Manifest {
        format: "EXGB".into(),
        version: BASE_VERSION,
        seed: base.provenance.seed,
        split: base.provenance.split.clone(),
        ratios: base.provenance.ratios,
        motif_count: base.provenance.motif_count,
        segments: base.len(),
        embedding_dim: base.embeddings.as_ref().map_or(0, |e| e.cols()),
        sha256: io_util::sha256_hex(&bytes),
    };
    io_util::atomic_write(path, &bytes)?;
    io_util::atomic_write(&path.with_extension("json"), &serde_json::to_vec_pretty(&manifest)?)
}

pub fn load_base(path: &Path) -> Result<MotionBase> {
    base_from_bytes(&std::fs::read(path)?)
}
