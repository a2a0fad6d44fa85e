use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::RetrievalModel;
use crate::corpus::{MotionBase, MotionSequence, Segment};
use crate::error::{Error, Result};
use crate::io_util;
use crate::numcore::Tensor;

/// Fills the base's embedding table with global motion embeddings.
pub fn embed_base(model: &RetrievalModel, base: &mut MotionBase) -> Result<()> {
    let motion: Vec<Tensor> = base.segments().iter().map(|s| s.motion.to_matrix()).collect();
    let emb = model.motion_global(&motion.iter().collect::<Vec<_>>())?;
    base.set_embeddings(emb)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub segment_id: u64,
    pub score: f64,
}

/// Best `k` base segments for a query embedding, by descending dot
/// product; equal scores go to the lower segment id.
pub fn retrieve_topk(query: &[f64], base: &MotionBase, k: usize) -> Result<Vec<RetrievalHit>> {
    let emb = base
        .embeddings()
        .ok_or_else(|| Error::invalid("motion base has no embeddings; embed it first"))?;
    if query.len() != emb.cols() {
        return Err(Error::shape(format!("query dim {} vs base dim {}", query.len(), emb.cols())));
    }
    let mut hits: Vec<RetrievalHit> = base
        .segments()
        .iter()
        .enumerate()
        .map(|(i, s)| RetrievalHit {
            segment_id: s.id,
            score: emb.row(i).iter().zip(query).map(|(a, b)| a * b).sum(),
        })
        .collect();
    hits.sort_by(|x, y| y.score.total_cmp(&x.score).then(x.segment_id.cmp(&y.segment_id)));
    hits.truncate(k);
    Ok(hits)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub index: usize,
    pub score: f64,
    /// Pose at `index`, `J·Q` values.
    pub pose: Vec<f64>,
}

/// Motion frame whose embedding best matches the global audio embedding.
/// Ties go to the earliest frame.
pub fn locate_keyframe(model: &RetrievalModel, audio: &Tensor, motion: &MotionSequence) -> Result<Keyframe> {
    let a = model.audio_global(&[audio])?;
    let frames = model.motion_frames(&motion.to_matrix())?;
    let (index, score) = best_frame(a.row(0), &frames)?;
    Ok(Keyframe { index, score, pose: motion.frame(index).to_vec() })
}

/// Row of `frames` with the largest dot product with `query`; ties go to
/// the lowest row.
pub fn best_frame(query: &[f64], frames: &Tensor) -> Result<(usize, f64)> {
    if frames.rows() == 0 || frames.cols() != query.len() {
        return Err(Error::shape(format!("query dim {} vs frames {:?}", query.len(), frames.shape())));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for n in 0..frames.rows() {
        let s: f64 = frames.row(n).iter().zip(query).map(|(x, y)| x * y).sum();
        if n == 0 || s.partial_cmp(&best.1) == Some(Ordering::Greater) {
            best = (n, s);
        }
    }
    Ok(best)
}

/// Fraction of queries whose top `k` base segments include one with the
/// query's label, for each `k` in `ks`.
pub fn recall_at_k(model: &RetrievalModel, base: &MotionBase, queries: &[Segment], ks: &[usize]) -> Result<Vec<f64>> {
    if queries.is_empty() {
        return Err(Error::invalid("recall needs at least one query"));
    }
    let audio: Vec<Tensor> = queries.iter().map(|s| s.audio.to_matrix()).collect();
    let q = model.audio_global(&audio.iter().collect::<Vec<_>>())?;
    let kmax = ks.iter().copied().max().unwrap_or(0);
    let mut hits = vec![0usize; ks.len()];
    for (i, query) in queries.iter().enumerate() {
        let top = retrieve_topk(q.row(i), base, kmax)?;
        for (h, &k) in hits.iter_mut().zip(ks) {
            let found = top.iter().take(k).any(|hit| {
                base.segment(hit.segment_id).and_then(|s| s.label) == query.label && query.label.is_some()
            });
            *h += found as usize;
        }
    }
    Ok(hits.iter().map(|&h| h as f64 / queries.len() as f64).collect())
}

/// One line of retrieval output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub query_id: u64,
    pub rank: usize,
    pub segment_id: u64,
    pub score: f64,
    pub keyframe_index: usize,
}

pub fn write_results_jsonl(path: &Path, records: &[RetrievalRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    io_util::atomic_write(path, &out)
}
