//! Audio/motion data types, the synthetic corpus, token-aligned
//! segmentation and the persisted motion base.

mod base;
mod generate;
mod segment;
mod split;

pub use base::{
    base_from_bytes, base_to_bytes, build_base, load_base, save_base, BaseProvenance, MotionBase,
    BASE_MAGIC, BASE_VERSION,
};
pub use generate::{
    generate_corpus, motif_templates, CorpusParams, SyntheticAligner, TokenAlignmentProvider,
    JOINTS, JOINT_NAMES,
};
pub use segment::{segment_by_tokens, segment_clip, segment_clips, ClosedBy, Segment, SegmentRules};
pub use split::{split_corpus, Split, SplitRatios};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util;
use crate::numcore::{Checkpoint, Tensor};

/// Sanity bound on synthetic joint coordinates, in meters.
pub const POSITION_BOUND_M: f64 = 10.0;

/// `N × J × Q` pose sequence (positions in meters when `Q = 3`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSequence {
    pub frames: usize,
    pub joints: usize,
    pub features: usize,
    pub frame_rate: f64,
    data: Vec<f64>,
}

impl MotionSequence {
    pub fn new(
        frames: usize,
        joints: usize,
        features: usize,
        frame_rate: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        if frames == 0 || joints == 0 || features == 0 {
            return Err(Error::invalid("motion needs at least one frame, joint and feature"));
        }
        if data.len() != frames * joints * features {
            return Err(Error::shape(format!(
                "motion {frames}×{joints}×{features} needs {} values, got {}",
                frames * joints * features,
                data.len()
            )));
        }
        if !(frame_rate > 0.0) {
            return Err(Error::invalid("frame rate must be positive"));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || v.abs() > POSITION_BOUND_M) {
            return Err(Error::invalid(format!("motion value {v} is non-finite or out of bounds")));
        }
        Ok(Self { frames, joints, features, frame_rate, data })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame_width(&self) -> usize {
        self.joints * self.features
    }

    pub fn frame(&self, n: usize) -> &[f64] {
        let w = self.frame_width();
        &self.data[n * w..(n + 1) * w]
    }

    pub fn pose(&self, n: usize, j: usize) -> &[f64] {
        let start = n * self.frame_width() + j * self.features;
        &self.data[start..start + self.features]
    }

    pub fn duration_s(&self) -> f64 {
        self.frames as f64 / self.frame_rate
    }

    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frames {
            return Err(Error::invalid(format!("frame range {start}..{end} of {}", self.frames)));
        }
        let w = self.frame_width();
        Self::new(
            end - start,
            self.joints,
            self.features,
            self.frame_rate,
            self.data[start * w..end * w].to_vec(),
        )
    }

    /// `N × (J·Q)` matrix view.
    pub fn to_matrix(&self) -> Tensor {
        Tensor::matrix(self.frames, self.frame_width(), self.data.clone()).expect("shape")
    }

    pub fn from_matrix(m: &Tensor, joints: usize, features: usize, frame_rate: f64) -> Result<Self> {
        if m.cols() != joints * features {
            return Err(Error::shape(format!("{} columns vs {joints}×{features}", m.cols())));
        }
        Self::new(m.rows(), joints, features, frame_rate, m.data().to_vec())
    }
}

/// `T × C` audio feature track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioFeatures {
    pub frames: usize,
    pub channels: usize,
    pub frame_rate: f64,
    data: Vec<f64>,
}

impl AudioFeatures {
    pub fn new(frames: usize, channels: usize, frame_rate: f64, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || channels == 0 {
            return Err(Error::invalid("audio needs at least one frame and channel"));
        }
        if data.len() != frames * channels {
            return Err(Error::shape(format!(
                "audio {frames}×{channels} needs {} values, got {}",
                frames * channels,
                data.len()
            )));
        }
        if !(frame_rate > 0.0) {
            return Err(Error::invalid("frame rate must be positive"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("audio contains non-finite values"));
        }
        Ok(Self { frames, channels, frame_rate, data })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frames {
            return Err(Error::invalid(format!("frame range {start}..{end} of {}", self.frames)));
        }
        let c = self.channels;
        Self::new(end - start, c, self.frame_rate, self.data[start * c..end * c].to_vec())
    }

    /// Frame index for a time in seconds, at this track's rate.
    pub fn frame_at(&self, seconds: f64) -> usize {
        ((seconds * self.frame_rate).round().max(0.0) as usize).min(self.frames)
    }

    pub fn to_matrix(&self) -> Tensor {
        Tensor::matrix(self.frames, self.channels, self.data.clone()).expect("shape")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: f64,
    pub end: f64,
}

impl Token {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Word-level timing, strictly ordered and non-overlapping.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenAlignment {
    tokens: Vec<Token>,
}

impl TokenAlignment {
    pub fn new(tokens: Vec<Token>) -> Result<Self> {
        for (i, t) in tokens.iter().enumerate() {
            if !(t.end > t.start) || !t.start.is_finite() || !t.end.is_finite() {
                return Err(Error::invalid(format!("token {i} has end ≤ start")));
            }
            if i > 0 && t.start < tokens[i - 1].end {
                return Err(Error::invalid(format!("token {i} overlaps its predecessor")));
            }
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// One recording: paired audio and motion with its word timing.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub id: u64,
    pub speaker: u32,
    pub motion: MotionSequence,
    pub audio: AudioFeatures,
    pub alignment: TokenAlignment,
    /// Latent motif class of each token (known only for synthetic data).
    pub token_motifs: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub params: CorpusParams,
    pub clips: Vec<Clip>,
}

impl Corpus {
    pub fn clip(&self, id: u64) -> Option<&Clip> {
        self.clips.iter().find(|c| c.id == id)
    }

    /// Writes `<stem>.bin` (EXGT arrays) and `<stem>.json` (metadata) next to `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut arrays = Checkpoint::new();
        let mut meta = Vec::with_capacity(self.clips.len());
        for c in &self.clips {
            arrays.push(
                format!("clip{}.motion", c.id),
                Tensor::new(vec![c.motion.frames, c.motion.joints, c.motion.features], c.motion.data.clone())?,
            );
            arrays.push(
                format!("clip{}.audio", c.id),
                Tensor::matrix(c.audio.frames, c.audio.channels, c.audio.data.clone())?,
            );
            meta.push(ClipMeta {
                id: c.id,
                speaker: c.speaker,
                motion_rate: c.motion.frame_rate,
                audio_rate: c.audio.frame_rate,
                alignment: c.alignment.clone(),
                token_motifs: c.token_motifs.clone(),
            });
        }
        let sidecar = CorpusMeta { params: self.params.clone(), clips: meta };
        arrays.save(&path.with_extension("bin"))?;
        io_util::atomic_write(&path.with_extension("json"), &serde_json::to_vec_pretty(&sidecar)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta: CorpusMeta = serde_json::from_slice(&std::fs::read(path.with_extension("json"))?)?;
        let arrays = Checkpoint::load(&path.with_extension("bin"))?;
        let mut clips = Vec::with_capacity(meta.clips.len());
        for m in meta.clips {
            let mo = arrays.require(&format!("clip{}.motion", m.id))?;
            let au = arrays.require(&format!("clip{}.audio", m.id))?;
            if mo.rank() != 3 || au.rank() != 2 {
                return Err(Error::Format(format!("clip {} arrays have wrong rank", m.id)));
            }
            let s = mo.shape();
            clips.push(Clip {
                id: m.id,
                speaker: m.speaker,
                motion: MotionSequence::new(s[0], s[1], s[2], m.motion_rate, mo.data().to_vec())?,
                audio: AudioFeatures::new(au.rows(), au.cols(), m.audio_rate, au.data().to_vec())?,
                alignment: TokenAlignment::new(m.alignment.tokens)?,
                token_motifs: m.token_motifs,
            });
        }
        Ok(Self { params: meta.params, clips })
    }
}

#[derive(Serialize, Deserialize)]
struct ClipMeta {
    id: u64,
    speaker: u32,
    motion_rate: f64,
    audio_rate: f64,
    alignment: TokenAlignment,
    token_motifs: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct CorpusMeta {
    params: CorpusParams,
    clips: Vec<ClipMeta>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn motion_bounds_enforced() {
        assert!(MotionSequence::new(1, 1, 3, 30.0, vec![0.0, 11.0, 0.0]).is_err());
        assert!(MotionSequence::new(0, 1, 3, 30.0, vec![]).is_err());
        assert!(MotionSequence::new(1, 1, 3, 30.0, vec![0.0, f64::NAN, 0.0]).is_err());
        let m = MotionSequence::new(2, 1, 3, 30.0, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(m.pose(1, 0), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn alignment_rejects_overlap() {
        let tok = |s: f64, e: f64| Token { text: "w".into(), start: s, end: e };
        assert!(TokenAlignment::new(vec![tok(0.0, 0.5), tok(0.4, 0.8)]).is_err());
        assert!(TokenAlignment::new(vec![tok(0.5, 0.5)]).is_err());
        assert!(TokenAlignment::new(vec![tok(0.0, 0.5), tok(0.5, 0.8)]).is_ok());
    }
}
