//! Synthetic speech-and-gesture corpus with known structure.
//!
//! Speech is a sequence of phrases separated by pauses longer than the
//! segmentation gap threshold. Every token of a phrase carries the phrase's
//! latent motif class. Audio frames inside a token hold an onset-weighted
//! copy of the motif's embedding plus noise; motion frames inside a token
//! play one stroke of the motif's gesture template on top of the speaker's
//! rest skeleton, a slow root sway, and smooth per-channel noise. Strokes
//! start and end at rest, so kinematic beats fall on token boundaries.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AudioFeatures, Clip, Corpus, MotionSequence, Token, TokenAlignment};
use crate::error::{Error, Result};
use crate::rng;

pub const JOINTS: usize = 12;

pub const JOINT_NAMES: [&str; JOINTS] = [
    "pelvis",
    "spine",
    "neck",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_hip",
    "r_hip",
];

const REST_POSE: [[f64; 3]; JOINTS] = [
    [0.0, 1.00, 0.0],
    [0.0, 1.25, 0.0],
    [0.0, 1.50, 0.0],
    [0.0, 1.65, 0.02],
    [0.18, 1.45, 0.0],
    [0.25, 1.20, 0.05],
    [0.28, 0.98, 0.12],
    [-0.18, 1.45, 0.0],
    [-0.25, 1.20, 0.05],
    [-0.28, 0.98, 0.12],
    [0.10, 0.95, 0.0],
    [-0.10, 0.95, 0.0],
];

/// Gesture amplitude per joint, meters.
const JOINT_GAIN: [f64; JOINTS] = [0.0, 0.03, 0.04, 0.06, 0.05, 0.15, 0.30, 0.05, 0.15, 0.30, 0.0, 0.0];

/// Pauses between phrases; longer than the 0.5 s forced-boundary gap.
const PAUSE_RANGE_S: (f64, f64) = (0.6, 0.9);
const PHRASE_RANGE_S: (f64, f64) = (1.1, 1.9);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusParams {
    pub seed: u64,
    pub speakers: u32,
    pub clips: usize,
    pub clip_duration_s: f64,
    pub motif_count: usize,
    pub frame_rate: f64,
    pub audio_channels: usize,
    /// Standard deviation of the smooth motion noise, meters.
    pub motion_noise_m: f64,
    pub audio_noise: f64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            seed: 7,
            speakers: 4,
            clips: 40,
            clip_duration_s: 30.0,
            motif_count: 8,
            frame_rate: 30.0,
            audio_channels: 16,
            motion_noise_m: 0.008,
            audio_noise: 0.3,
        }
    }
}

impl CorpusParams {
    pub fn validate(&self) -> Result<()> {
        if self.motif_count < 2 {
            return Err(Error::invalid("at least two motifs are needed for a contrastive signal"));
        }
        if self.clip_duration_s < 10.0 {
            return Err(Error::invalid("clips must last at least 10 s"));
        }
        if self.speakers == 0 || self.clips == 0 {
            return Err(Error::invalid("need at least one speaker and one clip"));
        }
        if !(self.frame_rate > 0.0) || self.audio_channels == 0 {
            return Err(Error::invalid("frame rate and channel count must be positive"));
        }
        Ok(())
    }
}

/// Per-motif gesture and audio signatures.
#[derive(Debug, Clone, PartialEq)]
pub struct MotifBank {
    /// `[motif][joint]` peak displacement of the stroke.
    pub primary: Vec<[[f64; 3]; JOINTS]>,
    /// `[motif][joint]` asymmetric component of the stroke.
    pub secondary: Vec<[[f64; 3]; JOINTS]>,
    /// `[motif]` audio embedding.
    pub audio: Vec<Vec<f64>>,
}

impl MotifBank {
    /// Displacement of joint `j` at stroke phase `u ∈ [0, 1]`.
    pub fn offset(&self, motif: usize, j: usize, u: f64) -> [f64; 3] {
        let a = (PI * u).sin().powi(2);
        let b = (2.0 * PI * u).sin() * (PI * u).sin();
        let (p, s) = (self.primary[motif][j], self.secondary[motif][j]);
        [a * p[0] + b * s[0], a * p[1] + b * s[1], a * p[2] + b * s[2]]
    }

    /// Template sampled on `grid` phases, flattened `grid × J × 3`.
    pub fn sampled(&self, motif: usize, grid: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(grid * JOINTS * 3);
        for k in 0..grid {
            let u = (k as f64 + 0.5) / grid as f64;
            for j in 0..JOINTS {
                out.extend_from_slice(&self.offset(motif, j, u));
            }
        }
        out
    }
}

/// Grid used to compare templates.
pub const TEMPLATE_GRID: usize = 16;

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Motif bank for `params`, redrawn until every pair of templates is more
/// than five noise norms apart on the comparison grid.
pub fn motif_templates(params: &CorpusParams) -> Result<MotifBank> {
    params.validate()?;
    let mut r = rng::derive(params.seed, u64::MAX);
    let noise_norm = params.motion_noise_m * ((TEMPLATE_GRID * JOINTS * 3) as f64).sqrt();
    for _ in 0..64 {
        let draw_joint = |gain: f64, r: &mut rng::Rng| -> [f64; 3] {
            std::array::from_fn(|_| gain * r.random_range(-1.0..1.0))
        };
        let mut primary = Vec::with_capacity(params.motif_count);
        let mut secondary = Vec::with_capacity(params.motif_count);
        for _ in 0..params.motif_count {
            primary.push(std::array::from_fn(|j| draw_joint(JOINT_GAIN[j], &mut r)));
            secondary.push(std::array::from_fn(|j| draw_joint(0.5 * JOINT_GAIN[j], &mut r)));
        }
        let audio = (0..params.motif_count)
            .map(|_| {
                let v: Vec<f64> =
                    (0..params.audio_channels).map(|_| gaussian(&mut r)).collect();
                let n = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| 3.0 * x / n).collect()
            })
            .collect();
        let bank = MotifBank { primary, secondary, audio };
        let sampled: Vec<_> = (0..params.motif_count).map(|m| bank.sampled(m, TEMPLATE_GRID)).collect();
        let separated = (0..sampled.len())
            .all(|a| (a + 1..sampled.len()).all(|b| l2(&sampled[a], &sampled[b]) > 5.0 * noise_norm));
        if separated {
            return Ok(bank);
        }
    }
    Err(Error::invalid("could not draw separated motif templates; lower the motion noise"))
}

struct Speaker {
    scale: f64,
    audio_offset: Vec<f64>,
}

fn speaker_traits(params: &CorpusParams, speaker: u32) -> Speaker {
    let mut r = rng::derive(params.seed, (1 << 32) + speaker as u64);
    Speaker {
        scale: r.random_range(0.92..1.08),
        audio_offset: (0..params.audio_channels)
            .map(|_| 0.2 * gaussian(&mut r))
            .collect(),
    }
}

fn gaussian(r: &mut impl Rng) -> f64 {
    StandardNormal.sample(r)
}

fn generate_clip(params: &CorpusParams, bank: &MotifBank, id: u64) -> Result<Clip> {
    let mut r = rng::derive(params.seed, 1000 + id);
    let speaker_id = (id % params.speakers as u64) as u32;
    let speaker = speaker_traits(params, speaker_id);
    let fps = params.frame_rate;
    let frames = (params.clip_duration_s * fps).round() as usize;
    let duration = frames as f64 / fps;

    // Phrase and token timing.
    let mut tokens = Vec::new();
    let mut motifs = Vec::new();
    let mut amp = Vec::new();
    let mut t = r.random_range(0.2..0.5);
    loop {
        let count = r.random_range(4..=8usize);
        let total = r.random_range(PHRASE_RANGE_S.0..PHRASE_RANGE_S.1);
        if t + total > duration - 0.1 {
            break;
        }
        let motif = r.random_range(0..params.motif_count) as u32;
        let weights: Vec<f64> = (0..count).map(|_| r.random_range(0.7..1.3)).collect();
        let wsum: f64 = weights.iter().sum();
        let phrase_start = t;
        for (k, w) in weights.iter().enumerate() {
            let end = if k + 1 == count { phrase_start + total } else { t + total * w / wsum };
            tokens.push(Token { text: format!("m{motif}w{}", r.random_range(0..40u32)), start: t, end });
            motifs.push(motif);
            amp.push(r.random_range(0.85..1.15));
            t = end;
        }
        t += r.random_range(PAUSE_RANGE_S.0..PAUSE_RANGE_S.1);
    }

    // Low-frequency drifts: root sway and per-channel noise.
    let sway_phase: [f64; 2] = [r.random_range(0.0..2.0 * PI), r.random_range(0.0..2.0 * PI)];
    let noise_terms: Vec<[(f64, f64); 2]> = (0..JOINTS * 3)
        .map(|_| std::array::from_fn(|_| (r.random_range(0.3..1.5), r.random_range(0.0..2.0 * PI))))
        .collect();

    let channels = params.audio_channels;
    let mut motion = Vec::with_capacity(frames * JOINTS * 3);
    let mut audio = Vec::with_capacity(frames * channels);
    let mut cursor = 0;
    for f in 0..frames {
        let tau = f as f64 / fps;
        while cursor < tokens.len() && tokens[cursor].end <= tau {
            cursor += 1;
        }
        let active = tokens
            .get(cursor)
            .filter(|tok| tok.start <= tau)
            .map(|tok| (cursor, (tau - tok.start) / tok.duration()));

        let root = [
            0.06 * (2.0 * PI * 0.08 * tau + sway_phase[0]).sin(),
            0.0,
            0.04 * (2.0 * PI * 0.05 * tau + sway_phase[1]).sin(),
        ];
        for j in 0..JOINTS {
            let stroke = match active {
                Some((k, u)) => {
                    let o = bank.offset(motifs[k] as usize, j, u);
                    o.map(|v| v * amp[k] * speaker.scale)
                }
                None => [0.0; 3],
            };
            for q in 0..3 {
                let noise: f64 = noise_terms[j * 3 + q]
                    .iter()
                    .map(|&(hz, ph)| params.motion_noise_m * (2.0 * PI * hz * tau + ph).sin())
                    .sum();
                motion.push(REST_POSE[j][q] * speaker.scale + root[q] + stroke[q] + noise);
            }
        }

        let (emb, env) = match active {
            Some((k, u)) => (Some(&bank.audio[motifs[k] as usize]), 0.35 + 0.65 * (-4.0 * u).exp()),
            None => (None, 0.0),
        };
        for c in 0..channels {
            let signal = emb.map_or(0.0, |e| env * e[c]);
            let voiced = if emb.is_some() { speaker.audio_offset[c] } else { 0.0 };
            audio.push(signal + voiced + params.audio_noise * gaussian(&mut r));
        }
    }

    Ok(Clip {
        id,
        speaker: speaker_id,
        motion: MotionSequence::new(frames, JOINTS, 3, fps, motion)?,
        audio: AudioFeatures::new(frames, channels, fps, audio)?,
        alignment: TokenAlignment::new(tokens)?,
        token_motifs: motifs,
    })
}

/// Builds the corpus; a pure function of `params`.
pub fn generate_corpus(params: &CorpusParams) -> Result<Corpus> {
    let bank = motif_templates(params)?;
    let clips = (0..params.clips as u64)
        .map(|id| generate_clip(params, &bank, id))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { params: params.clone(), clips })
}

/// Source of word timing for a clip.
pub trait TokenAlignmentProvider {
    fn align(&self, clip: &Clip) -> Result<TokenAlignment>;
}

/// Returns the generator's own timing.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticAligner;

impl TokenAlignmentProvider for SyntheticAligner {
    fn align(&self, clip: &Clip) -> Result<TokenAlignment> {
        Ok(clip.alignment.clone())
    }
}
