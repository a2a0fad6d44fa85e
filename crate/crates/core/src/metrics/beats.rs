use serde::{Deserialize, Serialize};

use crate::corpus::TokenAlignment;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const DEFAULT_BEAT_SIGMA_S: f64 = 0.1;

/// Strictly increasing event times in seconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BeatTrack {
    times: Vec<f64>,
}

impl BeatTrack {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("beat times must be finite"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("beat times must be strictly increasing"));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Token onsets inside `[start_s, end_s)`, relative to `start_s`.
pub fn audio_beats(alignment: &TokenAlignment, start_s: f64, end_s: f64) -> Result<BeatTrack> {
    BeatTrack::new(
        alignment
            .tokens()
            .iter()
            .filter(|t| t.start >= start_s && t.start < end_s)
            .map(|t| t.start - start_s)
            .collect(),
    )
}

/// Summed joint speed per frame (central differences, one-sided at the ends).
pub fn joint_speed(motion: &Tensor, joints: usize, frame_rate: f64) -> Result<Vec<f64>> {
    let n = motion.rows();
    if n < 3 {
        return Err(Error::invalid(format!("beat detection needs at least 3 frames, got {n}")));
    }
    if motion.cols() != joints * 3 {
        return Err(Error::shape(format!("{} channels for {joints} positional joints", motion.cols())));
    }
    Ok((0..n)
        .map(|t| {
            let (a, b) = (t.saturating_sub(1), (t + 1).min(n - 1));
            let dt = (b - a) as f64 / frame_rate;
            (0..joints)
                .map(|j| {
                    let d2: f64 = (0..3).map(|q| (motion.at(b, 3 * j + q) - motion.at(a, 3 * j + q)).powi(2)).sum();
                    d2.sqrt() / dt
                })
                .sum()
        })
        .collect())
}

/// Interior local minima of the summed joint speed that lie below its mean.
pub fn motion_beats(motion: &Tensor, joints: usize, frame_rate: f64) -> Result<BeatTrack> {
    let s = joint_speed(motion, joints, frame_rate)?;
    let threshold = s.iter().sum::<f64>() / s.len() as f64;
    let times = (1..s.len() - 1)
        .filter(|&t| s[t] < s[t - 1] && s[t] <= s[t + 1] && s[t] < threshold)
        .map(|t| t as f64 / frame_rate)
        .collect();
    BeatTrack::new(times)
}

/// Mean over motion beats of `exp(−Δt²/(2σ²))`, Δt to the nearest audio beat.
/// `None` when the motion has no beats.
pub fn beat_consistency_tracks(audio: &BeatTrack, motion: &BeatTrack, sigma_s: f64) -> Result<Option<f64>> {
    if audio.is_empty() {
        return Err(Error::invalid("beat consistency needs at least one audio beat"));
    }
    if !(sigma_s > 0.0) {
        return Err(Error::invalid("beat kernel width must be positive"));
    }
    if motion.is_empty() {
        return Ok(None);
    }
    let score: f64 = motion
        .times()
        .iter()
        .map(|&m| {
            let i = audio.times().partition_point(|&a| a < m);
            let mut d = f64::INFINITY;
            if i < audio.len() {
                d = d.min(audio.times()[i] - m);
            }
            if i > 0 {
                d = d.min(m - audio.times()[i - 1]);
            }
            (-d * d / (2.0 * sigma_s * sigma_s)).exp()
        })
        .sum();
    Ok(Some(score / motion.len() as f64))
}

pub fn beat_consistency(
    audio: &BeatTrack,
    motion: &Tensor,
    joints: usize,
    frame_rate: f64,
    sigma_s: f64,
) -> Result<Option<f64>> {
    beat_consistency_tracks(audio, &motion_beats(motion, joints, frame_rate)?, sigma_s)
}
