use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Mask structure. Trajectory control pins joint 0 (the root) in every frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MaskKind {
    None,
    Trajectory,
    Joint { joints: Vec<usize> },
    Frame { frames: Vec<usize> },
    RandomKeypoint { rate: f64 },
}

/// Binary `N × J × Q` observation mask; 1 marks an observed cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub frames: usize,
    pub joints: usize,
    pub features: usize,
    bits: Vec<u8>,
}

impl MaskSpec {
    pub fn empty(frames: usize, joints: usize, features: usize) -> Self {
        Self { kind: MaskKind::None, frames, joints, features, bits: vec![0; frames * joints * features] }
    }

    pub fn get(&self, n: usize, j: usize, q: usize) -> bool {
        self.bits[(n * self.joints + j) * self.features + q] == 1
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// `N × (J·Q)` matrix of 0/1 values.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.bits.iter().map(|&b| b as f64).collect();
        Tensor::matrix(self.frames, self.joints * self.features, data).expect("mask shape")
    }

    /// Frames with at least one observed cell.
    pub fn observed_frames(&self) -> Vec<usize> {
        let w = self.joints * self.features;
        (0..self.frames).filter(|&n| self.bits[n * w..(n + 1) * w].contains(&1)).collect()
    }
}

/// Realizes a mask of the given kind.
pub fn make_mask(kind: &MaskKind, frames: usize, joints: usize, features: usize, rng: &mut impl Rng) -> Result<MaskSpec> {
    if frames == 0 || joints == 0 || features == 0 {
        return Err(Error::invalid("mask shape must be non-empty"));
    }
    let mut m = MaskSpec::empty(frames, joints, features);
    m.kind = kind.clone();
    let w = joints * features;
    match kind {
        MaskKind::None => {}
        MaskKind::Trajectory => {
            for n in 0..frames {
                m.bits[n * w..n * w + features].fill(1);
            }
        }
        MaskKind::Joint { joints: js } => {
            if js.is_empty() {
                return Err(Error::invalid("joint mask needs at least one joint"));
            }
            for &j in js {
                if j >= joints {
                    return Err(Error::invalid(format!("joint {j} out of range")));
                }
                for n in 0..frames {
                    let s = n * w + j * features;
                    m.bits[s..s + features].fill(1);
                }
            }
        }
        MaskKind::Frame { frames: fs } => {
            if fs.is_empty() {
                return Err(Error::invalid("frame mask needs at least one frame"));
            }
            for &n in fs {
                if n >= frames {
                    return Err(Error::invalid(format!("frame {n} out of range")));
                }
                m.bits[n * w..(n + 1) * w].fill(1);
            }
        }
        MaskKind::RandomKeypoint { rate } => {
            if !(0.0..=1.0).contains(rate) {
                return Err(Error::invalid(format!("keypoint rate {rate} outside [0, 1]")));
            }
            for b in m.bits.iter_mut() {
                *b = rng.random_bool(*rate) as u8;
            }
        }
    }
    Ok(m)
}

/// `m⊙x₀ + (1−m)⊙x_t`.
pub fn apply_mask_composition(x0: &Tensor, xt: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if x0.shape() != xt.shape() || x0.shape() != mask.shape() {
        return Err(Error::shape(format!("{:?}, {:?}, mask {:?}", x0.shape(), xt.shape(), mask.shape())));
    }
    if mask.data().iter().any(|&b| b != 0.0 && b != 1.0) {
        return Err(Error::invalid("mask must be binary"));
    }
    let data = x0
        .data()
        .iter()
        .zip(xt.data())
        .zip(mask.data())
        .map(|((&a, &b), &m)| if m == 1.0 { a } else { b })
        .collect();
    Tensor::new(x0.shape().to_vec(), data)
}

/// Linearly annealed mask density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Curriculum {
    pub start: f64,
    pub end: f64,
}

impl Default for Curriculum {
    fn default() -> Self {
        Self { start: 0.90, end: 0.03 }
    }
}

impl Curriculum {
    pub fn rate(&self, step: usize, total_steps: usize) -> f64 {
        if total_steps == 0 {
            return self.start;
        }
        let u = (step.min(total_steps)) as f64 / total_steps as f64;
        self.start * (1.0 - u) + self.end * u
    }
}

/// Default curriculum: 0.90 at step 0 down to 0.03 at the final step.
pub fn curriculum_mask_rate(step: usize, total_steps: usize) -> f64 {
    Curriculum::default().rate(step, total_steps)
}

/// Which condition parts a dropout draw removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dropped {
    pub audio: bool,
    pub keyframe: bool,
}

/// Independent Bernoulli drops of the audio and keyframe conditions.
pub fn draw_condition_dropout(phi_audio: f64, phi_keyframe: f64, rng: &mut impl Rng) -> Result<Dropped> {
    for p in [phi_audio, phi_keyframe] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout probability {p} outside [0, 1]")));
        }
    }
    Ok(Dropped { audio: rng.random_bool(phi_audio), keyframe: rng.random_bool(phi_keyframe) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSamplerConfig {
    /// Probability that a training sample is conditioned at all.
    pub conditioned: f64,
    /// Weights of random keypoint, frame and joint masks.
    pub kind_weights: [f64; 3],
    pub curriculum: Curriculum,
}

impl Default for MaskSamplerConfig {
    fn default() -> Self {
        Self { conditioned: 0.70, kind_weights: [0.40, 0.30, 0.30], curriculum: Curriculum::default() }
    }
}

/// Draws the training mask for one sample, or `None` when unconditioned.
/// Structured kinds select each frame (or joint) with the curriculum rate,
/// keeping at least one.
pub fn training_mask_sampler(
    cfg: &MaskSamplerConfig,
    step: usize,
    total_steps: usize,
    shape: (usize, usize, usize),
    rng: &mut impl Rng,
) -> Result<Option<MaskSpec>> {
    let (frames, joints, features) = shape;
    if !rng.random_bool(cfg.conditioned) {
        return Ok(None);
    }
    let kinds = WeightedIndex::new(cfg.kind_weights).map_err(|e| Error::invalid(format!("mask weights: {e}")))?;
    let rate = cfg.curriculum.rate(step, total_steps);
    let pick = |count: usize, rng: &mut dyn rand::RngCore| {
        let mut v: Vec<usize> = (0..count).filter(|_| rng.random_bool(rate)).collect();
        if v.is_empty() {
            v.push(rng.random_range(0..count));
        }
        v
    };
    let kind = match kinds.sample(rng) {
        0 => MaskKind::RandomKeypoint { rate },
        1 => MaskKind::Frame { frames: pick(frames, rng) },
        _ => MaskKind::Joint { joints: pick(joints, rng) },
    };
    make_mask(&kind, frames, joints, features, rng).map(Some)
}
