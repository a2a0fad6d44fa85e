use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::layers::{join, Dense, ParamCursor, Parameterized, SeqLayout, TemporalConv};
use crate::numcore::{Checkpoint, Graph, Tensor, Var};

/// Per-channel standardization fitted on training frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    /// Fits on the rows of the given `T × C` matrices.
    pub fn fit<'a>(mats: impl IntoIterator<Item = &'a Tensor>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for m in mats {
            if sum.is_empty() {
                sum = vec![0.0; m.cols()];
                sq = vec![0.0; m.cols()];
            } else if m.cols() != sum.len() {
                return Err(Error::shape("normalizer inputs differ in width"));
            }
            for r in 0..m.rows() {
                for (c, &v) in m.row(r).iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            n += m.rows();
        }
        if n == 0 {
            return Err(Error::invalid("normalizer needs at least one frame"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt().max(1e-3))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, m: &Tensor) -> Result<Tensor> {
        if m.cols() != self.mean.len() {
            return Err(Error::shape(format!("{} channels, normalizer has {}", m.cols(), self.mean.len())));
        }
        let mut out = m.clone();
        let c = self.mean.len();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v - self.mean[i % c]) / self.std[i % c];
        }
        Ok(out)
    }

    pub fn save_into(&self, prefix: &str, ck: &mut Checkpoint) {
        ck.push(join(prefix, "mean"), Tensor::vector(self.mean.clone()));
        ck.push(join(prefix, "std"), Tensor::vector(self.std.clone()));
    }

    pub fn load_from(prefix: &str, ck: &Checkpoint) -> Result<Self> {
        let mean = ck.require(&join(prefix, "mean"))?.data().to_vec();
        let std = ck.require(&join(prefix, "std"))?.data().to_vec();
        if mean.len() != std.len() {
            return Err(Error::Format("normalizer mean/std length mismatch".into()));
        }
        Ok(Self { mean, std })
    }
}

/// Temporal conv stack mapping `T × C` frames to `T × D` embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub conv1: TemporalConv,
    pub conv2: TemporalConv,
    pub proj: Dense,
}

impl Encoder {
    pub fn init(rng: &mut impl Rng, channels: usize, hidden: usize, dim: usize) -> Self {
        Self {
            conv1: TemporalConv::init(rng, channels, hidden, 5),
            conv2: TemporalConv::init(rng, hidden, hidden, 3),
            proj: Dense::init(rng, hidden, dim),
        }
    }

    pub fn channels(&self) -> usize {
        self.conv1.dense.inputs() / self.conv1.kernel
    }

    pub fn dim(&self) -> usize {
        self.proj.outputs()
    }

    /// Per-frame embeddings of stacked (already normalized) sequences.
    pub fn forward(&self, g: &mut Graph, p: &mut ParamCursor, x: Var, layout: &SeqLayout) -> Result<Var> {
        let h = self.conv1.forward(g, p, x, layout)?;
        let h = g.silu(h)?;
        let h = self.conv2.forward(g, p, h, layout)?;
        let h = g.silu(h)?;
        self.proj.forward(g, p, h)
    }
}

impl Parameterized for Encoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.proj.visit(&join(prefix, "proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.proj.visit_mut(&join(prefix, "proj"), f);
    }
}

/// Match classifier over `[â, m̂, â⊙m̂]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ItmHead {
    pub fc: Dense,
}

impl ItmHead {
    pub fn init(rng: &mut impl Rng, dim: usize) -> Self {
        Self { fc: Dense::init(rng, 3 * dim, 1) }
    }

    /// Match probabilities `[P × 1]` for row-aligned pairs.
    pub fn forward(&self, g: &mut Graph, p: &mut ParamCursor, a: Var, m: Var) -> Result<Var> {
        let prod = g.mul(a, m)?;
        let feats = g.concat_cols(&[a, m, prod])?;
        let logit = self.fc.forward(g, p, feats)?;
        g.sigmoid(logit)
    }
}

impl Parameterized for ItmHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.fc.visit(&join(prefix, "fc"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.fc.visit_mut(&join(prefix, "fc"), f);
    }
}

/// Trainable retrieval parameters: both encoders and the match head.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub audio: Encoder,
    pub motion: Encoder,
    pub itm: ItmHead,
}

impl EncoderParams {
    pub fn init(rng: &mut impl Rng, audio_channels: usize, motion_channels: usize, hidden: usize, dim: usize) -> Self {
        Self {
            audio: Encoder::init(rng, audio_channels, hidden, dim),
            motion: Encoder::init(rng, motion_channels, hidden, dim),
            itm: ItmHead::init(rng, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.audio.dim()
    }
}

impl Parameterized for EncoderParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.audio.visit(&join(prefix, "audio"), f);
        self.motion.visit(&join(prefix, "motion"), f);
        self.itm.visit(&join(prefix, "itm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.audio.visit_mut(&join(prefix, "audio"), f);
        self.motion.visit_mut(&join(prefix, "motion"), f);
        self.itm.visit_mut(&join(prefix, "itm"), f);
    }
}

/// Parameter vars of an [`EncoderParams`] bound on a graph, split by part.
pub struct BoundParams {
    pub audio: Vec<Var>,
    pub motion: Vec<Var>,
    pub itm: Vec<Var>,
}

impl BoundParams {
    pub fn bind(params: &EncoderParams, g: &mut Graph, trainable: bool) -> Self {
        Self {
            audio: params.audio.bind(g, trainable),
            motion: params.motion.bind(g, trainable),
            itm: params.itm.bind(g, trainable),
        }
    }

    pub fn all(&self) -> Vec<Var> {
        self.audio.iter().chain(&self.motion).chain(&self.itm).copied().collect()
    }
}

/// Stacks sequences into one matrix with its layout.
pub fn stack(seqs: &[&Tensor]) -> Result<(Tensor, SeqLayout)> {
    let layout = SeqLayout::new(&seqs.iter().map(|s| s.rows()).collect::<Vec<_>>())?;
    let cols = seqs.first().map_or(0, |s| s.cols());
    let mut data = Vec::with_capacity(layout.total() * cols);
    for s in seqs {
        if s.cols() != cols {
            return Err(Error::shape("stacked sequences differ in width"));
        }
        data.extend_from_slice(s.data());
    }
    Ok((Tensor::matrix(layout.total(), cols, data)?, layout))
}

/// Channelwise max over each sequence followed by L2 normalization.
/// Returns `[B × D]` unit rows and the per-sequence argmax frames.
pub fn pool_global(g: &mut Graph, frames: Var, layout: &SeqLayout) -> Result<(Var, Vec<usize>)> {
    let (pooled, argmax) = g.segment_max(frames, layout.offsets())?;
    Ok((g.l2_normalize_rows(pooled)?, argmax))
}
