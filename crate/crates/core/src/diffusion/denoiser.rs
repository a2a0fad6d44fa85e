use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::layers::{join, Dense, ParamCursor, Parameterized, SeqLayout, TemporalConv};
use crate::numcore::{Graph, Tensor, Var};

pub const TIME_FEATURES: usize = 16;

/// Sinusoidal features of a diffusion step, `[1 × TIME_FEATURES]`.
pub fn time_features(t: usize, total: usize) -> Vec<f64> {
    let pos = t as f64 * 1000.0 / total as f64;
    let half = TIME_FEATURES / 2;
    let mut out = Vec::with_capacity(TIME_FEATURES);
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out.push((pos * freq).sin());
    }
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out.push((pos * freq).cos());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock {
    pub conv: TemporalConv,
    pub out: Dense,
}

/// Residual temporal network predicting the noise of every motion cell.
///
/// Per frame it reads the noisy motion, the observed values (zero where
/// unobserved), the mask and the audio context; the step enters through a
/// projected sinusoidal embedding added after the input convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub width: usize,
    pub audio_dim: usize,
    pub input: TemporalConv,
    pub time: Dense,
    pub blocks: Vec<ResBlock>,
    pub output: Dense,
    /// Audio context used when audio is withheld.
    pub null_audio: Tensor,
}

impl Denoiser {
    pub fn init(rng: &mut impl Rng, width: usize, audio_dim: usize, hidden: usize, dilations: &[usize]) -> Self {
        let blocks = dilations
            .iter()
            .map(|&d| ResBlock {
                conv: TemporalConv::init_dilated(rng, hidden, hidden, 3, d),
                out: Dense::init(rng, hidden, hidden).scaled(0.5),
            })
            .collect();
        Self {
            width,
            audio_dim,
            input: TemporalConv::init(rng, 3 * width + audio_dim, hidden, 3),
            time: Dense::init(rng, TIME_FEATURES, hidden),
            blocks,
            output: Dense::init(rng, hidden, width).scaled(0.1),
            null_audio: Tensor::zeros(&[1, audio_dim]),
        }
    }

    /// Predicted noise `[ΣN × W]` for stacked samples.
    ///
    /// `audio` holds one row per frame; frames of samples with `audio_null`
    /// set read the learned null context instead. `steps` gives each
    /// sample's diffusion step.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &mut ParamCursor,
        x: Var,
        cond_values: Var,
        mask: Var,
        audio: Var,
        audio_null: &[bool],
        steps: &[usize],
        total_steps: usize,
        layout: &SeqLayout,
    ) -> Result<Var> {
        let b = layout.count();
        if audio_null.len() != b || steps.len() != b {
            return Err(Error::shape("one null flag and step per sample required"));
        }
        let input_vars = (p.next_var(), p.next_var());
        let time_vars = (p.next_var(), p.next_var());
        let block_vars: Vec<_> = self.blocks.iter().map(|_| [p.next_var(), p.next_var(), p.next_var(), p.next_var()]).collect();
        let out_vars = (p.next_var(), p.next_var());
        let null = p.next_var();

        // Audio rows, with withheld samples redirected to the null row.
        let rows = layout.total();
        let audio_all = g.concat_rows(&[audio, null])?;
        let mut idx = Vec::with_capacity(rows);
        for s in 0..b {
            for r in layout.offsets()[s]..layout.offsets()[s + 1] {
                idx.push(if audio_null[s] { rows } else { r });
            }
        }
        let audio_rows = g.gather_rows(audio_all, idx, 1)?;

        let feats = g.concat_cols(&[x, cond_values, mask, audio_rows])?;
        let vars = [input_vars.0, input_vars.1];
        let mut h = self.input.forward(g, &mut ParamCursor::new(&vars), feats, layout)?;

        let tf: Vec<f64> = steps.iter().flat_map(|&t| time_features(t, total_steps)).collect();
        let tf = g.constant(Tensor::matrix(b, TIME_FEATURES, tf)?);
        let temb = self.time.forward(g, &mut ParamCursor::new(&[time_vars.0, time_vars.1]), tf)?;
        let temb = g.gather_rows(temb, layout.broadcast_index(), 1)?;
        h = g.add(h, temb)?;
        h = g.silu(h)?;

        for (blk, v) in self.blocks.iter().zip(&block_vars) {
            let r = blk.conv.forward(g, &mut ParamCursor::new(&v[..2]), h, layout)?;
            let r = g.silu(r)?;
            let r = blk.out.forward(g, &mut ParamCursor::new(&v[2..]), r)?;
            h = g.add(h, r)?;
            h = g.silu(h)?;
        }
        self.output.forward(g, &mut ParamCursor::new(&[out_vars.0, out_vars.1]), h)
    }
}

impl Parameterized for Denoiser {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.input.visit(&join(prefix, "input"), f);
        self.time.visit(&join(prefix, "time"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            let p = join(prefix, &format!("block{i}"));
            b.conv.visit(&join(&p, "conv"), f);
            b.out.visit(&join(&p, "out"), f);
        }
        self.output.visit(&join(prefix, "output"), f);
        f(join(prefix, "null_audio"), &self.null_audio);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.input.visit_mut(&join(prefix, "input"), f);
        self.time.visit_mut(&join(prefix, "time"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = join(prefix, &format!("block{i}"));
            b.conv.visit_mut(&join(&p, "conv"), f);
            b.out.visit_mut(&join(&p, "out"), f);
        }
        self.output.visit_mut(&join(prefix, "output"), f);
        f(join(prefix, "null_audio"), &mut self.null_audio);
    }
}
