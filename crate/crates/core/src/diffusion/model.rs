use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::denoiser::Denoiser;
use super::mask::{draw_condition_dropout, training_mask_sampler, MaskSamplerConfig, MaskSpec};
use super::schedule::{forward_diffuse, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numcore::layers::{ParamCursor, Parameterized, SeqLayout};
use crate::numcore::{AdamConfig, Checkpoint, Graph, OptimizerState, Tensor, Var};
use crate::retrieval::{stack, Normalizer};
use crate::rng::{self, Rng as ChaRng};

/// Bound on denoised predictions in normalized units.
const X0_CLIP: f64 = 6.0;

/// How observed cells enter the noisy input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Composition {
    /// Observed cells are the condition diffused to the current level.
    Renoised,
    /// Observed cells are the clean condition.
    Clean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub diffusion_steps: usize,
    /// Scale the 1e-4 → 0.02 β endpoints by `1000 / diffusion_steps`.
    pub rescale_betas: bool,
    pub frames: usize,
    pub hidden: usize,
    pub dilations: Vec<usize>,
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: Option<f64>,
    pub phi_audio: f64,
    pub phi_keyframe: f64,
    pub masks: MaskSamplerConfig,
    pub guidance_scale: f64,
    pub composition: Composition,
    /// Frames on each side of a retrieved keyframe that are also pinned.
    pub keyframe_radius: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            diffusion_steps: 50,
            rescale_betas: true,
            frames: 60,
            hidden: 128,
            dilations: vec![1, 2, 4, 8],
            train_steps: 20_000,
            batch_size: 8,
            learning_rate: 1e-3,
            clip_norm: Some(1.0),
            phi_audio: 0.10,
            phi_keyframe: 0.10,
            masks: MaskSamplerConfig::default(),
            guidance_scale: 1.0,
            composition: Composition::Renoised,
            keyframe_radius: 0,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("diffusion.{m}")));
        if self.diffusion_steps < 2 {
            return bad("diffusion_steps must be at least 2");
        }
        if self.frames == 0 || self.hidden == 0 || self.batch_size == 0 {
            return bad("frames, hidden and batch_size must be positive");
        }
        if self.dilations.contains(&0) {
            return bad("dilations must be positive");
        }
        for (name, p) in [
            ("phi_audio", self.phi_audio),
            ("phi_keyframe", self.phi_keyframe),
            ("masks.conditioned", self.masks.conditioned),
            ("masks.curriculum.start", self.masks.curriculum.start),
            ("masks.curriculum.end", self.masks.curriculum.end),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.masks.kind_weights.iter().any(|w| !(*w >= 0.0)) || self.masks.kind_weights.iter().sum::<f64>() <= 0.0 {
            return bad("masks.kind_weights must be non-negative with a positive sum");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        if self.rescale_betas {
            NoiseSchedule::scaled_linear(self.diffusion_steps)
        } else {
            NoiseSchedule::linear(self.diffusion_steps, 1e-4, 0.02)
        }
    }
}

/// Observed poses (zero where unobserved), their mask, and audio context.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub values: Tensor,
    pub mask: MaskSpec,
    /// `N × A` audio context; `None` selects the null context.
    pub audio: Option<Tensor>,
}

impl Condition {
    /// Keeps `poses` only where `mask` is set.
    pub fn new(poses: &Tensor, mask: MaskSpec, audio: Option<Tensor>) -> Result<Self> {
        let m = mask.to_tensor();
        if poses.shape() != m.shape() {
            return Err(Error::shape(format!("poses {:?} vs mask {:?}", poses.shape(), m.shape())));
        }
        let values = poses.zip_map(&m, |v, b| if b == 1.0 { v } else { 0.0 })?;
        Ok(Self { values, mask, audio })
    }
}

/// Independently withholds audio (probability `phi_audio`) and the pose
/// condition (probability `phi_keyframe`).
pub fn stochastic_condition_dropout(
    cond: Condition,
    phi_audio: f64,
    phi_keyframe: f64,
    rng: &mut impl Rng,
) -> Result<Condition> {
    let d = draw_condition_dropout(phi_audio, phi_keyframe, rng)?;
    let mut cond = cond;
    if d.audio {
        cond.audio = None;
    }
    if d.keyframe {
        let (n, j, q) = (cond.mask.frames, cond.mask.joints, cond.mask.features);
        cond.mask = MaskSpec::empty(n, j, q);
        cond.values = Tensor::zeros(cond.values.shape());
    }
    Ok(cond)
}

/// Stacked, normalized inputs of one denoiser evaluation.
#[derive(Debug, Clone)]
pub struct DiffusionBatch {
    pub x_hat: Tensor,
    pub cond_values: Tensor,
    pub mask: Tensor,
    pub audio: Tensor,
    pub audio_null: Vec<bool>,
    pub steps: Vec<usize>,
    pub noise: Tensor,
    pub layout: SeqLayout,
}

/// Noise-prediction error averaged over unobserved cells; zero when every
/// cell is observed.
pub fn diffusion_loss(
    g: &mut Graph,
    denoiser: &Denoiser,
    vars: &[Var],
    batch: &DiffusionBatch,
    total_steps: usize,
) -> Result<Var> {
    let x = g.constant(batch.x_hat.clone());
    let c = g.constant(batch.cond_values.clone());
    let m = g.constant(batch.mask.clone());
    let a = g.constant(batch.audio.clone());
    let eps_hat = denoiser.forward(
        g,
        &mut ParamCursor::new(vars),
        x,
        c,
        m,
        a,
        &batch.audio_null,
        &batch.steps,
        total_steps,
        &batch.layout,
    )?;
    let keep = batch.mask.map(|b| 1.0 - b);
    let count = keep.sum();
    if count == 0.0 {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let eps = g.constant(batch.noise.clone());
    let diff = g.sub(eps_hat, eps)?;
    let sq = g.mul(diff, diff)?;
    let keep = g.constant(keep);
    let kept = g.mul(sq, keep)?;
    let s = g.sum(kept)?;
    g.scale(s, 1.0 / count)
}

/// A clip's raw motion and per-frame audio context, frame-aligned.
#[derive(Debug, Clone)]
pub struct ClipContext {
    pub motion: Tensor,
    pub audio: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionModel {
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
    pub norm: Normalizer,
    pub composition: Composition,
    /// Trained with condition dropout, so guidance is meaningful.
    pub supports_guidance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionLog {
    pub losses: Vec<f64>,
}

impl DiffusionLog {
    pub fn mean(&self, range: std::ops::Range<usize>) -> f64 {
        let s = &self.losses[range];
        s.iter().sum::<f64>() / s.len() as f64
    }
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

impl DiffusionModel {
    pub fn init(cfg: &DiffusionConfig, width: usize, audio_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::derive(seed, 20);
        Ok(Self {
            denoiser: Denoiser::init(&mut r, width, audio_dim, cfg.hidden, &cfg.dilations),
            schedule: cfg.schedule()?,
            norm: Normalizer::identity(width),
            composition: cfg.composition,
            supports_guidance: cfg.phi_audio > 0.0 || cfg.phi_keyframe > 0.0,
        })
    }

    pub fn width(&self) -> usize {
        self.denoiser.width
    }

    /// Builds one training batch of random windows.
    #[allow(clippy::too_many_arguments)]
    pub fn training_batch(
        &self,
        clips: &[ClipContext],
        cfg: &DiffusionConfig,
        step: usize,
        joints: usize,
        rng: &mut ChaRng,
    ) -> Result<DiffusionBatch> {
        let (n, w) = (cfg.frames, self.width());
        if w % joints != 0 {
            return Err(Error::shape(format!("{w} channels for {joints} joints")));
        }
        let features = w / joints;
        let eligible: Vec<&ClipContext> = clips.iter().filter(|c| c.motion.rows() >= n).collect();
        if eligible.is_empty() {
            return Err(Error::invalid(format!("no clip has {n} frames")));
        }
        let mut parts: Vec<[Tensor; 5]> = Vec::with_capacity(cfg.batch_size);
        let (mut nulls, mut steps) = (Vec::new(), Vec::new());
        for _ in 0..cfg.batch_size {
            let clip = eligible[rng.random_range(0..eligible.len())];
            let start = rng.random_range(0..=clip.motion.rows() - n);
            let x0 = self.norm.apply(&clip.motion.slice_rows(start, start + n))?;
            let audio = clip.audio.slice_rows(start, start + n);
            let mask = training_mask_sampler(&cfg.masks, step, cfg.train_steps, (n, joints, features), rng)?
                .unwrap_or_else(|| MaskSpec::empty(n, joints, features));
            let cond = Condition::new(&x0, mask, Some(audio.clone()))?;
            let cond = stochastic_condition_dropout(cond, cfg.phi_audio, cfg.phi_keyframe, rng)?;
            let t = rng.random_range(1..=self.schedule.steps());
            let noise = gaussian_matrix(n, w, rng);
            let xt = forward_diffuse(&self.schedule, &x0, t, &noise)?;
            let m = cond.mask.to_tensor();
            let x_hat = match self.composition {
                // The observed cells diffused with the same noise are x_t itself.
                Composition::Renoised => xt,
                Composition::Clean => super::mask::apply_mask_composition(&x0, &xt, &m)?,
            };
            nulls.push(cond.audio.is_none());
            steps.push(t);
            parts.push([x_hat, cond.values, m, audio, noise]);
        }
        let col = |k: usize| -> Result<(Tensor, SeqLayout)> { stack(&parts.iter().map(|p| &p[k]).collect::<Vec<_>>()) };
        let (x_hat, layout) = col(0)?;
        Ok(DiffusionBatch {
            x_hat,
            cond_values: col(1)?.0,
            mask: col(2)?.0,
            audio: col(3)?.0,
            audio_null: nulls,
            steps,
            noise: col(4)?.0,
            layout,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        self.denoiser.save_into("denoiser", &mut ck);
        self.norm.save_into("diffusion.norm", &mut ck);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, cfg: &DiffusionConfig, audio_dim: usize) -> Result<Self> {
        let norm = Normalizer::load_from("diffusion.norm", ck)?;
        let mut model = Self::init(cfg, norm.mean.len(), audio_dim, 0)?;
        model.denoiser.load_from("denoiser", ck)?;
        model.norm = norm;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path, cfg: &DiffusionConfig, audio_dim: usize) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, cfg, audio_dim)
    }

    fn predict_noise(
        &self,
        x_hat: &Tensor,
        conds: &[(Tensor, Tensor)],
        audio: &Tensor,
        audio_null: &[bool],
        t: usize,
        layout: &SeqLayout,
    ) -> Result<Tensor> {
        let (cv, _) = stack(&conds.iter().map(|c| &c.0).collect::<Vec<_>>())?;
        let (mv, _) = stack(&conds.iter().map(|c| &c.1).collect::<Vec<_>>())?;
        let mut g = Graph::new();
        let vars = self.denoiser.bind(&mut g, false);
        let (x, c, m, a) = (g.constant(x_hat.clone()), g.constant(cv), g.constant(mv), g.constant(audio.clone()));
        let steps = vec![t; layout.count()];
        let out = self.denoiser.forward(
            &mut g,
            &mut ParamCursor::new(&vars),
            x,
            c,
            m,
            a,
            audio_null,
            &steps,
            self.schedule.steps(),
            layout,
        )?;
        Ok(g.value(out).clone())
    }

    /// Ancestral sampling for a batch of requests; returns raw motion
    /// `N × W` per request. Observed cells of the result equal the
    /// request's condition exactly.
    pub fn sample(&self, requests: &[SampleRequest], guidance: f64) -> Result<Vec<Tensor>> {
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        if guidance != 1.0 && !self.supports_guidance {
            return Err(Error::invalid("guidance needs a model trained with condition dropout"));
        }
        let w = self.width();
        let audio_dim = self.denoiser.audio_dim;
        let mut rngs: Vec<ChaRng> = requests.iter().map(|r| rng::seeded(r.seed)).collect();
        let mut conds = Vec::with_capacity(requests.len());
        let mut clean = Vec::with_capacity(requests.len());
        let mut audio = Vec::with_capacity(requests.len());
        let mut nulls = Vec::with_capacity(requests.len());
        for r in requests {
            let n = r.frames;
            let (values, mask) = match &r.condition {
                Some(c) => {
                    if c.mask.frames != n || c.values.shape() != [n, w] {
                        return Err(Error::shape("condition does not match the requested frames"));
                    }
                    let m = c.mask.to_tensor();
                    let v = self.norm.apply(&c.values)?.zip_map(&m, |v, b| v * b)?;
                    (v, m)
                }
                None => (Tensor::zeros(&[n, w]), Tensor::zeros(&[n, w])),
            };
            clean.push(values.clone());
            conds.push((values, mask));
            match &r.audio {
                Some(a) if a.shape() == [n, audio_dim] => {
                    audio.push(a.clone());
                    nulls.push(false);
                }
                Some(a) => return Err(Error::shape(format!("audio context {:?}, expected [{n}, {audio_dim}]", a.shape()))),
                None => {
                    audio.push(Tensor::zeros(&[n, audio_dim]));
                    nulls.push(true);
                }
            }
        }
        let (audio, layout) = stack(&audio.iter().collect::<Vec<_>>())?;
        let uncond: Vec<(Tensor, Tensor)> =
            conds.iter().map(|(v, _)| (Tensor::zeros(v.shape()), Tensor::zeros(v.shape()))).collect();
        let all_null = vec![true; requests.len()];

        let mut xs: Vec<Tensor> = requests.iter().zip(&mut rngs).map(|(r, g)| gaussian_matrix(r.frames, w, g)).collect();
        let s = &self.schedule;
        for t in (1..=s.steps()).rev() {
            let mut composed = Vec::with_capacity(xs.len());
            for ((x, (c, m)), g) in xs.iter().zip(&conds).zip(&mut rngs) {
                let observed = match self.composition {
                    Composition::Renoised => forward_diffuse(s, c, t, &gaussian_matrix(c.rows(), w, g))?,
                    Composition::Clean => c.clone(),
                };
                composed.push(super::mask::apply_mask_composition(&observed, x, m)?);
            }
            let (x_hat, _) = stack(&composed.iter().collect::<Vec<_>>())?;
            let mut eps = self.predict_noise(&x_hat, &conds, &audio, &nulls, t, &layout)?;
            if guidance != 1.0 {
                let eps_u = self.predict_noise(&x_hat, &uncond, &audio, &all_null, t, &layout)?;
                eps = eps_u.zip_map(&eps, |u, c| u + guidance * (c - u))?;
            }
            let (ab, ab_prev, beta, alpha) = (s.alpha_bar(t)?, s.alpha_bar_prev(t)?, s.beta(t)?, s.alpha(t)?);
            let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
            let ct = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
            let sigma = s.posterior_variance(t)?.sqrt();
            for (k, x) in xs.iter_mut().enumerate() {
                let lo = layout.offsets()[k];
                let xh = &composed[k];
                let e = eps.slice_rows(lo, lo + xh.rows());
                let z = if t > 1 { Some(gaussian_matrix(xh.rows(), w, &mut rngs[k])) } else { None };
                let mut next = xh.clone();
                for (i, v) in next.data_mut().iter_mut().enumerate() {
                    let x0 = ((xh.data()[i] - (1.0 - ab).sqrt() * e.data()[i]) / ab.sqrt()).clamp(-X0_CLIP, X0_CLIP);
                    *v = c0 * x0 + ct * xh.data()[i] + z.as_ref().map_or(0.0, |z| sigma * z.data()[i]);
                }
                *x = next;
            }
            if xs.iter().any(|x| !x.all_finite()) {
                return Err(Error::NonFinite(format!("sampling at step {t}")));
            }
        }

        let mut out = Vec::with_capacity(xs.len());
        for (x, r) in xs.iter().zip(requests) {
            let c = self.norm.mean.len();
            let mut raw = x.clone();
            for (i, v) in raw.data_mut().iter_mut().enumerate() {
                *v = *v * self.norm.std[i % c] + self.norm.mean[i % c];
            }
            if let Some(cond) = &r.condition {
                for (i, v) in raw.data_mut().iter_mut().enumerate() {
                    if cond.mask.bits()[i] == 1 {
                        *v = cond.values.data()[i];
                    }
                }
            }
            out.push(raw);
        }
        Ok(out)
    }
}

/// One sequence to generate. Condition values are raw (unnormalized).
#[derive(Debug, Clone)]
pub struct SampleRequest {
    pub frames: usize,
    pub audio: Option<Tensor>,
    pub condition: Option<Condition>,
    pub seed: u64,
}

/// Single-request convenience over [`DiffusionModel::sample`].
pub fn sample(model: &DiffusionModel, request: &SampleRequest, guidance: f64) -> Result<Tensor> {
    Ok(model.sample(std::slice::from_ref(request), guidance)?.remove(0))
}

pub struct TrainedDiffusion {
    pub model: DiffusionModel,
    pub log: DiffusionLog,
}

/// Trains the denoiser on random windows of `clips`; deterministic in `seed`.
pub fn train_diffusion(clips: &[ClipContext], joints: usize, cfg: &DiffusionConfig, seed: u64) -> Result<TrainedDiffusion> {
    cfg.validate()?;
    let first = clips.first().ok_or_else(|| Error::invalid("no training clips"))?;
    let mut model = DiffusionModel::init(cfg, first.motion.cols(), first.audio.cols(), seed)?;
    model.norm = Normalizer::fit(clips.iter().map(|c| &c.motion))?;
    let adam = AdamConfig { learning_rate: cfg.learning_rate, clip_norm: cfg.clip_norm, ..Default::default() };
    let mut opt = OptimizerState::for_module(adam, &model.denoiser)?;
    let mut r = rng::derive(seed, 21);
    let mut log = DiffusionLog { losses: Vec::with_capacity(cfg.train_steps) };
    for step in 0..cfg.train_steps {
        let diverged = |e: Error| match e {
            Error::NonFinite(d) => Error::Diverged { step, detail: d },
            other => other,
        };
        let batch = model.training_batch(clips, cfg, step, joints, &mut r)?;
        let mut g = Graph::new();
        let vars = model.denoiser.bind(&mut g, true);
        let loss = diffusion_loss(&mut g, &model.denoiser, &vars, &batch, model.schedule.steps()).map_err(diverged)?;
        log.losses.push(g.value(loss).data()[0]);
        let mut grads = g.backward(loss).map_err(diverged)?;
        let grads: Vec<Tensor> = vars
            .iter()
            .map(|&v| grads.take(v).unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
            .collect();
        opt.step_module(&mut model.denoiser, &grads).map_err(diverged)?;
    }
    Ok(TrainedDiffusion { model, log })
}
