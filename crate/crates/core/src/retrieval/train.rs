use std::path::Path;

use serde::{Deserialize, Serialize};

use super::encoder::{pool_global, stack, BoundParams, EncoderParams, Normalizer};
use super::loss::{
    contrastive_loss, distillation_loss, dual_softmax, itm_loss, one_hot_targets, sample_hard_negatives,
    total_loss, DualSoftmax,
};
use super::momentum::MomentumState;
use super::{LossMode, RetrievalConfig};
use crate::corpus::Segment;
use crate::error::{Error, Result};
use crate::numcore::layers::{ParamCursor, Parameterized, SeqLayout};
use crate::numcore::{AdamConfig, Checkpoint, Graph, OptimizerState, Tensor, Var};
use crate::rng::{self, Rng};

/// Trained encoders together with their input normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalModel {
    pub params: EncoderParams,
    pub audio_norm: Normalizer,
    pub motion_norm: Normalizer,
}

impl RetrievalModel {
    pub fn init(rng: &mut Rng, audio_channels: usize, motion_channels: usize, cfg: &RetrievalConfig) -> Self {
        Self {
            params: EncoderParams::init(rng, audio_channels, motion_channels, cfg.hidden, cfg.embedding_dim),
            audio_norm: Normalizer::identity(audio_channels),
            motion_norm: Normalizer::identity(motion_channels),
        }
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    fn frames(&self, seqs: &[&Tensor], audio: bool) -> Result<(Tensor, Vec<usize>)> {
        let norm = if audio { &self.audio_norm } else { &self.motion_norm };
        let normed = seqs.iter().map(|s| norm.apply(s)).collect::<Result<Vec<_>>>()?;
        let (x, layout) = stack(&normed.iter().collect::<Vec<_>>())?;
        let enc = if audio { &self.params.audio } else { &self.params.motion };
        let mut g = Graph::new();
        let vars = enc.bind(&mut g, false);
        let xv = g.constant(x);
        let out = enc.forward(&mut g, &mut ParamCursor::new(&vars), xv, &layout)?;
        Ok((g.value(out).clone(), layout.offsets().to_vec()))
    }

    /// Per-frame audio embeddings `[T × D]`.
    pub fn audio_frames(&self, audio: &Tensor) -> Result<Tensor> {
        Ok(self.frames(&[audio], true)?.0)
    }

    /// Per-frame motion embeddings `[N × D]`.
    pub fn motion_frames(&self, motion: &Tensor) -> Result<Tensor> {
        Ok(self.frames(&[motion], false)?.0)
    }

    fn global(&self, seqs: &[&Tensor], audio: bool) -> Result<Tensor> {
        let mut rows = Vec::new();
        for chunk in seqs.chunks(64) {
            let (frames, offsets) = self.frames(chunk, audio)?;
            let mut g = Graph::new();
            let fv = g.constant(frames);
            let layout = SeqLayout::new(&offsets.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>())?;
            let (pooled, _) = pool_global(&mut g, fv, &layout)?;
            rows.extend_from_slice(g.value(pooled).data());
        }
        Tensor::matrix(seqs.len(), self.dim(), rows)
    }

    /// Unit global audio embeddings, one row per sequence.
    pub fn audio_global(&self, seqs: &[&Tensor]) -> Result<Tensor> {
        self.global(seqs, true)
    }

    pub fn motion_global(&self, seqs: &[&Tensor]) -> Result<Tensor> {
        self.global(seqs, false)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        self.params.save_into("retrieval", &mut ck);
        self.audio_norm.save_into("retrieval.audio_norm", &mut ck);
        self.motion_norm.save_into("retrieval.motion_norm", &mut ck);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, cfg: &RetrievalConfig) -> Result<Self> {
        let audio_norm = Normalizer::load_from("retrieval.audio_norm", ck)?;
        let motion_norm = Normalizer::load_from("retrieval.motion_norm", ck)?;
        let mut r = rng::seeded(0);
        let mut params = EncoderParams::init(
            &mut r,
            audio_norm.mean.len(),
            motion_norm.mean.len(),
            cfg.hidden,
            cfg.embedding_dim,
        );
        params.load_from("retrieval", ck)?;
        Ok(Self { params, audio_norm, motion_norm })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path, cfg: &RetrievalConfig) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, cfg)
    }
}

/// Normalized, stacked audio and motion of a batch of paired segments.
#[derive(Debug, Clone)]
pub struct Batch {
    pub audio: Tensor,
    pub audio_layout: SeqLayout,
    pub motion: Tensor,
    pub motion_layout: SeqLayout,
}

impl Batch {
    pub fn new(model: &RetrievalModel, pairs: &[(&Tensor, &Tensor)]) -> Result<Self> {
        let audio = pairs.iter().map(|(a, _)| model.audio_norm.apply(a)).collect::<Result<Vec<_>>>()?;
        let motion = pairs.iter().map(|(_, m)| model.motion_norm.apply(m)).collect::<Result<Vec<_>>>()?;
        let (audio, audio_layout) = stack(&audio.iter().collect::<Vec<_>>())?;
        let (motion, motion_layout) = stack(&motion.iter().collect::<Vec<_>>())?;
        Ok(Self { audio, audio_layout, motion, motion_layout })
    }

    pub fn len(&self) -> usize {
        self.audio_layout.count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn encode_pair(
    g: &mut Graph,
    params: &EncoderParams,
    vars: &BoundParams,
    batch: &Batch,
) -> Result<(Var, Var)> {
    let av = g.constant(batch.audio.clone());
    let mv = g.constant(batch.motion.clone());
    let af = params.audio.forward(g, &mut ParamCursor::new(&vars.audio), av, &batch.audio_layout)?;
    let mf = params.motion.forward(g, &mut ParamCursor::new(&vars.motion), mv, &batch.motion_layout)?;
    let (a, _) = pool_global(g, af, &batch.audio_layout)?;
    let (m, _) = pool_global(g, mf, &batch.motion_layout)?;
    Ok((a, m))
}

/// Teacher embeddings of a batch and its soft targets over the shared
/// candidate set (batch followed by the queues).
#[derive(Debug, Clone)]
pub struct TeacherTargets {
    pub audio: Tensor,
    pub motion: Tensor,
    pub a2m: Tensor,
    pub m2a: Tensor,
}

pub fn teacher_targets(
    teacher: &EncoderParams,
    batch: &Batch,
    queues: Option<(&Tensor, &Tensor)>,
    tau: f64,
) -> Result<TeacherTargets> {
    let mut g = Graph::new();
    let vars = BoundParams::bind(teacher, &mut g, false);
    let (a, m) = encode_pair(&mut g, teacher, &vars, batch)?;
    let (qa, qm) = bind_queues(&mut g, queues);
    let rho = dual_softmax(&mut g, a, m, qa, qm, tau)?;
    Ok(TeacherTargets {
        audio: g.value(a).clone(),
        motion: g.value(m).clone(),
        a2m: g.value(rho.a2m).clone(),
        m2a: g.value(rho.m2a).clone(),
    })
}

fn bind_queues(g: &mut Graph, queues: Option<(&Tensor, &Tensor)>) -> (Option<Var>, Option<Var>) {
    match queues {
        Some((qa, qm)) => (Some(g.constant(qa.clone())), Some(g.constant(qm.clone()))),
        None => (None, None),
    }
}

/// Source of hard negatives for one loss evaluation.
pub enum Negatives<'a> {
    /// Draw from the detached in-batch similarities.
    Sample(&'a mut Rng),
    /// Use the given (negative motion per audio, negative audio per motion).
    Fixed(Vec<usize>, Vec<usize>),
}

/// Vars of one loss evaluation.
pub struct LossVars {
    pub total: Var,
    pub distill: Var,
    pub itm: Var,
    pub contrastive: Option<Var>,
    pub rho: DualSoftmax,
    pub audio: Var,
    pub motion: Var,
    pub negatives: (Vec<usize>, Vec<usize>),
}

/// Builds the student objective for `batch` on `g`.
#[allow(clippy::too_many_arguments)]
pub fn build_loss(
    g: &mut Graph,
    params: &EncoderParams,
    vars: &BoundParams,
    batch: &Batch,
    queues: Option<(&Tensor, &Tensor)>,
    targets: &TeacherTargets,
    cfg: &RetrievalConfig,
    negatives: Negatives,
) -> Result<LossVars> {
    let (a, m) = encode_pair(g, params, vars, batch)?;
    let (qa, qm) = bind_queues(g, queues);
    let rho = dual_softmax(g, a, m, qa, qm, cfg.temperature)?;
    let distill = distillation_loss(g, &rho, &targets.a2m, &targets.m2a)?;

    let (neg_m, neg_a) = match negatives {
        Negatives::Fixed(nm, na) => (nm, na),
        Negatives::Sample(r) => {
            let logits = g.value(a).matmul(&g.value(m).transpose()?)?.map(|v| v / cfg.temperature);
            sample_hard_negatives(&logits, r)?
        }
    };
    let itm = itm_loss(g, &params.itm, &mut ParamCursor::new(&vars.itm), a, m, &neg_m, &neg_a)?;

    let (total, contrastive) = match cfg.loss_mode {
        LossMode::Weighted => (total_loss(g, distill, itm, cfg.alpha)?, None),
        LossMode::Albef => {
            let (b, c) = (batch.len(), rho.candidates);
            let hard = one_hot_targets(b, c);
            let mix = |soft: &Tensor| hard.zip_map(soft, |h, s| (1.0 - cfg.alpha) * h + cfg.alpha * s);
            let ya = g.constant(mix(&targets.a2m)?);
            let ym = g.constant(mix(&targets.m2a)?);
            let zc = contrastive_loss(g, &rho, ya, ym)?;
            (g.add(zc, itm)?, Some(zc))
        }
    };
    Ok(LossVars { total, distill, itm, contrastive, rho, audio: a, motion: m, negatives: (neg_m, neg_a) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub distill: f64,
    pub itm: f64,
    pub contrastive: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    /// `a2m` distribution of the final batch, `batch × candidates`.
    pub final_similarity: Vec<Vec<f64>>,
}

impl TrainLog {
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let s = &self.steps[range];
        s.iter().map(|l| l.loss).sum::<f64>() / s.len() as f64
    }
}

pub struct TrainedRetrieval {
    pub model: RetrievalModel,
    pub log: TrainLog,
}

/// Trains on paired segments. A pure function of the segments, `cfg` and `seed`.
pub fn train_retrieval(segments: &[Segment], cfg: &RetrievalConfig, seed: u64) -> Result<TrainedRetrieval> {
    cfg.validate()?;
    if segments.len() < cfg.batch_size {
        return Err(Error::invalid(format!(
            "{} training segments for a batch of {}",
            segments.len(),
            cfg.batch_size
        )));
    }
    let audio: Vec<Tensor> = segments.iter().map(|s| s.audio.to_matrix()).collect();
    let motion: Vec<Tensor> = segments.iter().map(|s| s.motion.to_matrix()).collect();

    let mut init_rng = rng::derive(seed, 10);
    let mut model = RetrievalModel::init(&mut init_rng, audio[0].cols(), motion[0].cols(), cfg);
    model.audio_norm = Normalizer::fit(&audio)?;
    model.motion_norm = Normalizer::fit(&motion)?;

    let mut momentum = MomentumState::new(&model.params, cfg.momentum, cfg.queue_size)?;
    let adam = AdamConfig { learning_rate: cfg.learning_rate, clip_norm: cfg.clip_norm, ..Default::default() };
    let mut opt = OptimizerState::for_module(adam, &model.params)?;
    let mut batch_rng = rng::derive(seed, 11);
    let mut neg_rng = rng::derive(seed, 12);
    let mut log = TrainLog { steps: Vec::with_capacity(cfg.steps), final_similarity: Vec::new() };

    for step in 0..cfg.steps {
        let idx = rand::seq::index::sample(&mut batch_rng, segments.len(), cfg.batch_size);
        let pairs: Vec<(&Tensor, &Tensor)> = idx.iter().map(|i| (&audio[i], &motion[i])).collect();
        let batch = Batch::new(&model, &pairs)?;

        let diverged = |e: Error| match e {
            Error::NonFinite(d) => Error::Diverged { step, detail: d },
            other => other,
        };
        momentum.update_teacher(&model.params)?;
        let qa = momentum.audio_queue.matrix();
        let qm = momentum.motion_queue.matrix();
        let queues = qa.as_ref().zip(qm.as_ref());
        let targets = teacher_targets(&momentum.teacher, &batch, queues, cfg.temperature).map_err(diverged)?;

        let mut g = Graph::new();
        let vars = BoundParams::bind(&model.params, &mut g, true);
        let lv = build_loss(
            &mut g,
            &model.params,
            &vars,
            &batch,
            queues,
            &targets,
            cfg,
            Negatives::Sample(&mut neg_rng),
        )
        .map_err(diverged)?;
        let scalar = |v: Var| g.value(v).data()[0];
        log.steps.push(StepLog {
            step,
            loss: scalar(lv.total),
            distill: scalar(lv.distill),
            itm: scalar(lv.itm),
            contrastive: lv.contrastive.map(scalar),
        });
        if step + 1 == cfg.steps {
            let sim = g.value(lv.rho.a2m);
            log.final_similarity = (0..sim.rows()).map(|r| sim.row(r).to_vec()).collect();
        }
        let mut grads = g.backward(lv.total).map_err(diverged)?;
        let grads: Vec<Tensor> = vars
            .all()
            .into_iter()
            .map(|v| grads.take(v).unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
            .collect();
        opt.step_module(&mut model.params, &grads).map_err(diverged)?;
        momentum.enqueue(&targets.audio, &targets.motion)?;
    }
    Ok(TrainedRetrieval { model, log })
}
