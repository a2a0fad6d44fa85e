use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{parse_control, ControlCondition, RunConfig};
use super::plot::{heatmap, line_chart};
use super::store::{require, stage_dir, RunManifest, Stage, StageWriter};
use crate::corpus::{
    build_base, generate_corpus, load_base, save_base, segment_clips, split_corpus, BaseProvenance, Clip, Corpus,
    MotionBase, Split, SyntheticAligner,
};
use crate::diffusion::{make_mask, train_diffusion, ClipContext, Condition, DiffusionLog, DiffusionModel, MaskKind, SampleRequest};
use crate::error::{Error, Result};
use crate::metrics::{
    audio_beats, evaluate, mpjpe, to_csv, ControlRow, EvalSample, FeatureExtractor, FeatureMode, MetricsReport,
    MotionFormat,
};
use crate::numcore::{Checkpoint, Tensor};
use crate::retrieval::{
    embed_base, locate_keyframe, recall_at_k, retrieve_topk, train_retrieval, write_results_jsonl, RetrievalModel,
    RetrievalRecord, TrainLog,
};
use crate::rng::{self, splitmix64};

pub const RECALL_KS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: Stage,
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

/// Runs one stage, replacing any previous output for the same stage hash.
pub fn run_stage(cfg: &RunConfig, stage: Stage) -> Result<StageOutcome> {
    cfg.validate()?;
    if let Some(up) = stage.upstream() {
        require(cfg, up)?;
    }
    let w = StageWriter::begin(cfg, stage)?;
    match stage {
        Stage::GenData => gen_data(cfg, &w)?,
        Stage::BuildBase => build_base_stage(cfg, &w)?,
        Stage::TrainRetrieval => train_retrieval_stage(cfg, &w)?,
        Stage::TrainDiffusion => train_diffusion_stage(cfg, &w)?,
        Stage::Synthesize => synthesize(cfg, &w)?,
        Stage::Evaluate => evaluate_stage(cfg, &w)?,
        Stage::Report => report(cfg, &w)?,
    }
    let (dir, manifest) = w.finish()?;
    Ok(StageOutcome { stage, dir, manifest })
}

/// Runs every stage in order, reusing completed stage directories.
pub fn run_all(cfg: &RunConfig, mut progress: impl FnMut(Stage, bool)) -> Result<Vec<StageOutcome>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for stage in Stage::ALL {
        match require(cfg, stage) {
            Ok(dir) => {
                progress(stage, true);
                out.push(StageOutcome { stage, manifest: RunManifest::load(&dir)?, dir });
            }
            Err(Error::MissingArtifact { .. }) => {
                progress(stage, false);
                out.push(run_stage(cfg, stage)?);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    Corpus::load(&require(cfg, Stage::GenData)?.join("corpus"))
}

fn load_split(cfg: &RunConfig) -> Result<Split> {
    split_corpus(&load_corpus(cfg)?, &cfg.split)
}

fn load_retrieval(cfg: &RunConfig) -> Result<(RetrievalModel, MotionBase)> {
    let dir = require(cfg, Stage::TrainRetrieval)?;
    Ok((RetrievalModel::load(&dir.join("model.exgt"), &cfg.retrieval)?, load_base(&dir.join("base.exgb"))?))
}

fn load_diffusion(cfg: &RunConfig) -> Result<DiffusionModel> {
    let dir = require(cfg, Stage::TrainDiffusion)?;
    DiffusionModel::load(&dir.join("model.exgt"), &cfg.diffusion, cfg.retrieval.embedding_dim)
}

fn gen_data(cfg: &RunConfig, w: &StageWriter) -> Result<()> {
    generate_corpus(&cfg.corpus)?.save(&w.path("corpus"))
}

#[derive(Serialize, Deserialize)]
struct SplitIds {
    train: Vec<u64>,
    val: Vec<u64>,
    test: Vec<u64>,
}

fn build_base_stage(cfg: &RunConfig, w: &StageWriter) -> Result<()> {
    let split = load_split(cfg)?;
    let segments = segment_clips(&split.train, &SyntheticAligner, &cfg.segments)?;
    let provenance = BaseProvenance {
        seed: cfg.corpus.seed,
        split: "train".into(),
        ratios: cfg.split,
        motif_count: cfg.corpus.motif_count,
        clip_ids: Split::ids(&split.train),
    };
    save_base(&build_base(segments, provenance)?, &w.path("base.exgb"))?;
    w.write_json(
        "split.json",
        &SplitIds { train: Split::ids(&split.train), val: Split::ids(&split.val), test: Split::ids(&split.test) },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallSummary {
    pub queries: usize,
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
}

fn train_retrieval_stage(cfg: &RunConfig, w: &StageWriter) -> Result<()> {
    let base_dir = require(cfg, Stage::BuildBase)?;
    let mut base = load_base(&base_dir.join("base.exgb"))?;
    let trained = train_retrieval(base.segments(), &cfg.retrieval, cfg.seed)?;
    trained.model.save(&w.path("model.exgt"))?;
    w.write_json("log.json", &trained.log)?;
    embed_base(&trained.model, &mut base)?;
    save_base(&base, &w.path("base.exgb"))?;

    let split = load_split(cfg)?;
    let queries = segment_clips(&split.test, &SyntheticAligner, &cfg.segments)?;
    if queries.is_empty() {
        return Ok(());
    }
    let recall = recall_at_k(&trained.model, &base, &queries, &RECALL_KS)?;
    w.write_json("recall.json", &RecallSummary { queries: queries.len(), ks: RECALL_KS.to_vec(), recall })?;

    let audio: Vec<Tensor> = queries.iter().map(|s| s.audio.to_matrix()).collect();
    let q = trained.model.audio_global(&audio.iter().collect::<Vec<_>>())?;
    let mut records = Vec::new();
    for (i, query) in queries.iter().enumerate() {
        for (rank, hit) in retrieve_topk(q.row(i), &base, 5)?.into_iter().enumerate() {
            let seg = base.segment(hit.segment_id).expect("hit from base");
            let kf = locate_keyframe(&trained.model, &audio[i], &seg.motion)?;
            records.push(RetrievalRecord {
                query_id: query.id,
                rank: rank + 1,
                segment_id: hit.segment_id,
                score: hit.score,
                keyframe_index: kf.index,
            });
        }
    }
    write_results_jsonl(&w.path("results.jsonl"), &records)
}

/// Raw motion and per-frame audio embeddings of a clip.
pub fn clip_context(model: &RetrievalModel, clip: &Clip) -> Result<ClipContext> {
    Ok(ClipContext { motion: clip.motion.to_matrix(), audio: model.audio_frames(&clip.audio.to_matrix())? })
}

fn train_diffusion_stage(cfg: &RunConfig, w: &StageWriter) -> Result<()> {
    let split = load_split(cfg)?;
    let (model, _) = load_retrieval(cfg)?;
    let clips = split.train.iter().map(|c| clip_context(&model, c)).collect::<Result<Vec<_>>>()?;
    let joints = split.train.first().ok_or_else(|| Error::invalid("empty training split"))?.motion.joints;
    let trained = train_diffusion(&clips, joints, &cfg.diffusion, cfg.seed)?;
    trained.model.save(&w.path("model.exgt"))?;
    w.write_json("log.json", &trained.log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub clip_id: u64,
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedKeyframe {
    pub segment_id: u64,
    pub score: f64,
    pub keyframe_index: usize,
    pub keyframe_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRecord {
    pub name: String,
    /// Controlled frames per window.
    pub controlled: Vec<Vec<usize>>,
    pub retrieved: Vec<Option<RetrievedKeyframe>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisIndex {
    pub frames: usize,
    pub guidance_scale: f64,
    pub windows: Vec<Window>,
    /// Sampling seed per window, shared across conditions.
    pub seeds: Vec<u64>,
    pub conditions: Vec<ConditionRecord>,
}

/// Non-overlapping windows of `n` frames over `clips`, at most `max`.
pub fn windows_of(clips: &[Clip], n: usize, max: usize) -> Vec<Window> {
    let mut out = Vec::new();
    for c in clips {
        let mut start = 0;
        while start + n <= c.motion.frames && out.len() < max {
            out.push(Window { clip_id: c.id, start });
            start += n;
        }
    }
    out
}

/// Sampling seed of a window, shared by all conditions.
pub fn window_seed(seed: u64, w: &Window) -> u64 {
    splitmix64(seed ^ splitmix64((w.clip_id << 32) ^ w.start as u64))
}

fn synthesis_clips(cfg: &RunConfig, corpus: &Corpus) -> Result<Vec<Clip>> {
    match cfg.synthesis.clip {
        Some(id) => Ok(vec![corpus
            .clip(id)
            .cloned()
            .ok_or_else(|| Error::Config(format!("synthesis.clip: no clip {id} in the corpus")))?]),
        None => Ok(split_corpus(corpus, &cfg.split)?.test),
    }
}

fn synthesize(cfg: &RunConfig, w: &StageWriter) -> Result<()> {
    let corpus = load_corpus(cfg)?;
    let (retrieval, base) = load_retrieval(cfg)?;
    let diffusion = load_diffusion(cfg)?;
    let conditions = parse_control(&cfg.synthesis.control)?;
    let clips = synthesis_clips(cfg, &corpus)?;
    let n = cfg.diffusion.frames;
    let windows = windows_of(&clips, n, cfg.synthesis.max_windows);
    if windows.is_empty() {
        return Err(Error::invalid(format!("no clip has a full window of {n} frames")));
    }
    let contexts: BTreeMap<u64, ClipContext> =
        clips.iter().map(|c| Ok((c.id, clip_context(&retrieval, c)?))).collect::<Result<_>>()?;
    let joints = clips[0].motion.joints;
    let features = clips[0].motion.features;
    let mut mask_rng = rng::seeded(0);

    let mut records = Vec::new();
    for cond in &conditions {
        let mut requests = Vec::with_capacity(windows.len());
        let mut record = ConditionRecord { name: cond.name(), controlled: Vec::new(), retrieved: Vec::new() };
        for win in &windows {
            let ctx = &contexts[&win.clip_id];
            let gt = ctx.motion.slice_rows(win.start, win.start + n);
            let audio = ctx.audio.slice_rows(win.start, win.start + n);
            let (poses, frames, retrieved) = match cond {
                ControlCondition::Frames(_) => (gt, cond.frames(n), None),
                ControlCondition::Retrieval => {
                    let clip = corpus.clip(win.clip_id).expect("window clip");
                    let raw_audio = clip.audio.to_matrix().slice_rows(win.start, win.start + n);
                    let q = retrieval.audio_global(&[&raw_audio])?;
                    let hit = retrieve_topk(q.row(0), &base, 1)?.remove(0);
                    let seg = base.segment(hit.segment_id).expect("hit from base");
                    let kf = locate_keyframe(&retrieval, &raw_audio, &seg.motion)?;
                    let l = kf.index.min(n - 1);
                    let r = cfg.diffusion.keyframe_radius as isize;
                    let mut poses = Tensor::zeros(&[n, joints * features]);
                    let mut frames = Vec::new();
                    for d in -r..=r {
                        let (f, src) = (l as isize + d, kf.index as isize + d);
                        if f < 0 || f >= n as isize || src < 0 || src >= seg.motion.frames as isize {
                            continue;
                        }
                        poses.row_mut(f as usize).copy_from_slice(seg.motion.frame(src as usize));
                        frames.push(f as usize);
                    }
                    let info = RetrievedKeyframe {
                        segment_id: hit.segment_id,
                        score: hit.score,
                        keyframe_index: kf.index,
                        keyframe_score: kf.score,
                    };
                    (poses, frames, Some(info))
                }
            };
            let condition = if frames.is_empty() {
                None
            } else {
                let mask = make_mask(&MaskKind::Frame { frames: frames.clone() }, n, joints, features, &mut mask_rng)?;
                Some(Condition::new(&poses, mask, Some(audio.clone()))?)
            };
            requests.push(SampleRequest { frames: n, audio: Some(audio), condition, seed: window_seed(cfg.seed, win) });
            record.controlled.push(frames);
            record.retrieved.push(retrieved);
        }
        let outputs = diffusion.sample(&requests, cfg.diffusion.guidance_scale)?;
        let mut ck = Checkpoint::new();
        for (i, o) in outputs.into_iter().enumerate() {
            ck.push(format!("window{i}"), o);
        }
        ck.save(&w.path(&format!("{}.exgt", cond.name())))?;
        records.push(record);
    }
    let seeds = windows.iter().map(|win| window_seed(cfg.seed, win)).collect();
    let index =
        SynthesisIndex { frames: n, guidance_scale: cfg.diffusion.guidance_scale, windows, seeds, conditions: records };
    w.write_json("synthesis.json", &index)
}

/// Generated windows of one condition, in window order.
pub fn load_condition(dir: &Path, name: &str, count: usize) -> Result<Vec<Tensor>> {
    let ck = Checkpoint::load(&dir.join(format!("{name}.exgt")))?;
    (0..count).map(|i| ck.require(&format!("window{i}")).cloned()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub condition: String,
    pub fgd: f64,
    pub bc: f64,
    pub diversity: f64,
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
    pub n_gen: usize,
    pub n_ref: usize,
    pub config_hash: String,
}

/// Method label in the control table.
pub const METHOD: &str = "exges";

fn evaluate_stage(cfg: &RunConfig, w: &StageWriter) -> Result<()> {
    let corpus = load_corpus(cfg)?;
    let synth_dir = require(cfg, Stage::Synthesize)?;
    let index: SynthesisIndex = serde_json::from_slice(&std::fs::read(synth_dir.join("synthesis.json"))?)?;
    let retrieval = match cfg.metrics.feature_mode {
        FeatureMode::Encoder => Some(load_retrieval(cfg)?.0),
        FeatureMode::RawStats => None,
    };
    let extractor = retrieval.as_ref().map_or(FeatureExtractor::RawStats, FeatureExtractor::Encoder);
    let n = index.frames;
    let mut truths = Vec::with_capacity(index.windows.len());
    let mut beats = Vec::with_capacity(index.windows.len());
    for win in &index.windows {
        let clip = corpus.clip(win.clip_id).ok_or_else(|| Error::Format(format!("unknown clip {}", win.clip_id)))?;
        truths.push(clip.motion.to_matrix().slice_rows(win.start, win.start + n));
        let fps = clip.motion.frame_rate;
        beats.push(audio_beats(&clip.alignment, win.start as f64 / fps, (win.start + n) as f64 / fps)?);
    }
    let format = MotionFormat { joints: corpus.clips[0].motion.joints, frame_rate: corpus.clips[0].motion.frame_rate };
    let config_hash = cfg.hash()?;
    let reference: Vec<&Tensor> = truths.iter().collect();

    let mut comparison = Vec::new();
    let mut control = Vec::new();
    let mut per_frame: Vec<(String, Vec<f64>)> = Vec::new();
    for record in &index.conditions {
        let generated = load_condition(&synth_dir, &record.name, index.windows.len())?;
        if generated.len() != truths.len() {
            return Err(Error::invalid(format!("condition {} has {} samples", record.name, generated.len())));
        }
        let samples: Vec<EvalSample> = generated
            .into_iter()
            .zip(&truths)
            .zip(&beats)
            .map(|((g, t), b)| EvalSample { generated: g, ground_truth: t.clone(), audio_beats: b.clone() })
            .collect();
        let report = evaluate(&samples, &reference, extractor, format, &cfg.metrics, &config_hash)?;
        w.write(&format!("metrics_{}.json", record.name), report.to_json()?.as_bytes())?;
        let mut curve = vec![0.0; n];
        for s in &samples {
            for (f, v) in curve.iter_mut().enumerate() {
                *v += mpjpe(&s.generated.slice_rows(f, f + 1), &s.ground_truth.slice_rows(f, f + 1))? / samples.len() as f64;
            }
        }
        per_frame.push((record.name.clone(), curve));
        if let Some(k) = record.name.strip_prefix("frames").and_then(|k| k.parse().ok()) {
            control.push(ControlRow {
                method: METHOD.into(),
                frames: k,
                pa_mpjpe_mm: report.pa_mpjpe_mm,
                mpjpe_mm: report.mpjpe_mm,
            });
        }
        let MetricsReport { fgd, bc, diversity, mpjpe_mm, pa_mpjpe_mm, n_gen, n_ref, config_hash } = report;
        comparison.push(ComparisonRow {
            condition: record.name.clone(),
            fgd,
            bc,
            diversity,
            mpjpe_mm,
            pa_mpjpe_mm,
            n_gen,
            n_ref,
            config_hash,
        });
    }
    w.write("comparison.csv", to_csv(&comparison)?.as_bytes())?;
    w.write("control.csv", to_csv(&control)?.as_bytes())?;

    let mut out = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
    let mut header = vec!["frame".to_string()];
    header.extend(per_frame.iter().map(|(name, _)| name.clone()));
    out.write_record(&header).map_err(csv_err)?;
    for f in 0..n {
        let mut row = vec![f.to_string()];
        row.extend(per_frame.iter().map(|(_, c)| c[f].to_string()));
        out.write_record(&row).map_err(csv_err)?;
    }
    let bytes = out.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
    w.write("per_frame_mpjpe.csv", &bytes)
}

fn report(cfg: &RunConfig, w: &StageWriter) -> Result<()> {
    let rdir = require(cfg, Stage::TrainRetrieval)?;
    let ddir = require(cfg, Stage::TrainDiffusion)?;
    let edir = require(cfg, Stage::Evaluate)?;
    let rlog: TrainLog = serde_json::from_slice(&std::fs::read(rdir.join("log.json"))?)?;
    let dlog: DiffusionLog = serde_json::from_slice(&std::fs::read(ddir.join("log.json"))?)?;
    if rlog.steps.is_empty() || dlog.losses.is_empty() {
        return Err(Error::invalid("training logs are empty"));
    }

    let rseries = vec![("loss".to_string(), rlog.steps.iter().map(|s| (s.step as f64, s.loss)).collect())];
    w.write("retrieval_loss.svg", line_chart("Retrieval loss", "step", &rseries)?.as_bytes())?;
    w.write("retrieval_loss.csv", to_csv(&rlog.steps)?.as_bytes())?;
    let dseries = vec![("loss".to_string(), dlog.losses.iter().enumerate().map(|(i, &l)| (i as f64, l)).collect())];
    w.write("diffusion_loss.svg", line_chart("Diffusion loss", "step", &dseries)?.as_bytes())?;
    #[derive(Serialize)]
    struct LossRow {
        step: usize,
        loss: f64,
    }
    let rows: Vec<LossRow> = dlog.losses.iter().enumerate().map(|(step, &loss)| LossRow { step, loss }).collect();
    w.write("diffusion_loss.csv", to_csv(&rows)?.as_bytes())?;
    if !rlog.final_similarity.is_empty() {
        w.write("similarity_heatmap.svg", heatmap("Final batch a2m similarity", &rlog.final_similarity)?.as_bytes())?;
    }

    let text = std::fs::read_to_string(edir.join("per_frame_mpjpe.csv"))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Format(format!("csv: {e}")))?
        .iter()
        .skip(1)
        .map(str::to_string)
        .collect();
    let mut curves: Vec<(String, Vec<(f64, f64)>)> = names.into_iter().map(|n| (n, Vec::new())).collect();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Format(format!("csv: {e}")))?;
        let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(format!("per-frame csv: {e}")));
        let f = parse(&rec[0])?;
        for (i, c) in curves.iter_mut().enumerate() {
            c.1.push((f, parse(&rec[i + 1])?));
        }
    }
    w.write("per_frame_mpjpe.svg", line_chart("Per-frame MPJPE (mm)", "frame", &curves)?.as_bytes())
}

/// Directory a stage would write to, whether or not it exists.
pub fn output_dir(cfg: &RunConfig, stage: Stage) -> Result<PathBuf> {
    stage_dir(cfg, stage)
}
