use std::path::Path;

use serde::{Deserialize, Serialize};

use super::beats::{beat_consistency, BeatTrack, DEFAULT_BEAT_SIGMA_S};
use super::fgd::{extract_features, fgd, FeatureExtractor, FeatureMode};
use super::pose::{diversity, mpjpe, pa_mpjpe};
use crate::error::{Error, Result};
use crate::io_util::atomic_write;
use crate::numcore::Tensor;

/// Space in which diversity is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiversitySpace {
    Features,
    Poses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub feature_mode: FeatureMode,
    pub diversity_space: DiversitySpace,
    pub beat_sigma_s: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { feature_mode: FeatureMode::Encoder, diversity_space: DiversitySpace::Features, beat_sigma_s: DEFAULT_BEAT_SIGMA_S }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beat_sigma_s > 0.0) {
            return Err(Error::Config("metrics.beat_sigma_s must be positive".into()));
        }
        Ok(())
    }
}

/// A generated sequence with its ground truth and the audio beats it was
/// generated for.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub generated: Tensor,
    pub ground_truth: Tensor,
    pub audio_beats: BeatTrack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fgd: f64,
    pub bc: f64,
    pub diversity: f64,
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
    pub n_gen: usize,
    pub n_ref: usize,
    pub config_hash: String,
}

/// Shape of the motion data being evaluated.
#[derive(Debug, Clone, Copy)]
pub struct MotionFormat {
    pub joints: usize,
    pub frame_rate: f64,
}

/// Scores `samples` against the `reference` set. BC averages over samples
/// with at least one audio beat and one kinematic beat (0 if none has).
pub fn evaluate(
    samples: &[EvalSample],
    reference: &[&Tensor],
    extractor: FeatureExtractor,
    format: MotionFormat,
    cfg: &MetricsConfig,
    config_hash: &str,
) -> Result<MetricsReport> {
    cfg.validate()?;
    if reference.is_empty() {
        return Err(Error::invalid("reference split is empty"));
    }
    if samples.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 generated samples, got {}", samples.len())));
    }
    let generated: Vec<&Tensor> = samples.iter().map(|s| &s.generated).collect();
    let gen_feats = extract_features(&generated, extractor)?;
    let ref_feats = extract_features(reference, extractor)?;

    let mut bcs = Vec::new();
    let (mut pe, mut pa) = (0.0, 0.0);
    for s in samples {
        pe += mpjpe(&s.generated, &s.ground_truth)?;
        pa += pa_mpjpe(&s.generated, &s.ground_truth)?;
        if s.audio_beats.is_empty() {
            continue;
        }
        if let Some(b) = beat_consistency(&s.audio_beats, &s.generated, format.joints, format.frame_rate, cfg.beat_sigma_s)? {
            bcs.push(b);
        }
    }
    let n = samples.len() as f64;
    let div = match cfg.diversity_space {
        DiversitySpace::Features => diversity(&gen_feats)?,
        DiversitySpace::Poses => {
            let w = generated[0].len();
            if generated.iter().any(|g| g.len() != w) {
                return Err(Error::shape("pose diversity needs equally sized samples"));
            }
            diversity(&Tensor::matrix(generated.len(), w, generated.iter().flat_map(|g| g.data().to_vec()).collect())?)?
        }
    };
    let report = MetricsReport {
        fgd: fgd(&gen_feats, &ref_feats)?.max(0.0),
        bc: if bcs.is_empty() { 0.0 } else { bcs.iter().sum::<f64>() / bcs.len() as f64 },
        diversity: div,
        mpjpe_mm: pe / n,
        pa_mpjpe_mm: pa / n,
        n_gen: samples.len(),
        n_ref: reference.len(),
        config_hash: config_hash.to_string(),
    };
    if [report.fgd, report.bc, report.diversity, report.mpjpe_mm, report.pa_mpjpe_mm].iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("metrics report".into()));
    }
    Ok(report)
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn csv_error(e: impl std::fmt::Display) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Header row plus one row per record.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    String::from_utf8(w.into_inner().map_err(csv_error)?).map_err(csv_error)
}

pub fn from_csv<T: serde::de::DeserializeOwned>(s: &str) -> Result<Vec<T>> {
    csv::Reader::from_reader(s.as_bytes()).deserialize().map(|r| r.map_err(csv_error)).collect()
}

pub fn reports_to_csv(reports: &[MetricsReport]) -> Result<String> {
    to_csv(reports)
}

pub fn reports_from_csv(s: &str) -> Result<Vec<MetricsReport>> {
    from_csv(s)
}

/// One row of the control-accuracy table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRow {
    #[serde(rename = "Method")]
    pub method: String,
    #[serde(rename = "Frame")]
    pub frames: usize,
    #[serde(rename = "PAMPJPE (mm)")]
    pub pa_mpjpe_mm: f64,
    #[serde(rename = "MPJPE (mm)")]
    pub mpjpe_mm: f64,
}

pub fn control_table_to_csv(rows: &[ControlRow]) -> Result<String> {
    to_csv(rows)
}

pub fn control_table_from_csv(s: &str) -> Result<Vec<ControlRow>> {
    from_csv(s)
}

/// Writes `<stem>.json` and `<stem>.csv`.
pub fn write_report(report: &MetricsReport, dir: &Path, stem: &str) -> Result<()> {
    atomic_write(&dir.join(format!("{stem}.json")), report.to_json()?.as_bytes())?;
    atomic_write(&dir.join(format!("{stem}.csv")), reports_to_csv(std::slice::from_ref(report))?.as_bytes())
}
