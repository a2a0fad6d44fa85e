use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusParams, SegmentRules, SplitRatios};
use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};
use crate::io_util::sha256_hex;
use crate::metrics::MetricsConfig;
use crate::retrieval::RetrievalConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    /// Comma-separated conditions, e.g. `retrieval,frames:0..3`.
    pub control: String,
    /// Restrict synthesis to one test clip.
    pub clip: Option<u64>,
    /// Upper bound on evaluated test windows.
    pub max_windows: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self { control: "retrieval,frames:0..3".into(), clip: None, max_windows: 64 }
    }
}

/// Everything a run depends on. The output directory is excluded from the
/// hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub corpus: CorpusParams,
    pub split: SplitRatios,
    pub segments: SegmentRules,
    pub retrieval: RetrievalConfig,
    pub diffusion: DiffusionConfig,
    pub synthesis: SynthesisConfig,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out_dir: PathBuf::from("out"),
            corpus: CorpusParams::default(),
            split: SplitRatios::default(),
            segments: SegmentRules::default(),
            retrieval: RetrievalConfig::default(),
            diffusion: DiffusionConfig::default(),
            synthesis: SynthesisConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

fn config_err(e: impl fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |section: &str, r: Result<()>| {
            r.map_err(|e| match e {
                Error::Config(m) => Error::Config(m),
                other => Error::Config(format!("{section}: {other}")),
            })
        };
        wrap("corpus", self.corpus.validate())?;
        wrap("split", self.split.validate())?;
        if self.segments.min_duration_s > self.segments.max_duration_s || self.segments.min_tokens > self.segments.max_tokens
        {
            return Err(Error::Config("segments: minimums exceed maximums".into()));
        }
        wrap("retrieval", self.retrieval.validate())?;
        wrap("diffusion", self.diffusion.validate())?;
        wrap("metrics", self.metrics.validate())?;
        parse_control(&self.synthesis.control)?;
        if self.synthesis.max_windows < 2 {
            return Err(Error::Config("synthesis.max_windows must be at least 2".into()));
        }
        Ok(())
    }

    /// Sets a dotted key to a TOML literal; bare words are taken as strings.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, raw) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{spec}` is not KEY=VALUE")))?;
        let key = key.trim();
        let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.trim().to_string()),
        };
        let mut root = toml::Value::try_from(&*self).map_err(config_err)?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("override key `{key}`: `{part}` is not a section")))?;
            if i + 1 == parts.len() {
                table.insert(part.to_string(), value.clone());
                break;
            }
            node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        }
        let updated: Self = root.try_into().map_err(|e| Error::Config(format!("override `{spec}`: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    /// Canonical JSON (sorted keys) of the config without `out_dir`.
    pub fn canonical_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        v.as_object_mut().expect("object").remove("out_dir");
        Ok(serde_json::to_string(&v)?)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.canonical_json()?.as_bytes()))
    }
}

/// One synthesis condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlCondition {
    /// Retrieved keyframe at the index it was located at.
    Retrieval,
    /// `k` ground-truth frames at evenly spaced positions.
    Frames(usize),
}

impl ControlCondition {
    pub fn name(&self) -> String {
        match self {
            ControlCondition::Retrieval => "retrieval".into(),
            ControlCondition::Frames(k) => format!("frames{k}"),
        }
    }

    /// Controlled frame indices for a window of `n` frames.
    pub fn frames(&self, n: usize) -> Vec<usize> {
        match self {
            ControlCondition::Retrieval => Vec::new(),
            ControlCondition::Frames(k) => (0..*k).map(|i| (i + 1) * n / (k + 1)).collect(),
        }
    }
}

impl fmt::Display for ControlCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for ControlCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_control(s)?.into_iter().next().ok_or_else(|| Error::Config("empty control".into()))
    }
}

/// Parses `retrieval`, `none`, `frames:K` and `frames:A..B` (inclusive),
/// comma-separated, without duplicates.
pub fn parse_control(spec: &str) -> Result<Vec<ControlCondition>> {
    let bad = |m: String| Error::Config(format!("synthesis.control: {m}"));
    let mut out = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match item {
            "retrieval" => out.push(ControlCondition::Retrieval),
            "none" => out.push(ControlCondition::Frames(0)),
            _ => {
                let arg = item.strip_prefix("frames:").ok_or_else(|| bad(format!("unknown condition `{item}`")))?;
                let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad(format!("bad frame count `{s}`")));
                match arg.split_once("..") {
                    Some((a, b)) => {
                        let (a, b) = (num(a)?, num(b)?);
                        if a > b {
                            return Err(bad(format!("empty range `{arg}`")));
                        }
                        out.extend((a..=b).map(ControlCondition::Frames));
                    }
                    None => out.push(ControlCondition::Frames(num(arg)?)),
                }
            }
        }
    }
    if out.is_empty() {
        return Err(bad("no conditions".into()));
    }
    for (i, c) in out.iter().enumerate() {
        if out[..i].contains(c) {
            return Err(bad(format!("duplicate condition `{c}`")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_specs() {
        use ControlCondition::*;
        assert_eq!(parse_control("retrieval,frames:0..3").unwrap(), vec![Retrieval, Frames(0), Frames(1), Frames(2), Frames(3)]);
        assert_eq!(parse_control(" none , frames:2").unwrap(), vec![Frames(0), Frames(2)]);
        for bad in ["", "frames:3..1", "frames:x", "keyframes", "none,frames:0"] {
            assert!(matches!(parse_control(bad), Err(Error::Config(_))), "{bad}");
        }
        assert_eq!(Frames(3).frames(60), vec![15, 30, 45]);
        assert_eq!(Frames(1).frames(60), vec![30]);
    }

    #[test]
    fn overrides_and_hash() {
        let mut c = RunConfig::default();
        let h0 = c.hash().unwrap();
        c.apply_override("retrieval.steps=3000").unwrap();
        c.apply_override("retrieval.loss_mode=albef").unwrap();
        c.apply_override("synthesis.clip=4").unwrap();
        assert_eq!(c.retrieval.steps, 3000);
        assert_eq!(c.synthesis.clip, Some(4));
        assert_ne!(c.hash().unwrap(), h0);
        let mut d = c.clone();
        d.out_dir = "elsewhere".into();
        assert_eq!(d.hash().unwrap(), c.hash().unwrap());
        for bad in ["retrieval.nope=1", "retrieval.steps", "retrieval.alpha=2.0", "seed.x=1", "split.train=0.5"] {
            assert!(matches!(c.clone().apply_override(bad), Err(Error::Config(_))), "{bad}");
        }
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_sections_use_defaults() {
        let c = RunConfig::from_toml("seed = 3\n[retrieval]\nsteps = 10\n[diffusion.masks]\nconditioned = 0.5\n").unwrap();
        assert_eq!((c.seed, c.retrieval.steps, c.retrieval.batch_size), (3, 10, 32));
        assert_eq!(c.diffusion.masks.conditioned, 0.5);
        assert_eq!(c.diffusion.masks.kind_weights, [0.4, 0.3, 0.3]);
        assert!(matches!(RunConfig::from_toml("[retrieval]\ntypo = 1\n"), Err(Error::Config(_))));
    }
}
