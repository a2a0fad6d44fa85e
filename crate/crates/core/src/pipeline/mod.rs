//! Stage orchestration with content-addressed outputs.
//!
//! Each stage writes to `<out>/<stage>/<hash>/`, where the hash covers the
//! config fields the stage reads and its upstream stage hash. Every stage
//! directory carries a `manifest.json` listing its files and their SHA-256.

mod config;
mod plot;
mod stages;
mod store;

pub use config::{parse_control, ControlCondition, RunConfig, SynthesisConfig};
pub use plot::{heatmap, line_chart};
pub use stages::{
    clip_context, load_condition, output_dir, run_all, run_stage, window_seed, windows_of, ComparisonRow,
    ConditionRecord, RecallSummary, RetrievedKeyframe, StageOutcome, SynthesisIndex, Window, METHOD, RECALL_KS,
};
pub use store::{
    require, stage_dir, stage_hash, ArtifactEntry, RunManifest, Stage, StageWriter, MANIFEST, TOOL_VERSION,
};
