//! Evaluation metrics: FGD, beat consistency, diversity, MPJPE and PA-MPJPE.
//!
//! Positions are meters internally; pose errors are reported in millimeters.

mod beats;
mod fgd;
mod pose;
mod report;

pub use beats::{
    audio_beats, beat_consistency, beat_consistency_tracks, joint_speed, motion_beats, BeatTrack, DEFAULT_BEAT_SIGMA_S,
};
pub use fgd::{
    extract_features, fgd, frechet_distance, FeatureDistribution, FeatureExtractor, FeatureMode, COVARIANCE_RIDGE,
};
pub use pose::{diversity, mpjpe, pa_mpjpe, procrustes, MM_PER_M};
pub use report::{
    control_table_from_csv, control_table_to_csv, evaluate, from_csv, reports_from_csv, reports_to_csv, to_csv, write_report, ControlRow,
    DiversitySpace, EvalSample, MetricsConfig, MetricsReport, MotionFormat,
};
