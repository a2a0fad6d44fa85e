//! Retrieval-enhanced conditional diffusion for audio-driven gesture synthesis.
//!
//! The crate is organized bottom-up:
//!
//! - [`numcore`]: tensors, reverse-mode autodiff, Adam, checkpoints.
//! - [`corpus`]: synthetic audio/motion corpus, token-aligned segmentation, motion base.
//! - [`retrieval`]: contrastive audio-motion encoders with hard negatives and
//!   momentum distillation, top-k retrieval and keyframe localization.
//! - [`diffusion`]: mask-composed DDPM gesture generator with control masks.
//! - [`metrics`]: FGD, beat consistency, diversity, MPJPE and PA-MPJPE.
//! - [`pipeline`]: configuration, run manifests and the CLI stages.

pub mod corpus;
pub mod diffusion;
pub mod error;
pub mod io_util;
pub mod metrics;
pub mod numcore;
pub mod pipeline;
pub mod retrieval;
pub mod rng;

pub use error::{Error, Result};
