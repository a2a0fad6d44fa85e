//! Masked conditional diffusion over pose sequences.

mod denoiser;
mod mask;
mod model;
mod schedule;

pub use denoiser::{time_features, Denoiser, ResBlock, TIME_FEATURES};
pub use mask::{
    apply_mask_composition, curriculum_mask_rate, draw_condition_dropout, make_mask, training_mask_sampler,
    Curriculum, Dropped, MaskKind, MaskSamplerConfig, MaskSpec,
};
pub use model::{
    diffusion_loss, sample, stochastic_condition_dropout, train_diffusion, ClipContext, Composition, Condition,
    DiffusionBatch, DiffusionConfig, DiffusionLog, DiffusionModel, SampleRequest, TrainedDiffusion,
};
pub use schedule::{forward_diffuse, NoiseSchedule};
