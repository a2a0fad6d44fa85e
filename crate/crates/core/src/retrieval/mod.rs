//! Cross-modal audio/motion retrieval: encoders, contrastive and matching
//! objectives with momentum distillation, and base search.

mod encoder;
mod loss;
mod momentum;
mod search;
mod train;

pub use encoder::{pool_global, stack, BoundParams, Encoder, EncoderParams, ItmHead, Normalizer};
pub use loss::{
    combine_losses, contrastive_loss, distillation_loss, dual_softmax, itm_loss, itm_pairs,
    one_hot_targets, sample_hard_negatives, total_loss, DualSoftmax,
};
pub use momentum::{ema_update, EmbeddingQueue, MomentumState};
pub use search::{
    best_frame, embed_base, locate_keyframe, recall_at_k, retrieve_topk, write_results_jsonl, Keyframe, RetrievalHit,
    RetrievalRecord,
};
pub use train::{
    build_loss, teacher_targets, train_retrieval, Batch, LossVars, Negatives, RetrievalModel,
    StepLog, TeacherTargets, TrainLog, TrainedRetrieval,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the objective combines its terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// `α·ζ_ITM + (1−α)·ζ_m`.
    Weighted,
    /// Contrastive loss against `(1−α)·one-hot + α·teacher` targets, plus `ζ_m`.
    Albef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub temperature: f64,
    pub queue_size: usize,
    pub momentum: f64,
    pub alpha: f64,
    pub embedding_dim: usize,
    pub hidden: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub clip_norm: Option<f64>,
    pub loss_mode: LossMode,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            temperature: 0.07,
            queue_size: 256,
            momentum: 0.995,
            alpha: 0.4,
            embedding_dim: 64,
            hidden: 64,
            batch_size: 32,
            steps: 20_000,
            learning_rate: 1e-3,
            clip_norm: Some(5.0),
            loss_mode: LossMode::Weighted,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("retrieval.{m}")));
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return bad("momentum must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.embedding_dim == 0 || self.hidden == 0 {
            return bad("embedding_dim and hidden must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}
