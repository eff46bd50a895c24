//! Two-head domain-adversarial model: shared feature extractor, class head,
//! and a domain head behind a gradient-reversal layer.

mod checkpoint;
mod grl;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MAGIC as CHECKPOINT_MAGIC};
pub use grl::{grl_backward, grl_forward, lambda_at, GrlConfig};
pub use model::{
    argmax, compute_gradients, dann_forward, dann_loss, predict, predict_domain, source_only_step, train_step,
    Backbone, DannForward, DannModel, DomainBatch, LossBreakdown, NUM_CLASSES, NUM_DOMAINS, SOURCE_DOMAIN,
    TARGET_DOMAIN,
};
pub use train::{epoch_plan, fit, fit_source_only, fit_with, EpochReport, TrainReport};

pub mod checkpoint_format {
    pub use super::checkpoint::{decode, encode};
}
