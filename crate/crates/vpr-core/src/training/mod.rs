//! Losses, distillation weighting, and the two training stages.

pub mod gradcheck;
mod losses;
mod optim;
mod stage;
mod step;
mod weights;

pub use losses::{kd_loss, kd_loss_grad, triplet_loss, triplet_loss_grad, TripletLossConfig};
pub use optim::{cosine_lr, AdamW};
pub use stage::{
    fov_training_pairs, train_baseline, train_stage1, train_stage2, train_val_split,
    training_records, BaselineMode, BranchKind, MetricsRow, ModelSelection, Stage2Options,
    StageConfig, TrainContext, TrainOutcome,
};
pub use step::{
    total_loss, triplet_total_backward, triplet_total_forward, KdTargets, LossParts, Triplet,
    TripletInputs,
};
pub use weights::{weight_phi, WeightKind, WeightScheme, WeightTable};
