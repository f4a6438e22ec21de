//! Discriminative training: loss, gradients, optimizer, batching and the
//! staged schedule.

pub mod adam;
pub mod batch;
pub mod grad;
pub mod loss;
pub mod schedule;

pub use adam::{AdamConfig, AdamState};
pub use batch::{sample_batch, sample_from_groups};
pub use grad::{GradientBundle, Trainable};
pub use loss::{bce_loss, bce_loss_grad, combined_loss};
pub use schedule::{
    multi_seed_train, train, DevSet, MultiSeedOutcome, SelectionMetric, Stage, TrainConfig,
    TrainLog, TrainOutcome,
};
