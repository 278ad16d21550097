//! Exact gradients, Adam, the epoch loop and checkpoints.

pub mod adam;
pub mod backprop;
pub mod checkpoint;
pub mod params;
pub mod trainer;

pub use adam::{adam_step, DecayMode, OptimizerState};
pub use backprop::{loss_and_gradients, loss_and_gradients_padded, LossAndGrad, PaddedBatch};
pub use checkpoint::{Checkpoint, OptimizerSnapshot};
pub use params::{AmdnModel, ModelConfig, ModelParams, TensorRole};
pub use trainer::{
    evaluate, initial_model, mean_inter_event_time, nll_totals, train, train_from, DataConfig,
    EpochRecord, EvalMetrics, TrainConfig, TrainOutcome,
};
