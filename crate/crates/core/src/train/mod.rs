//! Multi-task training: round-robin AEC, PSE and PSE-AEC mini-batches,
//! PLCPA loss, Adam, checkpoints.

mod batch;
mod loss;
mod optim;
mod trainer;

pub use batch::{
    eligible, make_minibatch, make_minibatch_with, next_task, task_name, BatchItem, BatchOptions, MiniBatch,
};
pub use loss::{plcpa_loss, plcpa_loss_grad, LossParams};
pub use optim::Adam;
pub use trainer::{
    batch_gradients, latest_checkpoint_path, loss_log_path, read_loss_log, scheduled_task, train, train_step,
    LossRecord, TaskPools, TrainConfig, Trainer,
};
