//! Minimal deterministic sequence-model engine: the fixed LSTM-stack
//! architecture, its two training losses (plus MSE for the baseline
//! harness), Adam, early-stopped mini-batch training, and binary
//! checkpoints. Everything runs in f64 and reproduces bit-for-bit from a
//! seed, independent of thread count.

pub mod adam;
pub mod checkpoint;
pub mod loss;
pub mod matrix;
pub mod model;
pub mod train;

pub use adam::{clip_grad_norm, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use loss::{bce_loss, mae_loss, mse_loss, LossKind};
pub use matrix::Matrix;
pub use model::{
    finite_difference_check, init_params, sample_gradient_check_case, ForwardCache,
    GradCheckReport, Head, ModelParams, ModelSpec, ParamLayout,
};
pub use train::{
    evaluate_loss, train, train_with_validation, EarlyStopper, EpochStats, TrainConfig,
    TrainOutcome, TrainSample,
};
