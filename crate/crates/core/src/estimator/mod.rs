//! Windowed capacitance → relative-pose regression.

mod metrics;
mod mlp;
mod model_io;
mod train;
mod window;

pub use metrics::{abs_errors, pose_errors, PoseErrorSummary};
pub use mlp::{Gradients, Layer, MlpModel, POSE_NET_DIMS};
pub use model_io::{load_model, model_from_bytes, model_to_bytes, save_model, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use train::{evaluate_mse, feature_stats, mlp_train, split_trajectories, write_loss_csv, EpochLoss, TrainConfig, LOSS_CSV_HEADER};
pub use window::{window_dataset, window_series, Series, WindowSample, WindowSet};

use thiserror::Error;

/// Frames per window (0.5 s at 100 Hz).
pub const WINDOW_LEN: usize = 50;
/// Input width of the pose network.
pub const INPUT_DIM: usize = WINDOW_LEN * crate::sensor::ELECTRODE_COUNT;
/// Output width of the pose network.
pub const OUTPUT_DIM: usize = 4;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("series of {len} frames is shorter than the window length {h}")]
    SeriesTooShort { len: usize, h: usize },
    #[error("frame and pose series differ in length ({frames} vs {poses})")]
    LengthMismatch { frames: usize, poses: usize },
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("input has {got} values, network expects {expected}")]
    InputWidth { got: usize, expected: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("loss became NaN at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EstimatorError>;
