//! TabNet-style tabular classification with sparse, inspectable feature masks.
//!
//! The crate covers the full model lifecycle at desk scale:
//!
//! - [`sparsemax`]: projection onto the probability simplex used for masks.
//! - [`TrainedModel::forward`]: batched inference returning probabilities plus
//!   per-step masks and aggregated feature importance for every sample.
//! - [`train`]: seeded mini-batch training with a mask-entropy sparsity penalty
//!   and early stopping.
//! - [`save_model`] / [`load_model`]: versioned, checksummed binary format.
//!
//! Inference normalizes with frozen statistics, so a sample's output is
//! bitwise independent of the batch it is scored in.

mod autodiff;
mod config;
mod error;
mod matrix;
pub mod metrics;
mod model;
mod serialize;
mod sparsemax;
mod train;

pub use config::ModelConfig;
pub use error::{LoadError, Result, TabNetError};
pub use matrix::{FeatureMatrix, Matrix};
pub use model::{argmax, Explanation, InferenceNorm, NormStats, PredictionOutput, TrainedModel};
pub use serialize::{load_model, save_model, FORMAT_VERSION, MAGIC};
pub use sparsemax::sparsemax;
pub use train::{train, train_with_report, EpochRecord, TrainingReport, TrainingSchedule};
