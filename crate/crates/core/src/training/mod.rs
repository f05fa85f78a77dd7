//! Warm start (KNN fill, adversarial pretraining) and the alternating
//! optimization over latents, missing values and network weights.

mod adam;
mod config;
mod egm;
mod fit;
mod knn;
mod persist;

pub use adam::{adam_step, clip_by_global_norm, Adam, AdamBuffers, RowAdam, BETA1, BETA2, EPSILON};
pub use config::{EgmConfig, TrainConfig};
pub use egm::{egm_pretrain, EgmOutcome, CYCLE_WEIGHT};
pub use fit::{fit, fit_with, EpochLog, Model, Optimizers, TrainState};
pub use knn::{knn_impute_init, knn_impute_with, nan_euclidean, KNN_NEIGHBORS};
pub use persist::{terminal_from_checkpoint, Terminal};

pub(crate) use config::parse_value;
pub(crate) use fit::InnerProblem;
