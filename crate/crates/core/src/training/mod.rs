//! Proposal selection, losses and the training loop.

mod loss;
mod select;
mod trainer;

pub use loss::{classification_loss, confidence_loss, region_probabilities, regression_loss, total_loss, DEFAULT_HUBER_DELTA};
pub use select::{closest_endpoint, select_supervised_proposals, Strategy};
pub use trainer::{record_losses, EpochReport, LayerLoss, LossReport, TrainConfig, Trainer};

use crate::model::ModelError;
use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training config error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("training diverged on scenario {id}: {message}")]
    Divergence { id: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
