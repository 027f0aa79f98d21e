//! The stacked-transformer predictor: motion extractor, map aggregator,
//! social constructor and per-layer trajectory/score heads.

mod checkpoint;
mod config;
mod layers;
mod network;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use config::ModelConfig;
pub use layers::{DecoderLayer, EncoderLayer, Memory};
pub use network::{ForwardOutput, HeadVars, Model, PredictionHead};

use serde::{Deserialize, Serialize};

use crate::numerics::NumericsError;
use crate::scene::Point;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model config error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// K trajectories of T points (meters, normalized frame) and their raw scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub trajectories: Vec<Vec<Point>>,
    pub scores: Vec<f64>,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn endpoint(&self, i: usize) -> Point {
        *self.trajectories[i].last().expect("non-empty trajectory")
    }
}
