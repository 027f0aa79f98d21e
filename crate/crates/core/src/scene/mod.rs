//! Scenarios, the target-centric frame, map vectorization, augmentation,
//! synthetic data and dataset files.

mod augment;
mod io;
mod map;
mod normalize;
mod synth;
mod types;

pub use augment::{augment_scenario, flip_horizontal, mask_prefix, AugmentConfig};
pub use io::{read_dataset, read_dataset_from, write_dataset, write_dataset_to};
pub use map::{clip_segment, crop_and_vectorize_map, vectorize, MapVector, PolylineSet, DEFAULT_WINDOW_METERS};
pub use normalize::{denormalize_scenario, denormalize_trajectory, estimate_heading, normalize_scenario};
pub use synth::{generate_scenario, generate_synthetic_dataset, GeneratorConfig, JunctionMode};
pub use types::{Dataset, LaneTag, NormalizationFrame, Point, Polyline, Scenario, Split, Track};

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("scenario {id}: {reason}")]
    InvalidScenario { id: String, reason: String },
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing required field `{field}`")]
    Schema { line: usize, field: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
