use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::scene::DEFAULT_WINDOW_METERS;

/// Network sizes. `k` and `m` fix the proposal count and region count a
/// checkpoint is trained for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub social_decoder_layers: usize,
    pub heads: usize,
    pub k: usize,
    pub m: usize,
    pub history_steps: usize,
    pub future_steps: usize,
    /// Feed-forward width inside transformer layers, as a multiple of `hidden_dim`.
    pub ffn_multiplier: usize,
    /// Hidden width of the polyline, summary, generator and selector MLPs.
    pub mlp_hidden: usize,
    /// Coordinates are divided by this on input and generator outputs
    /// multiplied by it.
    pub coord_scale: f64,
    pub map_window: f64,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            encoder_layers: 2,
            decoder_layers: 2,
            social_decoder_layers: 4,
            heads: 2,
            k: 36,
            m: 6,
            history_steps: 20,
            future_steps: 30,
            ffn_multiplier: 2,
            mlp_hidden: 128,
            coord_scale: 10.0,
            map_window: DEFAULT_WINDOW_METERS,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("hidden_dim", self.hidden_dim),
            ("heads", self.heads),
            ("k", self.k),
            ("m", self.m),
            ("history_steps", self.history_steps),
            ("future_steps", self.future_steps),
            ("ffn_multiplier", self.ffn_multiplier),
            ("mlp_hidden", self.mlp_hidden),
            ("social_decoder_layers", self.social_decoder_layers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.hidden_dim % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "hidden_dim {} is not divisible by {} heads",
                self.hidden_dim, self.heads
            )));
        }
        if self.k % self.m != 0 {
            return Err(ModelError::Config(format!("k {} is not divisible by m {}", self.k, self.m)));
        }
        if !(self.coord_scale > 0.0 && self.coord_scale.is_finite()) {
            return Err(ModelError::Config("coord_scale must be positive".into()));
        }
        if !(self.map_window > 0.0 && self.map_window.is_finite()) {
            return Err(ModelError::Config("map_window must be positive".into()));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(ModelError::Config("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }
}
