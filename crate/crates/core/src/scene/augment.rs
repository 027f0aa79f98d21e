use rand::Rng;
use serde::{Deserialize, Serialize};

use super::types::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub p_flip: f64,
    pub p_mask: f64,
    /// Masking only ever touches this many leading history steps.
    pub max_mask_steps: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_flip: 0.5,
            p_mask: 0.5,
            max_mask_steps: 10,
        }
    }
}

/// Mirrors the scenario across the y axis (x -> -x), swapping turn tags.
pub fn flip_horizontal(s: &Scenario) -> Scenario {
    let mut out = s.clone();
    out.map_points(|p| [-p[0], p[1]]);
    for pl in &mut out.map_polylines {
        pl.tag = pl.tag.mirrored();
    }
    out
}

/// Marks the first `steps` history steps of every vehicle as unobserved.
pub fn mask_prefix(s: &Scenario, steps: usize) -> Scenario {
    let mut out = s.clone();
    let t = out.target_valid.len();
    // the last target observation defines the frame and stays valid
    let n = steps.min(t.saturating_sub(1));
    out.target_valid[..n].iter_mut().for_each(|v| *v = false);
    for tr in &mut out.neighbors {
        let n = steps.min(tr.valid.len().saturating_sub(1));
        tr.valid[..n].iter_mut().for_each(|v| *v = false);
    }
    out
}

/// Random flip and random history-prefix masking for a normalized scenario.
pub fn augment_scenario<R: Rng + ?Sized>(s: &Scenario, config: &AugmentConfig, rng: &mut R) -> Scenario {
    let mut out = if rng.random_bool(config.p_flip.clamp(0.0, 1.0)) {
        flip_horizontal(s)
    } else {
        s.clone()
    };
    if config.max_mask_steps > 0 && rng.random_bool(config.p_mask.clamp(0.0, 1.0)) {
        let steps = rng.random_range(1..=config.max_mask_steps);
        out = mask_prefix(&out, steps);
    }
    out
}
