//! Synthetic junction scenarios with a known, history-independent choice of
//! maneuver, so the future is genuinely multimodal given the observations.

use std::f64::consts::{FRAC_PI_2, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::types::{rotate, Dataset, LaneTag, Point, Polyline, Scenario, Split, Track};
use super::SceneError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JunctionMode {
    LeftTurn,
    Straight,
    RightTurn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub count: usize,
    /// Maneuvers the target may take; the label is the index into this list.
    pub modes: Vec<JunctionMode>,
    pub history_steps: usize,
    pub future_steps: usize,
    /// Seconds per step.
    pub dt: f64,
    pub speed_range: (f64, f64),
    /// Distance from the last observation to the junction entry.
    pub junction_distance_range: (f64, f64),
    /// Unobservable longitudinal acceleration over the future, m/s^2.
    pub max_future_accel: f64,
    pub position_noise: f64,
    pub left_turn_radius: f64,
    pub right_turn_radius: f64,
    pub neighbor_range: (usize, usize),
    /// Probability that a neighbor's first steps are unobserved.
    pub partial_neighbor_prob: f64,
    /// Scenarios are placed at random poses within this many meters of the world origin.
    pub world_extent: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            count: 1000,
            modes: vec![JunctionMode::LeftTurn, JunctionMode::Straight, JunctionMode::RightTurn],
            history_steps: 20,
            future_steps: 30,
            dt: 0.1,
            speed_range: (6.0, 10.0),
            junction_distance_range: (3.0, 6.0),
            max_future_accel: 0.2,
            position_noise: 0.005,
            left_turn_radius: 10.0,
            right_turn_radius: 6.0,
            neighbor_range: (1, 2),
            partial_neighbor_prob: 0.3,
            world_extent: 500.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let err = |m: &str| Err(SceneError::Config(m.to_string()));
        if self.modes.is_empty() {
            return err("at least one mode is required");
        }
        if self.history_steps < 2 {
            return err("history needs at least two steps");
        }
        if self.future_steps == 0 {
            return err("future needs at least one step");
        }
        if !(self.dt > 0.0) {
            return err("dt must be positive");
        }
        if !(self.speed_range.0 > 0.0 && self.speed_range.0 <= self.speed_range.1) {
            return err("speed range must be positive and ordered");
        }
        if !(self.junction_distance_range.0 >= 0.0 && self.junction_distance_range.0 <= self.junction_distance_range.1) {
            return err("junction distance range must be non-negative and ordered");
        }
        if self.neighbor_range.0 > self.neighbor_range.1 {
            return err("neighbor range must be ordered");
        }
        if !(self.left_turn_radius > 0.0 && self.right_turn_radius > 0.0) {
            return err("turn radii must be positive");
        }
        Ok(())
    }
}

/// Position along a maneuver's path, in the canonical frame where the
/// approach lane is the y axis and the junction entry is at `(0, entry)`.
fn path_point(mode: JunctionMode, s: f64, entry: f64, cfg: &GeneratorConfig) -> Point {
    if s <= entry || mode == JunctionMode::Straight {
        return [0.0, s];
    }
    let along = s - entry;
    let (radius, side) = match mode {
        JunctionMode::LeftTurn => (cfg.left_turn_radius, -1.0),
        JunctionMode::RightTurn => (cfg.right_turn_radius, 1.0),
        JunctionMode::Straight => unreachable!(),
    };
    let arc = FRAC_PI_2 * radius;
    if along <= arc {
        let theta = along / radius;
        [side * (radius - radius * theta.cos()), entry + radius * theta.sin()]
    } else {
        [side * (radius + (along - arc)), entry + radius]
    }
}

fn lane(mode: JunctionMode, entry: f64, cfg: &GeneratorConfig) -> Polyline {
    let tag = match mode {
        JunctionMode::LeftTurn => LaneTag::LeftTurn,
        JunctionMode::Straight => LaneTag::Through,
        JunctionMode::RightTurn => LaneTag::RightTurn,
    };
    let points = (0..=24).map(|i| path_point(mode, entry + 2.5 * i as f64, entry, cfg)).collect();
    Polyline { points, tag }
}

fn junction_map(entry: f64, cfg: &GeneratorConfig) -> Vec<Polyline> {
    let approach = Polyline {
        points: (0..=12).map(|i| [0.0, entry - 60.0 + 5.0 * i as f64]).collect(),
        tag: LaneTag::Through,
    };
    let mut out = vec![approach];
    out.extend(
        [JunctionMode::LeftTurn, JunctionMode::Straight, JunctionMode::RightTurn]
            .into_iter()
            .map(|m| lane(m, entry, cfg)),
    );
    out
}

fn mix_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 over the pair
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic scenario number `index` of a dataset.
pub fn generate_scenario(cfg: &GeneratorConfig, seed: u64, split: Split, index: usize) -> Scenario {
    let split_salt = match split {
        Split::Train => 0,
        Split::Val => 1 << 40,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, index as u64 + split_salt));
    let noise = Normal::new(0.0, cfg.position_noise.max(0.0)).expect("finite std");
    let jitter = |p: Point, rng: &mut ChaCha8Rng| [p[0] + noise.sample(rng), p[1] + noise.sample(rng)];

    let mode_idx = rng.random_range(0..cfg.modes.len());
    let mode = cfg.modes[mode_idx];
    let speed = rng.random_range(cfg.speed_range.0..=cfg.speed_range.1);
    let entry = rng.random_range(cfg.junction_distance_range.0..=cfg.junction_distance_range.1);
    let accel = if cfg.max_future_accel > 0.0 {
        rng.random_range(-cfg.max_future_accel..=cfg.max_future_accel)
    } else {
        0.0
    };

    let h = cfg.history_steps;
    let history: Vec<Point> = (0..h)
        .map(|i| {
            let t = (i as f64 - (h - 1) as f64) * cfg.dt;
            jitter([0.0, speed * t], &mut rng)
        })
        .collect();
    let future: Vec<Point> = (1..=cfg.future_steps)
        .map(|i| {
            let t = i as f64 * cfg.dt;
            let s = (speed * t + 0.5 * accel * t * t).max(0.0);
            jitter(path_point(mode, s, entry, cfg), &mut rng)
        })
        .collect();

    let n_neighbors = rng.random_range(cfg.neighbor_range.0..=cfg.neighbor_range.1);
    let mut neighbors = Vec::with_capacity(n_neighbors);
    for _ in 0..n_neighbors {
        let nv = rng.random_range(cfg.speed_range.0..=cfg.speed_range.1);
        let (start, vel): (Point, Point) = if rng.random_bool(0.5) {
            // follower in the same lane
            let gap = rng.random_range(8.0..20.0);
            ([0.0, -gap], [0.0, nv])
        } else {
            // crossing traffic on the far side of the junction
            let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let y = entry + cfg.left_turn_radius + rng.random_range(2.0..6.0);
            ([-dir * rng.random_range(10.0..30.0), y], [dir * nv, 0.0])
        };
        let points: Vec<Point> = (0..h)
            .map(|i| {
                let t = (i as f64 - (h - 1) as f64) * cfg.dt;
                jitter([start[0] + vel[0] * t, start[1] + vel[1] * t], &mut rng)
            })
            .collect();
        let mut track = Track::fully_valid(points);
        if rng.random_bool(cfg.partial_neighbor_prob.clamp(0.0, 1.0)) {
            let missing = rng.random_range(1..=(h / 4).max(1));
            track.valid[..missing].iter_mut().for_each(|v| *v = false);
        }
        neighbors.push(track);
    }

    let heading = rng.random_range(0.0..TAU);
    let offset = [
        rng.random_range(-cfg.world_extent..=cfg.world_extent),
        rng.random_range(-cfg.world_extent..=cfg.world_extent),
    ];
    // canonical heading is +y; rotate by `heading - pi/2` to place it in the world
    let to_world = |p: Point| {
        let r = rotate(p, heading - FRAC_PI_2);
        [r[0] + offset[0], r[1] + offset[1]]
    };

    let mut s = Scenario::new(format!("{split}-{index:06}"), history);
    s.neighbors = neighbors;
    s.map_polylines = junction_map(entry, cfg);
    s.future = Some(future);
    s.mode_label = Some(mode_idx);
    s.map_points(to_world);
    s
}

/// Pure function of `(config, seed, split)`.
pub fn generate_synthetic_dataset(cfg: &GeneratorConfig, seed: u64, split: Split) -> Result<Dataset, SceneError> {
    cfg.validate()?;
    let scenarios = (0..cfg.count).map(|i| generate_scenario(cfg, seed, split, i)).collect();
    Ok(Dataset {
        scenarios,
        split,
        seed: Some(seed),
        generator: Some(cfg.clone()),
    })
}
