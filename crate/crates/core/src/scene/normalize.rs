use std::f64::consts::FRAC_PI_2;

use super::types::{distance, NormalizationFrame, Point, Scenario};
use super::SceneError;

const MIN_STEP: f64 = 1e-6;
const MIN_BASELINE: f64 = 1e-9;

/// Heading of the target at its last observation.
///
/// Uses the last two valid points; when those coincide, falls back to the
/// longest displacement between any two valid points. `None` when every
/// valid point coincides.
pub fn estimate_heading(history: &[Point], valid: &[bool]) -> Option<Point> {
    let pts: Vec<Point> = history
        .iter()
        .zip(valid.iter().chain(std::iter::repeat(&true)))
        .filter(|(_, v)| **v)
        .map(|(p, _)| *p)
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let (a, b) = (pts[pts.len() - 2], pts[pts.len() - 1]);
    if distance(a, b) > MIN_STEP {
        return Some([b[0] - a[0], b[1] - a[1]]);
    }
    let mut best = (0.0, [0.0, 0.0]);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let d = distance(pts[i], pts[j]);
            if d > best.0 {
                best = (d, [pts[j][0] - pts[i][0], pts[j][1] - pts[i][1]]);
            }
        }
    }
    (best.0 > MIN_BASELINE).then_some(best.1)
}

/// Moves the scenario into the target-centric frame: last observed target
/// position at the origin, heading along +y.
pub fn normalize_scenario(raw: &Scenario) -> Result<Scenario, SceneError> {
    let last = raw
        .target_history
        .iter()
        .enumerate()
        .filter(|(i, _)| raw.target_valid.get(*i).copied().unwrap_or(true))
        .map(|(_, p)| *p)
        .last()
        .ok_or_else(|| SceneError::InvalidScenario {
            id: raw.id.clone(),
            reason: "target history is empty".into(),
        })?;

    let mut out = raw.clone();
    let rotation = match estimate_heading(&raw.target_history, &raw.target_valid) {
        Some(h) => FRAC_PI_2 - h[1].atan2(h[0]),
        None => {
            log::debug!("scenario {}: stationary target, heading left unrotated", raw.id);
            out.heading_degenerate = true;
            0.0
        }
    };
    let step = NormalizationFrame { origin: last, rotation };
    out.map_points(|p| step.apply(p));
    out.frame = raw.frame.then(&step);
    Ok(out)
}

pub fn denormalize_trajectory(traj: &[Point], frame: &NormalizationFrame) -> Vec<Point> {
    traj.iter().map(|p| frame.invert(*p)).collect()
}

/// Restores the coordinates the scenario had before normalization.
pub fn denormalize_scenario(s: &Scenario) -> Scenario {
    let mut out = s.clone();
    let frame = s.frame;
    out.map_points(|p| frame.invert(p));
    out.frame = NormalizationFrame::identity();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::types::{LaneTag, Polyline, Track};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_scenario(rng: &mut ChaCha8Rng) -> Scenario {
        let mut pt = || [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)];
        let hist: Vec<Point> = (0..20).map(|_| pt()).collect();
        let mut s = Scenario::new("r", hist);
        s.neighbors.push(Track::fully_valid((0..20).map(|_| pt()).collect()));
        s.map_polylines.push(Polyline {
            points: (0..5).map(|_| pt()).collect(),
            tag: LaneTag::Through,
        });
        s.future = Some((0..30).map(|_| pt()).collect());
        s
    }

    #[test]
    fn heading_plus_x_becomes_plus_y() {
        let hist = vec![[3.0, 5.0], [4.0, 5.0], [5.0, 5.0]];
        let mut s = Scenario::new("a", hist);
        s.future = Some(vec![[6.0, 5.0]]);
        let n = normalize_scenario(&s).unwrap();
        let last = n.target_history[2];
        assert!(last[0].abs() < 1e-12 && last[1].abs() < 1e-12);
        let prev = n.target_history[1];
        assert!(prev[0].abs() < 1e-12 && (prev[1] + 1.0).abs() < 1e-12);
        let fut = n.future.unwrap()[0];
        assert!(fut[0].abs() < 1e-12 && (fut[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let once = normalize_scenario(&random_scenario(&mut rng)).unwrap();
        let twice = normalize_scenario(&once).unwrap();
        for (a, b) in once.all_points().iter().zip(twice.all_points()) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn rigid_and_invertible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let raw = random_scenario(&mut rng);
            let n = normalize_scenario(&raw).unwrap();
            let (a, b) = (raw.all_points(), n.all_points());
            for i in (0..a.len()).step_by(7) {
                for j in (0..a.len()).step_by(5) {
                    assert!((distance(a[i], a[j]) - distance(b[i], b[j])).abs() < 1e-9);
                }
            }
            let back = denormalize_scenario(&n);
            for (p, q) in raw.all_points().iter().zip(back.all_points()) {
                assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn denormalize_hand_rotation() {
        let identity = NormalizationFrame::identity();
        assert_eq!(denormalize_trajectory(&[[1.5, -2.0]], &identity), vec![[1.5, -2.0]]);
        // local (0,1) rotated by +90 degrees is (-1,0); shifted by (3,3) gives (2,3).
        let frame = NormalizationFrame {
            origin: [3.0, 3.0],
            rotation: -FRAC_PI_2,
        };
        let p = denormalize_trajectory(&[[0.0, 1.0]], &frame)[0];
        assert!((p[0] - 2.0).abs() < 1e-12 && (p[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_target_fallbacks() {
        // last two points equal: use longest baseline (pointing along -x)
        let s = Scenario::new("s", vec![[4.0, 0.0], [1.0, 0.0], [1.0, 0.0]]);
        let n = normalize_scenario(&s).unwrap();
        assert!(!n.heading_degenerate);
        assert!((n.target_history[0][1] + 3.0).abs() < 1e-12);

        let s = Scenario::new("z", vec![[2.0, 2.0]; 4]);
        let n = normalize_scenario(&s).unwrap();
        assert!(n.heading_degenerate);
        assert_eq!(n.frame.rotation, 0.0);
        assert_eq!(n.target_history[0], [0.0, 0.0]);

        let empty = Scenario::new("e", vec![]);
        assert!(normalize_scenario(&empty).is_err());
    }
}
