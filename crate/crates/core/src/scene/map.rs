use serde::{Deserialize, Serialize};

use super::types::{LaneTag, Point, Polyline, Scenario};

/// Default side length of the square map crop, meters.
pub const DEFAULT_WINDOW_METERS: f64 = 65.0;

/// One centerline segment in vector form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapVector {
    pub start: Point,
    pub end: Point,
    pub tag: LaneTag,
    /// Index of the source polyline in the scenario.
    pub polyline: usize,
}

impl MapVector {
    /// Input features: endpoints (scaled) followed by the tag one-hot.
    pub fn features(&self, coord_scale: f64) -> [f64; 4 + LaneTag::COUNT] {
        let mut f = [0.0; 4 + LaneTag::COUNT];
        f[0] = self.start[0] / coord_scale;
        f[1] = self.start[1] / coord_scale;
        f[2] = self.end[0] / coord_scale;
        f[3] = self.end[1] / coord_scale;
        f[4..].copy_from_slice(&self.tag.one_hot());
        f
    }
}

/// Vectorized polylines; empty polylines are never stored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolylineSet {
    pub polylines: Vec<Vec<MapVector>>,
}

impl PolylineSet {
    pub fn is_empty(&self) -> bool {
        self.polylines.is_empty()
    }

    pub fn len(&self) -> usize {
        self.polylines.len()
    }

    pub fn vector_count(&self) -> usize {
        self.polylines.iter().map(Vec::len).sum()
    }
}

/// Splits every polyline into its consecutive segments without cropping.
pub fn vectorize(polylines: &[Polyline]) -> PolylineSet {
    let polylines = polylines
        .iter()
        .enumerate()
        .map(|(idx, pl)| {
            pl.points
                .windows(2)
                .map(|w| MapVector {
                    start: w[0],
                    end: w[1],
                    tag: pl.tag,
                    polyline: idx,
                })
                .collect::<Vec<_>>()
        })
        .filter(|v| !v.is_empty())
        .collect();
    PolylineSet { polylines }
}

/// Clips segment `a`-`b` to the square `[-half, half]^2` (Liang-Barsky).
pub fn clip_segment(a: Point, b: Point, half: f64) -> Option<(Point, Point)> {
    let d = [b[0] - a[0], b[1] - a[1]];
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    let checks = [
        (-d[0], a[0] + half),
        (d[0], half - a[0]),
        (-d[1], a[1] + half),
        (d[1], half - a[1]),
    ];
    for (p, q) in checks {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    if t0 > t1 {
        return None;
    }
    let at = |t: f64| {
        if t == 0.0 {
            a
        } else if t == 1.0 {
            b
        } else {
            let p = [a[0] + t * d[0], a[1] + t * d[1]];
            [p[0].clamp(-half, half), p[1].clamp(-half, half)]
        }
    };
    Some((at(t0), at(t1)))
}

/// Keeps the parts of the (normalized) map inside a `window` x `window`
/// square centered at the origin and converts them to vectors.
pub fn crop_and_vectorize_map(scenario: &Scenario, window: f64) -> PolylineSet {
    let half = window / 2.0;
    let polylines: Vec<Vec<MapVector>> = vectorize(&scenario.map_polylines)
        .polylines
        .into_iter()
        .map(|vectors| {
            vectors
                .into_iter()
                .filter_map(|v| {
                    clip_segment(v.start, v.end, half).map(|(start, end)| MapVector { start, end, ..v })
                })
                .collect::<Vec<_>>()
        })
        .filter(|v| !v.is_empty())
        .collect();
    if polylines.is_empty() {
        log::debug!("scenario {}: map is empty after cropping", scenario.id);
    }
    PolylineSet { polylines }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scenario_with(polylines: Vec<Polyline>) -> Scenario {
        let mut s = Scenario::new("m", vec![[0.0, -1.0], [0.0, 0.0]]);
        s.map_polylines = polylines;
        s
    }

    #[test]
    fn outside_polyline_is_dropped() {
        let s = scenario_with(vec![Polyline {
            points: vec![[100.0, 100.0], [120.0, 100.0]],
            tag: LaneTag::Through,
        }]);
        assert!(crop_and_vectorize_map(&s, 65.0).is_empty());
    }

    #[test]
    fn inside_polyline_keeps_all_vectors() {
        let s = scenario_with(vec![Polyline {
            points: vec![[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]],
            tag: LaneTag::LeftTurn,
        }]);
        let set = crop_and_vectorize_map(&s, 65.0);
        assert_eq!(set.vector_count(), 2);
        assert_eq!(set.polylines[0][1].start, [1.0, 1.0]);
    }

    #[test]
    fn crossing_segment_is_clipped_at_the_edge() {
        // from (0,0) to (50,10): x hits 32.5 at t = 0.65, y = 6.5
        let (a, b) = clip_segment([0.0, 0.0], [50.0, 10.0], 32.5).unwrap();
        assert_eq!(a, [0.0, 0.0]);
        assert!((b[0] - 32.5).abs() < 1e-12 && (b[1] - 6.5).abs() < 1e-12);
        // both ends outside, passing through: (-40,-40) to (40,40) -> corners
        let (a, b) = clip_segment([-40.0, -40.0], [40.0, 40.0], 32.5).unwrap();
        assert_eq!(a, [-32.5, -32.5]);
        assert_eq!(b, [32.5, 32.5]);
        // parallel to an edge but outside
        assert!(clip_segment([40.0, -10.0], [40.0, 10.0], 32.5).is_none());
    }

    #[test]
    fn vector_count_is_points_minus_one() {
        let pls = vec![
            Polyline { points: vec![[0.0, 0.0]; 5], tag: LaneTag::Through },
            Polyline { points: vec![[1.0, 0.0], [2.0, 0.0]], tag: LaneTag::Other },
        ];
        assert_eq!(vectorize(&pls).vector_count(), 5);
    }

    proptest! {
        #[test]
        fn clipped_vectors_stay_inside(coords in prop::collection::vec(-80.0f64..80.0, 4..40)) {
            let points: Vec<Point> = coords.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
            let s = scenario_with(vec![Polyline { points, tag: LaneTag::Through }]);
            let set = crop_and_vectorize_map(&s, 65.0);
            for v in set.polylines.iter().flatten() {
                for p in [v.start, v.end] {
                    prop_assert!(p[0].abs() <= 32.5 + 1e-9 && p[1].abs() <= 32.5 + 1e-9);
                }
            }
        }
    }
}
