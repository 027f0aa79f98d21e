use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PartitionError;
use crate::scene::Point;

pub const DEFAULT_MAX_ITERATIONS: usize = 100;
const RESTARTS: usize = 5;

/// Balanced clustering result: every cluster holds `floor(n/M)` or
/// `ceil(n/M)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub labels: Vec<usize>,
    pub centroids: Vec<Point>,
    pub iterations: usize,
    pub inertia: f64,
}

impl Clustering {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.centroids.len()];
        for l in &self.labels {
            s[*l] += 1;
        }
        s
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|i| self.labels[*i] == cluster).collect()
    }
}

fn sq_dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn kmeans_pp_init(points: &[Point], m: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(*p, centroids[0])).collect();
    while centroids.len() < m {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[next];
        centroids.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(*p, c));
        }
    }
    centroids
}

/// Greedy capacity-constrained assignment: points with the largest gap
/// between their best and second-best centroid choose first, each taking
/// the nearest cluster that still has room.
fn balanced_assign(points: &[Point], centroids: &[Point]) -> Vec<usize> {
    let n = points.len();
    let m = centroids.len();
    let floor = n / m;
    let mut extras_left = n % m;

    let mut prefs: Vec<(f64, usize, Vec<usize>)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d: Vec<f64> = centroids.iter().map(|c| sq_dist(*p, *c)).collect();
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|a, b| d[*a].total_cmp(&d[*b]).then(a.cmp(b)));
            let gap = if m > 1 { d[order[1]] - d[order[0]] } else { 0.0 };
            (gap, i, order)
        })
        .collect();
    prefs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut sizes = vec![0usize; m];
    let mut labels = vec![0usize; n];
    for (_, i, order) in prefs {
        let c = order
            .into_iter()
            .find(|c| sizes[*c] < floor || (sizes[*c] == floor && extras_left > 0))
            .expect("total capacity equals point count");
        if sizes[c] == floor {
            extras_left -= 1;
        }
        sizes[c] += 1;
        labels[i] = c;
    }
    labels
}

fn centroids_of(points: &[Point], labels: &[usize], m: usize) -> Vec<Point> {
    let mut acc = vec![[0.0, 0.0]; m];
    let mut count = vec![0usize; m];
    for (p, l) in points.iter().zip(labels) {
        acc[*l][0] += p[0];
        acc[*l][1] += p[1];
        count[*l] += 1;
    }
    acc.iter()
        .zip(&count)
        .map(|(a, c)| [a[0] / *c as f64, a[1] / *c as f64])
        .collect()
}

fn inertia(points: &[Point], labels: &[usize], centroids: &[Point]) -> f64 {
    points.iter().zip(labels).map(|(p, l)| sq_dist(*p, centroids[*l])).sum()
}

fn run_once(points: &[Point], m: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> Clustering {
    let mut centroids = kmeans_pp_init(points, m, rng);
    let mut labels = balanced_assign(points, &centroids);
    let mut iterations = 1;
    while iterations < max_iter {
        centroids = centroids_of(points, &labels, m);
        let next = balanced_assign(points, &centroids);
        iterations += 1;
        if next == labels {
            break;
        }
        labels = next;
    }
    let centroids = centroids_of(points, &labels, m);
    let inertia = inertia(points, &labels, &centroids);
    Clustering {
        labels,
        centroids,
        iterations,
        inertia,
    }
}

/// Size-balanced K-means; the best of several seeded restarts by inertia.
pub fn constrained_kmeans(points: &[Point], m: usize, seed: u64, max_iter: usize) -> Result<Clustering, PartitionError> {
    if m == 0 {
        return Err(PartitionError::Config("region count must be at least 1".into()));
    }
    if points.len() < m {
        return Err(PartitionError::Config(format!(
            "{} points cannot fill {m} clusters",
            points.len()
        )));
    }
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(PartitionError::Config("non-finite point".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Clustering> = None;
    for _ in 0..RESTARTS {
        let c = run_once(points, m, max_iter.max(1), &mut rng);
        if best.as_ref().is_none_or(|b| c.inertia < b.inertia) {
            best = Some(c);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_cluster_holds_everything() {
        let pts = vec![[0.0, 0.0], [1.0, 2.0], [5.0, -1.0]];
        let c = constrained_kmeans(&pts, 1, 0, 100).unwrap();
        assert_eq!(c.labels, vec![0, 0, 0]);
        assert!((c.centroids[0][0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn too_many_clusters_is_config_error() {
        assert!(constrained_kmeans(&[[0.0, 0.0]], 2, 0, 100).is_err());
        assert!(constrained_kmeans(&[[0.0, 0.0]], 0, 0, 100).is_err());
    }

    #[test]
    fn odd_count_splits_four_three() {
        let pts: Vec<Point> = (0..7).map(|i| [i as f64, (i * i) as f64 * 0.1]).collect();
        let c = constrained_kmeans(&pts, 2, 3, 100).unwrap();
        let mut s = c.sizes();
        s.sort();
        assert_eq!(s, vec![3, 4]);
    }

    /// Exhaustive search over all balanced 2-partitions of six points.
    fn brute_force_best(points: &[Point]) -> Vec<usize> {
        let mut best = (f64::INFINITY, vec![]);
        for mask in 0u32..64 {
            if mask.count_ones() != 3 {
                continue;
            }
            let labels: Vec<usize> = (0..6).map(|i| ((mask >> i) & 1) as usize).collect();
            let cents = centroids_of(points, &labels, 2);
            let cost = inertia(points, &labels, &cents);
            if cost < best.0 {
                best = (cost, labels);
            }
        }
        best.1
    }

    #[test]
    fn two_groups_match_brute_force() {
        let eps = 1e-3;
        let pts = vec![
            [0.0, 0.0],
            [eps, 0.0],
            [0.0, -eps],
            [10.0, 10.0],
            [10.0 + eps, 10.0],
            [10.0, 10.0 - eps],
        ];
        let oracle = brute_force_best(&pts);
        assert_eq!(oracle[0], oracle[1]);
        assert_ne!(oracle[0], oracle[3]);
        let c = constrained_kmeans(&pts, 2, 42, 100).unwrap();
        assert_eq!(c.sizes(), vec![3, 3]);
        let same = |a: usize, b: usize| (c.labels[a] == c.labels[b]) == (oracle[a] == oracle[b]);
        for a in 0..6 {
            for b in 0..6 {
                assert!(same(a, b));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn sizes_differ_by_at_most_one(
            coords in prop::collection::vec(-50.0f64..50.0, 2..200),
            m in 1usize..8,
            seed in 0u64..1000,
        ) {
            let pts: Vec<Point> = coords.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
            prop_assume!(pts.len() >= m);
            let c = constrained_kmeans(&pts, m, seed, 100).unwrap();
            let s = c.sizes();
            prop_assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
        }
    }
}
