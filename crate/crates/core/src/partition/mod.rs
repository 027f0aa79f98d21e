//! Spatial partition of normalized endpoint space into regions, and the
//! block assignment of proposals to regions.

mod hull;
mod kmeans;

use std::f64::consts::TAU;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use hull::{contains as hull_contains, convex_hull};
pub use kmeans::{constrained_kmeans, Clustering, DEFAULT_MAX_ITERATIONS};

use crate::scene::Point;

#[derive(Debug, thiserror::Error)]
pub enum PartitionError {
    #[error("partition config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMethod {
    Kmeans,
    Fan,
}

/// Equal-angle sectors around the origin; sector 0 is centered on +y and
/// indices increase counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FanParameters {
    pub sector_width: f64,
    /// Distance of the plotted sector centroids from the origin.
    pub centroid_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPartition {
    pub method: PartitionMethod,
    pub m: usize,
    pub centroids: Vec<Point>,
    /// Convex hull of each cluster's fitting points; plotting only.
    pub hulls: Vec<Vec<Point>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fan: Option<FanParameters>,
}

/// Centroids and hulls from a clustering of `points`.
pub fn build_region_partition(points: &[Point], clusters: &Clustering) -> Result<RegionPartition, PartitionError> {
    let m = clusters.centroids.len();
    if m == 0 || clusters.labels.len() != points.len() {
        return Err(PartitionError::Config("clustering does not match points".into()));
    }
    let mut centroids = Vec::with_capacity(m);
    let mut hulls = Vec::with_capacity(m);
    for c in 0..m {
        let members: Vec<Point> = clusters.members(c).into_iter().map(|i| points[i]).collect();
        if members.is_empty() {
            return Err(PartitionError::Config(format!("cluster {c} is empty")));
        }
        let n = members.len() as f64;
        let sx: f64 = members.iter().map(|p| p[0]).sum();
        let sy: f64 = members.iter().map(|p| p[1]).sum();
        centroids.push([sx / n, sy / n]);
        hulls.push(convex_hull(&members));
    }
    Ok(RegionPartition {
        method: PartitionMethod::Kmeans,
        m,
        centroids,
        hulls,
        fan: None,
    })
}

/// Fits the balanced K-means partition on normalized endpoints.
pub fn fit_kmeans_partition(endpoints: &[Point], m: usize, seed: u64) -> Result<RegionPartition, PartitionError> {
    let clusters = constrained_kmeans(endpoints, m, seed, DEFAULT_MAX_ITERATIONS)?;
    build_region_partition(endpoints, &clusters)
}

/// `m` equal fan-shaped sectors around `origin`.
pub fn manual_fan_partition(m: usize, origin: Point) -> Result<RegionPartition, PartitionError> {
    if m == 0 {
        return Err(PartitionError::Config("region count must be at least 1".into()));
    }
    if origin != [0.0, 0.0] {
        return Err(PartitionError::Config("fan partitions are centered on the normalized origin".into()));
    }
    let width = TAU / m as f64;
    let radius = 10.0;
    let centroids = (0..m)
        .map(|i| {
            let a = i as f64 * width;
            // angle measured counter-clockwise from +y
            [-radius * a.sin(), radius * a.cos()]
        })
        .collect();
    Ok(RegionPartition {
        method: PartitionMethod::Fan,
        m,
        centroids,
        hulls: vec![Vec::new(); m],
        fan: Some(FanParameters {
            sector_width: width,
            centroid_radius: radius,
        }),
    })
}

fn fan_sector(p: Point, m: usize, width: f64) -> usize {
    if m == 1 {
        return 0;
    }
    // counter-clockwise angle from +y, shifted so sector 0 starts at 0
    let alpha = (-p[0]).atan2(p[1]);
    let u = (alpha + width / 2.0).rem_euclid(TAU);
    let q = u / width;
    let idx = (q.floor() as usize).min(m - 1);
    let frac = q - q.floor();
    if frac < 1e-9 {
        // on a boundary: lower index wins
        if idx == 0 {
            0
        } else {
            idx - 1
        }
    } else {
        idx
    }
}

/// Region containing `endpoint`: nearest centroid for K-means partitions,
/// angular sector for fan partitions. Ties go to the lowest index.
pub fn assign_region(endpoint: Point, partition: &RegionPartition) -> usize {
    match (partition.method, partition.fan) {
        (PartitionMethod::Fan, Some(fan)) => fan_sector(endpoint, partition.m, fan.sector_width),
        _ => {
            let mut best = (f64::INFINITY, 0);
            for (i, c) in partition.centroids.iter().enumerate() {
                let d = (endpoint[0] - c[0]).powi(2) + (endpoint[1] - c[1]).powi(2);
                if d < best.0 {
                    best = (d, i);
                }
            }
            best.1
        }
    }
}

/// Contiguous blocks of `K / M` proposals per region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalRegionMap {
    pub k: usize,
    pub m: usize,
}

impl ProposalRegionMap {
    pub fn per_region(&self) -> usize {
        self.k / self.m
    }

    pub fn region_of(&self, proposal: usize) -> usize {
        proposal / self.per_region()
    }

    pub fn proposals_of(&self, region: usize) -> Range<usize> {
        let n = self.per_region();
        region * n..(region + 1) * n
    }
}

pub fn map_proposals_to_regions(k: usize, m: usize) -> Result<ProposalRegionMap, PartitionError> {
    if m == 0 || k == 0 || k % m != 0 {
        return Err(PartitionError::Config(format!(
            "{k} proposals cannot be split evenly over {m} regions"
        )));
    }
    Ok(ProposalRegionMap { k, m })
}

/// On-disk partition: the fitted regions plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionFile {
    #[serde(flatten)]
    pub partition: RegionPartition,
    pub seed: u64,
    #[serde(default)]
    pub fitted_on: Option<String>,
    #[serde(default)]
    pub point_count: usize,
    /// Settings snapshot of the run that produced the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

pub fn save_partition(path: &Path, file: &PartitionFile) -> Result<(), PartitionError> {
    let bytes = serde_json::to_vec_pretty(file)?;
    crate::write_atomic(path, &bytes)?;
    Ok(())
}

pub fn load_partition(path: &Path) -> Result<PartitionFile, PartitionError> {
    let text = std::fs::read_to_string(path)?;
    let file: PartitionFile = serde_json::from_str(&text)?;
    let p = &file.partition;
    if p.m == 0 || p.centroids.len() != p.m || p.hulls.len() != p.m {
        return Err(PartitionError::Config(format!(
            "partition declares {} regions but has {} centroids and {} hulls",
            p.m,
            p.centroids.len(),
            p.hulls.len()
        )));
    }
    if p.method == PartitionMethod::Fan && p.fan.is_none() {
        return Err(PartitionError::Config("fan partition without fan parameters".into()));
    }
    Ok(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn proposal_blocks() {
        let map = map_proposals_to_regions(36, 6).unwrap();
        for r in 0..6 {
            assert_eq!(map.proposals_of(r), r * 6..r * 6 + 6);
            for k in map.proposals_of(r) {
                assert_eq!(map.region_of(k), r);
            }
        }
        let one = map_proposals_to_regions(6, 6).unwrap();
        assert_eq!(one.proposals_of(4), 4..5);
        assert!(map_proposals_to_regions(7, 2).is_err());
    }

    #[test]
    fn fan_conventions() {
        let one = manual_fan_partition(1, [0.0, 0.0]).unwrap();
        assert_eq!(assign_region([-3.0, -100.0], &one), 0);

        let six = manual_fan_partition(6, [0.0, 0.0]).unwrap();
        assert_eq!(assign_region([0.0, 5.0], &six), 0);
        assert_eq!(assign_region([0.0, -5.0], &six), 3);
        // left of the heading is counter-clockwise
        assert_eq!(assign_region([-5.0, 0.5], &six), 1);

        let four = manual_fan_partition(4, [0.0, 0.0]).unwrap();
        // 45 degrees left of +y: boundary between sector 0 and 1
        assert_eq!(assign_region([-1.0, 1.0], &four), 0);
        // 135 degrees: between 1 and 2
        assert_eq!(assign_region([-1.0, -1.0], &four), 1);
        // -45 degrees: between 3 and 0
        assert_eq!(assign_region([1.0, 1.0], &four), 0);
    }

    #[test]
    fn kmeans_assignment_ties_and_centroids() {
        let p = RegionPartition {
            method: PartitionMethod::Kmeans,
            m: 6,
            centroids: vec![[0.0, 9.0], [9.0, 9.0], [-1.0, 0.0], [5.0, 5.0], [-9.0, 9.0], [1.0, 0.0]],
            hulls: vec![Vec::new(); 6],
            fan: None,
        };
        for (i, c) in p.centroids.iter().enumerate() {
            assert_eq!(assign_region(*c, &p), i);
        }
        assert_eq!(assign_region([0.0, 0.0], &p), 2);
    }

    #[test]
    fn assignment_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pts: Vec<Point> = (0..300).map(|_| [rng.random_range(-30.0..30.0), rng.random_range(0.0..40.0)]).collect();
        let part = fit_kmeans_partition(&pts, 6, 1).unwrap();
        for _ in 0..1000 {
            let q = [rng.random_range(-40.0..40.0), rng.random_range(-10.0..50.0)];
            let d: Vec<f64> = part
                .centroids
                .iter()
                .map(|c| (q[0] - c[0]).hypot(q[1] - c[1]))
                .collect();
            let oracle = (0..6).fold(0, |b, i| if d[i] < d[b] { i } else { b });
            assert_eq!(assign_region(q, &part), oracle);
        }
    }

    #[test]
    fn region_partition_geometry() {
        let square = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let clusters = Clustering {
            labels: vec![0; 4],
            centroids: vec![[0.0, 0.0]],
            iterations: 1,
            inertia: 0.0,
        };
        let p = build_region_partition(&square, &clusters).unwrap();
        assert_eq!(p.centroids[0], [0.5, 0.5]);
        assert_eq!(p.hulls[0].len(), 4);

        let same = vec![[3.0, -2.0]; 5];
        let clusters = Clustering {
            labels: vec![0; 5],
            ..clusters
        };
        let p = build_region_partition(&same, &clusters).unwrap();
        assert_eq!(p.centroids[0], [3.0, -2.0]);
        assert_eq!(p.hulls[0], vec![[3.0, -2.0]]);
    }
}
