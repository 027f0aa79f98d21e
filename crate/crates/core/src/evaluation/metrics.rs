use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::model::PredictionSet;
use crate::partition::{assign_region, ProposalRegionMap, RegionPartition};
use crate::scene::Point;

pub const DEFAULT_MISS_THRESHOLD: f64 = 2.0;

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Best-of-set errors for one case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss: bool,
}

pub fn compute_metrics(selected: &[&[Point]], gt: &[Point], miss_threshold_m: f64) -> Result<CaseMetrics, EvalError> {
    if selected.is_empty() || gt.is_empty() {
        return Err(EvalError::Contract("metrics need at least one trajectory and a ground truth".into()));
    }
    let mut min_ade = f64::INFINITY;
    let mut min_fde = f64::INFINITY;
    for traj in selected {
        if traj.len() != gt.len() {
            return Err(EvalError::Contract(format!(
                "trajectory has {} steps, ground truth {}",
                traj.len(),
                gt.len()
            )));
        }
        let ade = traj.iter().zip(gt).map(|(p, q)| dist(*p, *q)).sum::<f64>() / gt.len() as f64;
        min_ade = min_ade.min(ade);
        min_fde = min_fde.min(dist(traj[traj.len() - 1], gt[gt.len() - 1]));
    }
    Ok(CaseMetrics {
        min_ade,
        min_fde,
        miss: min_fde > miss_threshold_m,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss_rate: f64,
    pub k_eval: usize,
    pub miss_threshold: f64,
    pub cases: usize,
}

impl MetricsReport {
    pub fn aggregate(cases: &[CaseMetrics], k_eval: usize, miss_threshold: f64) -> Self {
        let n = cases.len().max(1) as f64;
        Self {
            min_ade: cases.iter().map(|c| c.min_ade).sum::<f64>() / n,
            min_fde: cases.iter().map(|c| c.min_fde).sum::<f64>() / n,
            miss_rate: cases.iter().filter(|c| c.miss).count() as f64 / n,
            k_eval,
            miss_threshold,
            cases: cases.len(),
        }
    }
}

/// Cell `(i, j)`: miss rate of region `i`'s proposals over cases whose
/// ground truth lies in region `j`. Empty columns are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrMatrix {
    pub m: usize,
    pub cells: Vec<Vec<Option<f64>>>,
    /// Cases per ground-truth region.
    pub counts: Vec<usize>,
}

impl MrMatrix {
    fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
        let v: Vec<f64> = values.flatten().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn mean_diagonal(&self) -> Option<f64> {
        Self::mean((0..self.m).map(|i| self.cells[i][i]))
    }

    pub fn mean_off_diagonal(&self) -> Option<f64> {
        Self::mean((0..self.m).flat_map(|i| (0..self.m).filter(move |j| *j != i).map(move |j| (i, j))).map(|(i, j)| self.cells[i][j]))
    }

    /// CSV with a header row; undefined cells are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("proposal_region");
        for j in 0..self.m {
            out.push_str(&format!(",gt_region_{j}"));
        }
        out.push('\n');
        for (i, row) in self.cells.iter().enumerate() {
            out.push_str(&i.to_string());
            for c in row {
                out.push(',');
                if let Some(v) = c {
                    out.push_str(&format!("{v}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// MR matrix from per-case raw predictions and ground-truth endpoints.
pub fn mr_matrix_from_predictions(
    cases: &[(PredictionSet, Point)],
    partition: &RegionPartition,
    proposal_map: &ProposalRegionMap,
    miss_threshold_m: f64,
) -> Result<MrMatrix, EvalError> {
    let m = partition.m;
    if proposal_map.m != m {
        return Err(EvalError::Config(format!("proposal map has {} regions, partition {m}", proposal_map.m)));
    }
    let mut misses = vec![vec![0usize; m]; m];
    let mut counts = vec![0usize; m];
    for (pred, gt_end) in cases {
        if pred.len() != proposal_map.k {
            return Err(EvalError::Config(format!("{} proposals, map expects {}", pred.len(), proposal_map.k)));
        }
        let j = assign_region(*gt_end, partition);
        counts[j] += 1;
        for (i, row) in misses.iter_mut().enumerate() {
            let best = proposal_map
                .proposals_of(i)
                .map(|p| dist(pred.endpoint(p), *gt_end))
                .fold(f64::INFINITY, f64::min);
            if best > miss_threshold_m {
                row[j] += 1;
            }
        }
    }
    let cells = misses
        .iter()
        .map(|row| {
            row.iter()
                .zip(&counts)
                .map(|(miss, n)| (*n > 0).then(|| *miss as f64 / *n as f64))
                .collect()
        })
        .collect();
    Ok(MrMatrix { m, cells, counts })
}
