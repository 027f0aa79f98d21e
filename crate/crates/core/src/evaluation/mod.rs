//! NMS-based trajectory selection, displacement metrics and the regional
//! miss-rate matrix.

mod metrics;
mod nms;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use metrics::{compute_metrics, mr_matrix_from_predictions, CaseMetrics, MetricsReport, MrMatrix, DEFAULT_MISS_THRESHOLD};
pub use nms::{confidences, nms_select, NmsSelection};

use crate::model::{Model, ModelError, PredictionSet};
use crate::partition::{map_proposals_to_regions, ProposalRegionMap, RegionPartition};
use crate::scene::{denormalize_trajectory, Dataset, Point, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("evaluation config error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub k_out: usize,
    pub miss_threshold: f64,
    pub nms_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k_out: 6,
            miss_threshold: DEFAULT_MISS_THRESHOLD,
            nms_threshold: 2.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.k_out == 0 {
            return Err(EvalError::Config("k_out must be positive".into()));
        }
        if !(self.miss_threshold >= 0.0) || !(self.nms_threshold >= 0.0 && self.nms_threshold.is_finite()) {
            return Err(EvalError::Config("thresholds must be non-negative".into()));
        }
        Ok(())
    }
}

/// Final-head output for one case after NMS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasePrediction {
    pub id: String,
    /// All K proposals, normalized frame.
    pub raw: PredictionSet,
    pub selection: NmsSelection,
    /// Selected trajectories in the world frame.
    pub world_trajectories: Vec<Vec<Point>>,
}

impl CasePrediction {
    pub fn selected(&self) -> Vec<&[Point]> {
        self.selection.indices.iter().map(|i| self.raw.trajectories[*i].as_slice()).collect()
    }
}

pub fn predict_case(model: &Model, scenario: &Scenario, config: &EvalConfig) -> Result<CasePrediction, EvalError> {
    let out = model.forward(scenario)?;
    let raw = out.final_prediction().clone();
    let selection = nms_select(&raw, config.nms_threshold, config.k_out)?;
    let world_trajectories = selection
        .indices
        .iter()
        .map(|i| denormalize_trajectory(&raw.trajectories[*i], &scenario.frame))
        .collect();
    Ok(CasePrediction {
        id: scenario.id.clone(),
        raw,
        selection,
        world_trajectories,
    })
}

/// Hit rate (one minus miss rate) of the cases carrying each mode label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCoverage {
    pub per_mode: BTreeMap<usize, f64>,
    pub cases_per_mode: BTreeMap<usize, usize>,
    /// Smallest per-mode hit rate.
    pub coverage: f64,
}

fn mode_coverage(labels: &[Option<usize>], cases: &[CaseMetrics]) -> Option<ModeCoverage> {
    let mut hits: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (label, c) in labels.iter().zip(cases) {
        if let Some(l) = label {
            let e = hits.entry(*l).or_default();
            e.0 += usize::from(!c.miss);
            e.1 += 1;
        }
    }
    if hits.is_empty() {
        return None;
    }
    let per_mode: BTreeMap<usize, f64> = hits.iter().map(|(k, (h, n))| (*k, *h as f64 / *n as f64)).collect();
    let coverage = per_mode.values().copied().fold(f64::INFINITY, f64::min);
    Some(ModeCoverage {
        cases_per_mode: hits.iter().map(|(k, (_, n))| (*k, *n)).collect(),
        per_mode,
        coverage,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: MetricsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mr_matrix: Option<MrMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_coverage: Option<ModeCoverage>,
    pub config: EvalConfig,
}

/// Regional MR matrix of the final head over `dataset`.
pub fn mr_matrix(
    model: &Model,
    dataset: &Dataset,
    partition: &RegionPartition,
    proposal_map: &ProposalRegionMap,
    miss_threshold_m: f64,
) -> Result<MrMatrix, EvalError> {
    let mut cases = Vec::with_capacity(dataset.len());
    for s in &dataset.scenarios {
        let gt_end = s
            .gt_endpoint()
            .ok_or_else(|| EvalError::Contract(format!("scenario {}: no ground truth", s.id)))?;
        cases.push((model.forward(s)?.final_prediction().clone(), gt_end));
    }
    mr_matrix_from_predictions(&cases, partition, proposal_map, miss_threshold_m)
}

/// Forward, NMS and metrics for every case; the MR matrix is added when a
/// partition is given.
pub fn evaluate_split(
    model: &Model,
    dataset: &Dataset,
    config: &EvalConfig,
    partition: Option<&RegionPartition>,
) -> Result<(EvalReport, Vec<CasePrediction>), EvalError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(EvalError::Contract("dataset is empty".into()));
    }
    let mut predictions = Vec::with_capacity(dataset.len());
    let mut case_metrics = Vec::with_capacity(dataset.len());
    let mut labels = Vec::with_capacity(dataset.len());
    let mut raw_cases = Vec::with_capacity(dataset.len());
    for s in &dataset.scenarios {
        let gt = s
            .future
            .as_deref()
            .ok_or_else(|| EvalError::Contract(format!("scenario {}: no ground truth", s.id)))?;
        let p = predict_case(model, s, config)?;
        case_metrics.push(compute_metrics(&p.selected(), gt, config.miss_threshold)?);
        labels.push(s.mode_label);
        if partition.is_some() {
            raw_cases.push((p.raw.clone(), gt[gt.len() - 1]));
        }
        predictions.push(p);
    }
    let mr = match partition {
        Some(part) => {
            let map = map_proposals_to_regions(model.config().k, part.m).map_err(|e| EvalError::Config(e.to_string()))?;
            Some(mr_matrix_from_predictions(&raw_cases, part, &map, config.miss_threshold)?)
        }
        None => None,
    };
    let report = EvalReport {
        metrics: MetricsReport::aggregate(&case_metrics, config.k_out, config.miss_threshold),
        mr_matrix: mr,
        mode_coverage: mode_coverage(&labels, &case_metrics),
        config: *config,
    };
    Ok((report, predictions))
}

#[cfg(test)]
mod tests;
