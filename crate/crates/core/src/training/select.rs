use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::PredictionSet;
use crate::partition::{assign_region, ProposalRegionMap, RegionPartition};
use crate::scene::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Supervise only the proposal with the smallest endpoint error.
    Vanilla,
    /// Supervise every proposal of the ground truth endpoint's region.
    #[default]
    Rts,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Vanilla => "vanilla",
            Strategy::Rts => "rts",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vanilla" => Ok(Strategy::Vanilla),
            "rts" => Ok(Strategy::Rts),
            other => Err(format!("unknown strategy `{other}` (expected vanilla or rts)")),
        }
    }
}

/// Index of the proposal whose endpoint is closest to `gt_end`; ties go to
/// the lowest index.
pub fn closest_endpoint(predictions: &PredictionSet, gt_end: Point) -> usize {
    let mut best = (f64::INFINITY, 0);
    for i in 0..predictions.len() {
        let e = predictions.endpoint(i);
        let d = (e[0] - gt_end[0]).hypot(e[1] - gt_end[1]);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Proposal indices that receive supervision for one case.
pub fn select_supervised_proposals(
    predictions: &PredictionSet,
    gt_future: Option<&[Point]>,
    strategy: Strategy,
    partition: Option<&RegionPartition>,
    proposal_map: Option<&ProposalRegionMap>,
) -> Result<Vec<usize>, TrainError> {
    let gt_end = gt_future
        .and_then(|f| f.last().copied())
        .ok_or_else(|| TrainError::Contract("ground-truth future is missing".into()))?;
    if predictions.is_empty() {
        return Err(TrainError::Contract("no proposals to select from".into()));
    }
    match strategy {
        Strategy::Vanilla => Ok(vec![closest_endpoint(predictions, gt_end)]),
        Strategy::Rts => {
            let (Some(partition), Some(map)) = (partition, proposal_map) else {
                return Err(TrainError::Config("rts selection needs a partition and a proposal map".into()));
            };
            if map.k != predictions.len() || map.m != partition.m {
                return Err(TrainError::Config(format!(
                    "proposal map {}x{} does not fit {} proposals and {} regions",
                    map.k,
                    map.m,
                    predictions.len(),
                    partition.m
                )));
            }
            Ok(map.proposals_of(assign_region(gt_end, partition)).collect())
        }
    }
}
