use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::model::PredictionSet;

/// Below this the distance threshold drops straight to zero.
const MIN_THRESHOLD: f64 = 1e-3;

/// Softmax of the raw scores over all K proposals.
pub fn confidences(scores: &[f64]) -> Vec<f64> {
    let lse = crate::numerics::log_sum_exp(scores);
    scores.iter().map(|s| (s - lse).exp()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmsSelection {
    /// Selected proposal indices in the order they were admitted.
    pub indices: Vec<usize>,
    pub confidences: Vec<f64>,
    /// Threshold in force when the last index was admitted.
    pub final_threshold: f64,
}

/// Greedy endpoint suppression by descending confidence. When fewer than
/// `k_out` candidates survive, the threshold is halved and the remaining
/// candidates are rescanned.
pub fn nms_select(predictions: &PredictionSet, threshold_m: f64, k_out: usize) -> Result<NmsSelection, EvalError> {
    let k = predictions.len();
    if k_out == 0 || k_out > k {
        return Err(EvalError::Config(format!("cannot select {k_out} of {k} proposals")));
    }
    if !(threshold_m >= 0.0 && threshold_m.is_finite()) {
        return Err(EvalError::Config(format!("invalid NMS threshold {threshold_m}")));
    }
    let conf = confidences(&predictions.scores);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|a, b| conf[*b].total_cmp(&conf[*a]).then(a.cmp(b)));
    let ends: Vec<_> = (0..k).map(|i| predictions.endpoint(i)).collect();

    let mut taken = vec![false; k];
    let mut indices = Vec::with_capacity(k_out);
    let mut threshold = threshold_m;
    loop {
        for &c in &order {
            if indices.len() == k_out {
                break;
            }
            if taken[c] {
                continue;
            }
            let clear = indices
                .iter()
                .all(|s: &usize| (ends[*s][0] - ends[c][0]).hypot(ends[*s][1] - ends[c][1]) >= threshold);
            if clear {
                taken[c] = true;
                indices.push(c);
            }
        }
        if indices.len() == k_out {
            break;
        }
        threshold = if threshold / 2.0 < MIN_THRESHOLD { 0.0 } else { threshold / 2.0 };
    }
    let confidences = indices.iter().map(|i| conf[*i]).collect();
    Ok(NmsSelection {
        indices,
        confidences,
        final_threshold: threshold,
    })
}
