//! Loss terms recorded on the tape.

use std::rc::Rc;

use crate::numerics::{Graph, NumericsError, Tensor, Var};
use crate::partition::ProposalRegionMap;
use crate::scene::Point;

pub const DEFAULT_HUBER_DELTA: f64 = 1.0;

fn check_selection(selected: &[usize], k: usize) -> Result<(), NumericsError> {
    if selected.is_empty() {
        return Err(NumericsError::Contract("empty proposal selection".into()));
    }
    if let Some(i) = selected.iter().find(|i| **i >= k) {
        return Err(NumericsError::Contract(format!("selected proposal {i} out of {k}")));
    }
    Ok(())
}

/// Huber loss of the selected `K x 2T` trajectory rows against the ground
/// truth, averaged over proposals, steps and coordinates.
pub fn regression_loss(g: &mut Graph<'_>, trajectories: Var, selected: &[usize], gt: &[Point], delta: f64) -> Result<Var, NumericsError> {
    check_selection(selected, g.value(trajectories).rows())?;
    let width = 2 * gt.len();
    if g.value(trajectories).cols() != width {
        return Err(NumericsError::Shape(format!(
            "trajectories have {} columns, ground truth implies {width}",
            g.value(trajectories).cols()
        )));
    }
    let row: Vec<f64> = gt.iter().flat_map(|p| [p[0], p[1]]).collect();
    let target: Vec<f64> = row.iter().copied().cycle().take(width * selected.len()).collect();
    let target = Rc::new(Tensor::matrix(selected.len(), width, target)?);
    let picked = g.gather_rows(trajectories, selected)?;
    let h = g.huber(picked, target, delta)?;
    g.mean(h)
}

/// KL divergence from the target distribution (softmax of negative endpoint
/// distances, held constant) to the softmax of the selected scores.
pub fn confidence_loss(g: &mut Graph<'_>, scores: Var, selected: &[usize], endpoints: &[Point], gt_end: Point) -> Result<Var, NumericsError> {
    check_selection(selected, g.value(scores).rows())?;
    let neg_dist: Vec<f64> = selected
        .iter()
        .map(|i| -(endpoints[*i][0] - gt_end[0]).hypot(endpoints[*i][1] - gt_end[1]))
        .collect();
    let lse = crate::numerics::log_sum_exp(&neg_dist);
    let log_lambda: Vec<f64> = neg_dist.iter().map(|v| v - lse).collect();
    let lambda: Vec<f64> = log_lambda.iter().map(|v| v.exp()).collect();
    let entropy_term: f64 = lambda.iter().zip(&log_lambda).map(|(l, ll)| if *l > 0.0 { l * ll } else { 0.0 }).sum();

    let picked = g.gather_rows(scores, selected)?;
    let row = g.reshape(picked, vec![1, selected.len()])?;
    let log_tau = g.log_softmax(row)?;
    let weights = g.constant(Tensor::row(&lambda))?;
    let cross = g.mul(weights, log_tau)?;
    let cross = g.sum(cross)?;
    let neg = g.scale(cross, -1.0)?;
    g.add_scalar(neg, entropy_term)
}

/// `-log` of the probability mass the softmax over all K scores puts on
/// the ground-truth region's proposals.
pub fn classification_loss(g: &mut Graph<'_>, scores: Var, region: usize, map: &ProposalRegionMap) -> Result<Var, NumericsError> {
    if g.value(scores).len() != map.k {
        return Err(NumericsError::Shape(format!("{} scores for {} proposals", g.value(scores).len(), map.k)));
    }
    if region >= map.m {
        return Err(NumericsError::Contract(format!("region {region} out of {}", map.m)));
    }
    let row = g.reshape(scores, vec![1, map.k])?;
    let all = g.log_sum_exp(row)?;
    let range = map.proposals_of(region);
    let inside = g.slice_cols(row, range.start, range.len())?;
    let inside = g.log_sum_exp(inside)?;
    g.sub(all, inside)
}

/// Region probabilities implied by the softmax over all K scores.
pub fn region_probabilities(scores: &[f64], map: &ProposalRegionMap) -> Vec<f64> {
    let lse = crate::numerics::log_sum_exp(scores);
    (0..map.m)
        .map(|r| map.proposals_of(r).map(|i| (scores[i] - lse).exp()).sum())
        .collect()
}

/// `Σ loss_i / σ_i² + Σ log(σ_i + 1)` with `σ = exp(log_sigma)`. Without a
/// classification term the third weight is left out entirely.
pub fn total_loss(g: &mut Graph<'_>, reg: Var, conf: Var, cls: Option<Var>, log_sigma: Var) -> Result<Var, NumericsError> {
    if g.value(log_sigma).len() != 3 {
        return Err(NumericsError::Shape("expected three loss weights".into()));
    }
    let terms: Vec<Var> = match cls {
        Some(c) => vec![reg, conf, c],
        None => vec![reg, conf],
    };
    let mut total: Option<Var> = None;
    for (i, loss) in terms.iter().enumerate() {
        let u = g.slice_cols(log_sigma, i, 1)?;
        let minus_two_u = g.scale(u, -2.0)?;
        let inv_sq = g.exp(minus_two_u)?;
        let weighted = g.mul(*loss, inv_sq)?;
        // log(σ + 1) = log(1 + e^u)
        let reg_term = g.softplus(u)?;
        let t = g.add(weighted, reg_term)?;
        total = Some(match total {
            Some(acc) => g.add(acc, t)?,
            None => t,
        });
    }
    Ok(total.expect("at least two terms"))
}
