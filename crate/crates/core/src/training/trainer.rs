use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{classification_loss, confidence_loss, regression_loss, total_loss, DEFAULT_HUBER_DELTA};
use super::select::{select_supervised_proposals, Strategy};
use super::TrainError;
use crate::model::{Model, ModelError};
use crate::numerics::{AdamWConfig, Graph, NumericsError, OptimizerState, Tensor, Var};
use crate::partition::{assign_region, map_proposals_to_regions, ProposalRegionMap, RegionPartition};
use crate::scene::{augment_scenario, AugmentConfig, Dataset, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
    /// Path of the partition file the run was configured with.
    pub partition: Option<String>,
    pub huber_delta: f64,
    /// `None` disables augmentation.
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Rts,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            optimizer: AdamWConfig::default(),
            partition: None,
            huber_delta: DEFAULT_HUBER_DELTA,
            augment: Some(AugmentConfig::default()),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.huber_delta > 0.0) {
            return Err(TrainError::Config("huber_delta must be positive".into()));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.max_grad_norm > 0.0 && o.eps > 0.0 && o.weight_decay >= 0.0) {
            return Err(TrainError::Config("optimizer settings must be positive".into()));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return Err(TrainError::Config("optimizer betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Loss parts of one prediction head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerLoss {
    pub reg: f64,
    pub conf: f64,
    pub cls: f64,
    pub selected: Vec<usize>,
}

/// Losses for one case. `reg`, `conf` and `cls` are summed over the heads
/// and `total` combines them with the learned weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub reg: f64,
    pub conf: f64,
    pub cls: f64,
    pub total: f64,
    pub sigma: [f64; 3],
    pub layers: Vec<LayerLoss>,
}

impl LossReport {
    /// Regression loss of the last head.
    pub fn final_reg(&self) -> f64 {
        self.layers.last().map_or(0.0, |l| l.reg)
    }
}

/// Means over an epoch; one line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub split: String,
    pub reg: f64,
    pub conf: f64,
    pub cls: f64,
    pub total: f64,
    pub final_reg: f64,
    pub sigma: [f64; 3],
    pub cases: usize,
    pub steps: usize,
}

fn sigma_values(model: &Model) -> [f64; 3] {
    let u = model.params().get(model.loss_weights()).data();
    [u[0].exp(), u[1].exp(), u[2].exp()]
}

/// Records every head's losses for `scenario` on `g` and returns the total
/// node alongside the scalar report.
pub fn record_losses(
    model: &Model,
    g: &mut Graph<'_>,
    scenario: &Scenario,
    strategy: Strategy,
    partition: Option<&RegionPartition>,
    proposal_map: Option<&ProposalRegionMap>,
    huber_delta: f64,
) -> Result<(Var, LossReport), TrainError> {
    let gt = scenario
        .future
        .as_deref()
        .ok_or_else(|| TrainError::Contract(format!("scenario {}: no ground-truth future", scenario.id)))?;
    let gt_end = *gt.last().ok_or_else(|| TrainError::Contract(format!("scenario {}: empty future", scenario.id)))?;
    let heads = model.forward_graph(g, scenario)?;
    let region = match (strategy, partition) {
        (Strategy::Rts, Some(p)) => Some(assign_region(gt_end, p)),
        _ => None,
    };

    let mut reg_terms = Vec::with_capacity(heads.len());
    let mut conf_terms = Vec::with_capacity(heads.len());
    let mut cls_terms = Vec::with_capacity(heads.len());
    let mut layers = Vec::with_capacity(heads.len());
    for head in &heads {
        let pred = model.prediction_set(g, *head);
        let selected = select_supervised_proposals(&pred, Some(gt), strategy, partition, proposal_map)?;
        let endpoints: Vec<_> = (0..pred.len()).map(|i| pred.endpoint(i)).collect();
        let reg = regression_loss(g, head.trajectories, &selected, gt, huber_delta)?;
        let conf = confidence_loss(g, head.scores, &selected, &endpoints, gt_end)?;
        let cls = match (region, proposal_map) {
            (Some(r), Some(map)) => Some(classification_loss(g, head.scores, r, map)?),
            _ => None,
        };
        layers.push(LayerLoss {
            reg: g.value(reg).item(),
            conf: g.value(conf).item(),
            cls: cls.map_or(0.0, |c| g.value(c).item()),
            selected,
        });
        reg_terms.push(reg);
        conf_terms.push(conf);
        if let Some(c) = cls {
            cls_terms.push(c);
        }
    }

    let sum_all = |g: &mut Graph<'_>, vars: &[Var]| -> Result<Var, NumericsError> {
        let mut acc = vars[0];
        for v in &vars[1..] {
            acc = g.add(acc, *v)?;
        }
        Ok(acc)
    };
    let reg = sum_all(g, &reg_terms)?;
    let conf = sum_all(g, &conf_terms)?;
    let cls = if cls_terms.is_empty() { None } else { Some(sum_all(g, &cls_terms)?) };
    let log_sigma = g.param(model.loss_weights());
    let total = total_loss(g, reg, conf, cls, log_sigma)?;

    let report = LossReport {
        reg: g.value(reg).item(),
        conf: g.value(conf).item(),
        cls: cls.map_or(0.0, |c| g.value(c).item()),
        total: g.value(total).item(),
        sigma: sigma_values(model),
        layers,
    };
    Ok((total, report))
}

/// Owns the model being trained and everything needed to step it.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: Model,
    optimizer: OptimizerState,
    config: TrainConfig,
    partition: Option<RegionPartition>,
    proposal_map: Option<ProposalRegionMap>,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig, partition: Option<RegionPartition>) -> Result<Self, TrainError> {
        config.validate()?;
        let proposal_map = match (config.strategy, &partition) {
            (Strategy::Rts, None) => {
                return Err(TrainError::Config("strategy rts requires a partition (missing field `partition`)".into()));
            }
            (Strategy::Rts, Some(p)) => {
                if p.m != model.config().m {
                    return Err(TrainError::Config(format!(
                        "partition has {} regions but the model is configured for m = {}",
                        p.m,
                        model.config().m
                    )));
                }
                Some(map_proposals_to_regions(model.config().k, p.m).map_err(|e| TrainError::Config(e.to_string()))?)
            }
            (Strategy::Vanilla, _) => None,
        };
        let optimizer = OptimizerState::new(config.optimizer, model.params());
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            model,
            optimizer,
            config,
            partition,
            proposal_map,
            rng,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    fn diverged(id: &str, err: impl std::fmt::Display) -> TrainError {
        TrainError::Divergence {
            id: id.to_string(),
            message: err.to_string(),
        }
    }

    /// Losses and parameter gradients for one case.
    pub fn scenario_gradients(&self, scenario: &Scenario) -> Result<(LossReport, Vec<Tensor>), TrainError> {
        let mut g = Graph::new(self.model.params());
        let recorded = record_losses(
            &self.model,
            &mut g,
            scenario,
            self.config.strategy,
            self.partition.as_ref(),
            self.proposal_map.as_ref(),
            self.config.huber_delta,
        );
        let (total, report) = match recorded {
            Err(TrainError::Model(ModelError::Numerics(e))) | Err(TrainError::Numerics(e)) => {
                return Err(Self::diverged(&scenario.id, e))
            }
            other => other?,
        };
        if !report.total.is_finite() {
            return Err(Self::diverged(&scenario.id, "loss is not finite"));
        }
        let grads = g.backward(total).map_err(|e| Self::diverged(&scenario.id, e))?;
        Ok((report, grads.param_grads(self.model.params())))
    }

    /// Losses without a parameter update.
    pub fn scenario_loss(&self, scenario: &Scenario) -> Result<LossReport, TrainError> {
        let mut g = Graph::new(self.model.params());
        let (_, report) = record_losses(
            &self.model,
            &mut g,
            scenario,
            self.config.strategy,
            self.partition.as_ref(),
            self.proposal_map.as_ref(),
            self.config.huber_delta,
        )?;
        Ok(report)
    }

    /// One shuffled pass over `dataset` with a clipped AdamW step per batch.
    pub fn train_epoch(&mut self, dataset: &Dataset) -> Result<EpochReport, TrainError> {
        if dataset.is_empty() {
            return Err(TrainError::Config("training set is empty".into()));
        }
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut self.rng);
        let mut acc = Accumulator::default();
        let mut steps = 0;
        for batch in order.chunks(self.config.batch_size) {
            let mut summed: Option<Vec<Tensor>> = None;
            for &i in batch {
                let original = &dataset.scenarios[i];
                let case = match &self.config.augment {
                    Some(aug) => augment_scenario(original, aug, &mut self.rng),
                    None => original.clone(),
                };
                let (report, grads) = self.scenario_gradients(&case)?;
                acc.add(&report);
                match summed.as_mut() {
                    Some(s) => s.iter_mut().zip(&grads).for_each(|(a, b)| a.add_assign(b)),
                    None => summed = Some(grads),
                }
            }
            let mut grads = summed.expect("batches are non-empty");
            let inv = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|t| t.scale_assign(inv));
            let id = &dataset.scenarios[batch[0]].id;
            self.optimizer
                .step(self.model.params_mut(), &mut grads)
                .map_err(|e| Self::diverged(id, e))?;
            steps += 1;
        }
        self.epoch += 1;
        log::debug!("epoch {} done after {steps} steps", self.epoch);
        Ok(acc.report(self.epoch, "train", sigma_values(&self.model), steps))
    }

    /// Mean losses over `dataset` under the current parameters.
    pub fn evaluate_loss(&self, dataset: &Dataset, split: &str) -> Result<EpochReport, TrainError> {
        let mut acc = Accumulator::default();
        for s in &dataset.scenarios {
            acc.add(&self.scenario_loss(s)?);
        }
        Ok(acc.report(self.epoch, split, sigma_values(&self.model), 0))
    }
}

#[derive(Default)]
struct Accumulator {
    reg: f64,
    conf: f64,
    cls: f64,
    total: f64,
    final_reg: f64,
    n: usize,
}

impl Accumulator {
    fn add(&mut self, r: &LossReport) {
        self.reg += r.reg;
        self.conf += r.conf;
        self.cls += r.cls;
        self.total += r.total;
        self.final_reg += r.final_reg();
        self.n += 1;
    }

    fn report(&self, epoch: usize, split: &str, sigma: [f64; 3], steps: usize) -> EpochReport {
        let n = self.n.max(1) as f64;
        EpochReport {
            epoch,
            split: split.to_string(),
            reg: self.reg / n,
            conf: self.conf / n,
            cls: self.cls / n,
            total: self.total / n,
            final_reg: self.final_reg / n,
            sigma,
            cases: self.n,
            steps,
        }
    }
}
