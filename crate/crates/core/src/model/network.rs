use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;

use super::layers::{DecoderLayer, EncoderLayer, Memory};
use super::{ModelConfig, ModelError, PredictionSet};
use crate::numerics::{xavier_uniform, Graph, Linear, Mlp, ParamId, ParamStore, Tensor, Var};
use crate::scene::{crop_and_vectorize_map, LaneTag, Point, PolylineSet, Scenario};

const VECTOR_FEATURES: usize = 4 + LaneTag::COUNT;

/// Embedding tables start at unit scale so they are not washed out by the
/// normalized features they are added to.
fn standard_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::matrix(rows, cols, data).expect("sizes agree")
}

/// Encoder stack over a memory, then a decoder stack refining proposals.
#[derive(Debug, Clone)]
struct Stage {
    encoders: Vec<EncoderLayer>,
    decoders: Vec<DecoderLayer>,
}

impl Stage {
    fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, decoders: usize, skip_first_self_attention: bool, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        let (d, h, f, eps) = (cfg.hidden_dim, cfg.heads, cfg.hidden_dim * cfg.ffn_multiplier, cfg.layer_norm_eps);
        let encoders = (0..cfg.encoder_layers)
            .map(|i| EncoderLayer::new(store, &format!("{name}.encoder.{i}"), d, h, f, eps, rng))
            .collect::<Result<_, _>>()?;
        let decoders = (0..decoders)
            .map(|i| {
                let self_attn = !(skip_first_self_attention && i == 0);
                DecoderLayer::new(store, &format!("{name}.decoder.{i}"), d, h, f, eps, self_attn, rng)
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { encoders, decoders })
    }

    fn encode(&self, g: &mut Graph<'_>, mut x: Var, pos: Option<Var>, valid: Option<&[bool]>) -> Result<Var, ModelError> {
        for layer in &self.encoders {
            x = layer.forward(g, x, pos, valid)?;
        }
        Ok(x)
    }
}

/// Generator and selector attached after one social decoder layer.
#[derive(Debug, Clone)]
pub struct PredictionHead {
    pub generator: Mlp,
    pub selector: Mlp,
}

/// Graph nodes of one head's output: `trajectories` is `K x 2T` in meters
/// (x, y interleaved per step), `scores` is `K x 1`.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub trajectories: Var,
    pub scores: Var,
}

/// The stacked network together with its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    proposals: ParamId,
    temporal_pos: ParamId,
    history_embed: Linear,
    motion: Stage,
    polyline_mlp: Mlp,
    map: Stage,
    summary: Mlp,
    target_flag: ParamId,
    social: Stage,
    heads: Vec<PredictionHead>,
    loss_weights: ParamId,
}

impl Model {
    /// Fresh randomly initialized model; parameter values depend only on `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let cfg = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = cfg.hidden_dim;

        let proposals = store.add("proposals.embedding", standard_normal(&mut rng, cfg.k, d));
        let temporal_pos = store.add("motion.temporal_pos", standard_normal(&mut rng, cfg.history_steps, d));
        let history_embed = Linear::new(&mut store, "motion.input", 3, d, &mut rng);
        let motion = Stage::new(&mut store, "motion", cfg, cfg.decoder_layers, true, &mut rng)?;
        let polyline_mlp = Mlp::new(&mut store, "map.polyline", &[VECTOR_FEATURES, cfg.mlp_hidden, d], &mut rng);
        let map = Stage::new(&mut store, "map", cfg, cfg.decoder_layers, false, &mut rng)?;
        let summary = Mlp::new(&mut store, "social.summary", &[d, cfg.mlp_hidden, d], &mut rng);
        let target_flag = store.add("social.target_flag", xavier_uniform(&mut rng, 1, d));
        let social = Stage::new(&mut store, "social", cfg, cfg.social_decoder_layers, false, &mut rng)?;
        let heads = (0..cfg.social_decoder_layers)
            .map(|i| PredictionHead {
                generator: Mlp::new(
                    &mut store,
                    &format!("head.{i}.generator"),
                    &[d, cfg.mlp_hidden, cfg.mlp_hidden, 2 * cfg.future_steps],
                    &mut rng,
                ),
                selector: Mlp::new(&mut store, &format!("head.{i}.selector"), &[d, cfg.mlp_hidden, cfg.mlp_hidden, 1], &mut rng),
            })
            .collect();
        let loss_weights = store.add("loss.log_sigma", Tensor::zeros(1, 3));

        Ok(Self {
            config,
            params: store,
            proposals,
            temporal_pos,
            history_embed,
            motion,
            polyline_mlp,
            map,
            summary,
            target_flag,
            social,
            heads,
            loss_weights,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn proposal_embeddings(&self) -> ParamId {
        self.proposals
    }

    /// `1 x 3` logarithms of the loss-balancing weights; stored with the
    /// network so one optimizer and one checkpoint cover both.
    pub fn loss_weights(&self) -> ParamId {
        self.loss_weights
    }

    pub fn heads(&self) -> &[PredictionHead] {
        &self.heads
    }

    /// Per-step `(x, y, valid)` rows for one track, scaled; invalid steps are zeroed.
    fn history_rows(&self, points: &[Point], valid: &[bool], who: &str, id: &str) -> Result<Tensor, ModelError> {
        let t = self.config.history_steps;
        if points.len() != t || valid.len() != t {
            return Err(ModelError::Contract(format!(
                "scenario {id}: {who} history has {} steps, model expects {t}",
                points.len()
            )));
        }
        let s = self.config.coord_scale;
        let mut data = Vec::with_capacity(3 * t);
        for (p, v) in points.iter().zip(valid) {
            if *v {
                data.extend_from_slice(&[p[0] / s, p[1] / s, 1.0]);
            } else {
                data.extend_from_slice(&[0.0, 0.0, 0.0]);
            }
        }
        Ok(Tensor::matrix(t, 3, data)?)
    }

    /// Motion extractor for one vehicle: encodes its history and refines the
    /// K proposals against it. Returns `K x hidden_dim`.
    pub fn encode_motion(&self, g: &mut Graph<'_>, history: Tensor, valid: &[bool]) -> Result<Var, ModelError> {
        if !valid.iter().any(|v| *v) {
            return Err(ModelError::Contract("history has no valid step".into()));
        }
        let pos = g.param(self.temporal_pos);
        let x = g.constant(history)?;
        let x = self.history_embed.forward(g, x)?;
        let x = g.add(x, pos)?;
        let memory = self.motion.encode(g, x, Some(pos), Some(valid))?;
        let qpos = g.param(self.proposals);
        // the proposals start as their own embeddings
        let mut tgt = qpos;
        for layer in &self.motion.decoders {
            tgt = layer.forward(
                g,
                tgt,
                qpos,
                Memory {
                    features: memory,
                    pos: Some(pos),
                    valid: Some(valid),
                },
            )?;
        }
        Ok(tgt)
    }

    /// Per-polyline features: shared per-vector MLP then max over the vectors.
    /// `None` for an empty map.
    pub fn encode_polylines(&self, g: &mut Graph<'_>, polylines: &PolylineSet) -> Result<Option<Var>, ModelError> {
        if polylines.is_empty() {
            return Ok(None);
        }
        let s = self.config.coord_scale;
        let mut pooled = Vec::with_capacity(polylines.len());
        for vectors in &polylines.polylines {
            let data: Vec<f64> = vectors.iter().flat_map(|v| v.features(s)).collect();
            let x = g.constant(Tensor::matrix(vectors.len(), VECTOR_FEATURES, data)?)?;
            let h = self.polyline_mlp.forward(g, x)?;
            pooled.push(g.max_rows(h)?);
        }
        let memory = g.concat_rows(&pooled)?;
        Ok(Some(self.map.encode(g, memory, None, None)?))
    }

    /// Map aggregator decoder; identity when there is no map memory.
    pub fn aggregate_map(&self, g: &mut Graph<'_>, proposals: Var, map_memory: Option<Var>) -> Result<Var, ModelError> {
        let Some(memory) = map_memory else {
            return Ok(proposals);
        };
        let qpos = g.param(self.proposals);
        let mut x = proposals;
        for layer in &self.map.decoders {
            x = layer.forward(
                g,
                x,
                qpos,
                Memory {
                    features: memory,
                    pos: None,
                    valid: None,
                },
            )?;
        }
        Ok(x)
    }

    /// Mean over the K proposal features followed by an MLP; `1 x hidden_dim`.
    pub fn summarize_vehicle_feature(&self, g: &mut Graph<'_>, proposals: Var) -> Result<Var, ModelError> {
        let pooled = g.mean_rows(proposals)?;
        Ok(self.summary.forward(g, pooled)?)
    }

    /// Social constructor: encoder over vehicle features (row 0 is the
    /// target), then decoder layers over the target's proposals, with a
    /// prediction head after each layer.
    pub fn construct_social(&self, g: &mut Graph<'_>, vehicles: &[Var], target_proposals: Var) -> Result<Vec<HeadVars>, ModelError> {
        let flag = g.param(self.target_flag);
        let mut rows = Vec::with_capacity(vehicles.len());
        rows.push(g.add(vehicles[0], flag)?);
        rows.extend_from_slice(&vehicles[1..]);
        let x = g.concat_rows(&rows)?;
        let memory = self.social.encode(g, x, None, None)?;
        let qpos = g.param(self.proposals);
        let mut tgt = target_proposals;
        let mut outputs = Vec::with_capacity(self.heads.len());
        for (layer, head) in self.social.decoders.iter().zip(&self.heads) {
            tgt = layer.forward(
                g,
                tgt,
                qpos,
                Memory {
                    features: memory,
                    pos: None,
                    valid: None,
                },
            )?;
            outputs.push(self.decode_proposals(g, head, tgt)?);
        }
        Ok(outputs)
    }

    /// Generator and selector of one head applied to `K x hidden_dim` features.
    pub fn decode_proposals(&self, g: &mut Graph<'_>, head: &PredictionHead, features: Var) -> Result<HeadVars, ModelError> {
        let raw = head.generator.forward(g, features)?;
        let trajectories = g.scale(raw, self.config.coord_scale)?;
        let scores = head.selector.forward(g, features)?;
        Ok(HeadVars { trajectories, scores })
    }

    /// Records the full forward pass on `g`; one entry per social decoder layer.
    pub fn forward_graph(&self, g: &mut Graph<'_>, scenario: &Scenario) -> Result<Vec<HeadVars>, ModelError> {
        let id = &scenario.id;
        let target = self.history_rows(&scenario.target_history, &scenario.target_valid, "target", id)?;
        if !scenario.target_valid.iter().any(|v| *v) {
            return Err(ModelError::Contract(format!("scenario {id}: target history has no valid step")));
        }
        let map = crop_and_vectorize_map(scenario, self.config.map_window);
        let map_memory = self.encode_polylines(g, &map)?;

        let mut target_proposals = None;
        let mut vehicles = Vec::with_capacity(1 + scenario.neighbors.len());
        let tracks = std::iter::once((target, scenario.target_valid.as_slice())).map(Ok).chain(
            scenario
                .neighbors
                .iter()
                .filter(|n| n.any_valid())
                .map(|n| self.history_rows(&n.points, &n.valid, "neighbor", id).map(|t| (t, n.valid.as_slice()))),
        );
        for track in tracks {
            let (history, valid) = track?;
            let motion = self.encode_motion(g, history, valid)?;
            let refined = self.aggregate_map(g, motion, map_memory)?;
            vehicles.push(self.summarize_vehicle_feature(g, refined)?);
            if target_proposals.is_none() {
                target_proposals = Some(refined);
            }
        }
        let target_proposals = target_proposals.expect("target is always present");
        self.construct_social(g, &vehicles, target_proposals)
    }

    /// Inference: every head's predictions, the last one being final.
    pub fn forward(&self, scenario: &Scenario) -> Result<ForwardOutput, ModelError> {
        let mut g = Graph::new(&self.params);
        let heads = self.forward_graph(&mut g, scenario)?;
        let layers = heads.iter().map(|h| self.prediction_set(&g, *h)).collect();
        Ok(ForwardOutput { layers })
    }

    pub fn prediction_set(&self, g: &Graph<'_>, head: HeadVars) -> PredictionSet {
        let traj = g.value(head.trajectories);
        let t = self.config.future_steps;
        let trajectories = (0..self.config.k)
            .map(|i| {
                let row = traj.row_slice(i);
                (0..t).map(|s| [row[2 * s], row[2 * s + 1]]).collect()
            })
            .collect();
        PredictionSet {
            trajectories,
            scores: g.value(head.scores).data().to_vec(),
        }
    }
}

/// Predictions from the head after each social decoder layer, in order;
/// the last layer's set is the final prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub layers: Vec<PredictionSet>,
}

impl ForwardOutput {
    pub fn final_prediction(&self) -> &PredictionSet {
        self.layers.last().expect("at least one decoder layer")
    }
}
