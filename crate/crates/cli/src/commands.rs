use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use trajformer_core::evaluation::{evaluate_split, predict_case, CasePrediction, EvalConfig};
use trajformer_core::model::{load_checkpoint, save_checkpoint, CheckpointMeta, Model};
use trajformer_core::partition::{
    fit_kmeans_partition, load_partition, manual_fan_partition, map_proposals_to_regions, save_partition, PartitionFile,
    RegionPartition,
};
use trajformer_core::scene::{generate_synthetic_dataset, normalize_scenario, read_dataset, write_dataset, Dataset, Split};
use trajformer_core::training::{Strategy, Trainer};
use trajformer_core::write_atomic;

use crate::args::{Cli, Command, EvalArgs, FitPartitionArgs, GenDataArgs, MethodArg, PlotArgs, PredictArgs, SplitArg, StrategyArg, TrainArgs};
use crate::config::{require, require_existing, RunConfig};
use crate::error::{config, runtime, CliError};
use crate::plot::render_endpoint_plot;

/// Predictions as written by `eval` and `predict` and read by `plot`.
#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionsFile {
    pub seed: u64,
    pub config: serde_json::Value,
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub k: usize,
    pub m: usize,
    pub eval: EvalConfig,
    pub cases: Vec<CasePrediction>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::GenData(a) => gen_data(cfg, a),
        Command::FitPartition(a) => fit_partition(cfg, a),
        Command::Train(a) => train(cfg, a),
        Command::Eval(a) => eval(cfg, a),
        Command::Predict(a) => predict(cfg, a),
        Command::Plot(a) => plot(cfg, a),
    }
}

fn override_path(slot: &mut Option<PathBuf>, flag: Option<PathBuf>) {
    if flag.is_some() {
        *slot = flag;
    }
}

fn load_normalized(stage: &'static str, path: &Path) -> Result<Dataset, CliError> {
    let mut data = read_dataset(path).map_err(runtime(stage))?;
    data.scenarios = data
        .scenarios
        .iter()
        .map(normalize_scenario)
        .collect::<Result<_, _>>()
        .map_err(runtime(stage))?;
    Ok(data)
}

fn to_json(stage: &'static str, value: &impl Serialize) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(runtime(stage))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn gen_data(mut cfg: RunConfig, a: GenDataArgs) -> Result<(), CliError> {
    const STAGE: &str = "gen-data";
    override_path(&mut cfg.out, a.out);
    if let Some(n) = a.count {
        cfg.generator.count = n;
    }
    let out = require(STAGE, "out", &cfg.out)?;
    cfg.generator.validate().map_err(config(STAGE))?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
    };
    let data = generate_synthetic_dataset(&cfg.generator, cfg.seed, split).map_err(runtime(STAGE))?;
    write_dataset(out, &data).map_err(runtime(STAGE))?;
    log::info!("wrote {} {split} scenarios to {}", data.len(), out.display());
    Ok(())
}

fn fit_partition(mut cfg: RunConfig, a: FitPartitionArgs) -> Result<(), CliError> {
    const STAGE: &str = "fit-partition";
    override_path(&mut cfg.dataset, a.dataset);
    override_path(&mut cfg.out, a.out);
    if let Some(m) = a.m {
        cfg.model.m = m;
    }
    let m = cfg.model.m;
    if m == 0 {
        return Err(CliError::config(STAGE, "m must be at least 1"));
    }
    let out = require(STAGE, "out", &cfg.out)?;
    let method = a.method.unwrap_or(MethodArg::Kmeans);
    let (partition, fitted_on, point_count) = match method {
        MethodArg::Fan => (manual_fan_partition(m, [0.0, 0.0]).map_err(config(STAGE))?, None, 0),
        MethodArg::Kmeans => {
            let path = require_existing(STAGE, "dataset", &cfg.dataset)?;
            let data = load_normalized(STAGE, path)?;
            let ends: Vec<_> = data.scenarios.iter().filter_map(|s| s.gt_endpoint()).collect();
            if ends.len() < m {
                return Err(CliError::Runtime {
                    stage: STAGE,
                    message: format!("{} labelled endpoints cannot fill {m} regions", ends.len()),
                });
            }
            let p = fit_kmeans_partition(&ends, m, cfg.seed).map_err(runtime(STAGE))?;
            (p, Some(path.display().to_string()), ends.len())
        }
    };
    let file = PartitionFile {
        partition,
        seed: cfg.seed,
        fitted_on,
        point_count,
        config: Some(cfg.snapshot()),
    };
    save_partition(out, &file).map_err(runtime(STAGE))?;
    log::info!("wrote {m}-region partition to {}", out.display());
    Ok(())
}

fn read_partition(stage: &'static str, path: &Path) -> Result<RegionPartition, CliError> {
    load_partition(path)
        .map(|f| f.partition)
        .map_err(|e| CliError::config(stage, format!("partition {}: {e}", path.display())))
}

fn metrics_log_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_stem().unwrap_or_default().to_os_string();
    name.push(".metrics.jsonl");
    checkpoint.with_file_name(name)
}

fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<(), CliError> {
    const STAGE: &str = "train";
    override_path(&mut cfg.dataset, a.dataset);
    override_path(&mut cfg.partition, a.partition);
    override_path(&mut cfg.out, a.out);
    if let Some(s) = a.strategy {
        cfg.train.strategy = match s {
            StrategyArg::Vanilla => Strategy::Vanilla,
            StrategyArg::Rts => Strategy::Rts,
        };
    }
    if let Some(k) = a.k {
        cfg.model.k = k;
    }
    if let Some(m) = a.m {
        cfg.model.m = m;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.train.seed = cfg.seed;
    cfg.train.partition = cfg.partition.as_ref().map(|p| p.display().to_string());

    cfg.model.validate().map_err(config(STAGE))?;
    cfg.train.validate().map_err(config(STAGE))?;
    if cfg.train.strategy == Strategy::Rts && cfg.partition.is_none() {
        return Err(CliError::config(STAGE, "rts strategy requires a partition: missing field `partition`"));
    }
    let dataset_path = require_existing(STAGE, "dataset", &cfg.dataset)?;
    let out = require(STAGE, "out", &cfg.out)?.to_path_buf();
    let partition = match &cfg.partition {
        Some(_) => Some(read_partition(STAGE, require_existing(STAGE, "partition", &cfg.partition)?)?),
        None => None,
    };
    if let Some(p) = &partition {
        if p.m != cfg.model.m {
            return Err(CliError::config(STAGE, format!("partition has {} regions but m is {}", p.m, cfg.model.m)));
        }
    }

    let data = load_normalized(STAGE, dataset_path)?;
    if data.is_empty() {
        return Err(CliError::config(STAGE, "training set is empty"));
    }
    let model = Model::new(cfg.model.clone(), cfg.seed).map_err(config(STAGE))?;
    let mut trainer = Trainer::new(model, cfg.train.clone(), partition).map_err(config(STAGE))?;
    let snapshot = cfg.snapshot();
    let log_path = metrics_log_path(&out);
    let mut log_text = String::new();
    for _ in 0..cfg.train.epochs {
        let report = trainer.train_epoch(&data).map_err(runtime(STAGE))?;
        log::info!(
            "epoch {} reg {:.4} conf {:.4} cls {:.4} total {:.4}",
            report.epoch,
            report.reg,
            report.conf,
            report.cls,
            report.total
        );
        let line = json!({ "seed": cfg.seed, "report": report });
        log_text.push_str(&line.to_string());
        log_text.push('\n');
        write_atomic(&log_path, log_text.as_bytes()).map_err(runtime(STAGE))?;
        let meta = CheckpointMeta {
            seed: cfg.seed,
            partition: cfg.train.partition.clone(),
            strategy: Some(cfg.train.strategy.to_string()),
            epochs: trainer.epochs_done(),
            train_config: Some(snapshot.clone()),
        };
        save_checkpoint(&out, trainer.model(), &meta).map_err(runtime(STAGE))?;
    }
    if cfg.train.epochs == 0 {
        let meta = CheckpointMeta {
            seed: cfg.seed,
            partition: cfg.train.partition.clone(),
            strategy: Some(cfg.train.strategy.to_string()),
            epochs: 0,
            train_config: Some(snapshot),
        };
        save_checkpoint(&out, trainer.model(), &meta).map_err(runtime(STAGE))?;
    }
    log::info!("wrote checkpoint {}", out.display());
    Ok(())
}

fn eval_config(stage: &'static str, cfg: &mut RunConfig, miss: Option<f64>, nms: Option<f64>) -> Result<(), CliError> {
    if let Some(t) = miss {
        cfg.eval.miss_threshold = t;
    }
    if let Some(t) = nms {
        cfg.eval.nms_threshold = t;
    }
    cfg.eval.validate().map_err(config(stage))
}

fn load_model(stage: &'static str, path: &Path) -> Result<Model, CliError> {
    load_checkpoint(path, None)
        .map(|c| c.model)
        .map_err(|e| CliError::config(stage, format!("checkpoint {}: {e}", path.display())))
}

fn eval(mut cfg: RunConfig, a: EvalArgs) -> Result<(), CliError> {
    const STAGE: &str = "eval";
    override_path(&mut cfg.dataset, a.dataset);
    override_path(&mut cfg.checkpoint, a.checkpoint);
    override_path(&mut cfg.partition, a.partition);
    override_path(&mut cfg.out, a.out);
    eval_config(STAGE, &mut cfg, a.miss_threshold, a.nms_threshold)?;
    let dataset_path = require_existing(STAGE, "dataset", &cfg.dataset)?;
    let checkpoint = require_existing(STAGE, "checkpoint", &cfg.checkpoint)?;
    let out = require(STAGE, "out", &cfg.out)?;
    let model = load_model(STAGE, checkpoint)?;
    let partition = match &cfg.partition {
        Some(_) => Some(read_partition(STAGE, require_existing(STAGE, "partition", &cfg.partition)?)?),
        None => None,
    };
    if let Some(p) = &partition {
        if p.m != model.config().m {
            return Err(CliError::config(
                STAGE,
                format!("partition has {} regions but the model has m = {}", p.m, model.config().m),
            ));
        }
    }
    if cfg.eval.k_out > model.config().k {
        return Err(CliError::config(STAGE, format!("k_out {} exceeds K = {}", cfg.eval.k_out, model.config().k)));
    }

    let data = load_normalized(STAGE, dataset_path)?;
    if data.scenarios.iter().any(|s| s.future.is_none()) {
        return Err(CliError::config(STAGE, "every case needs a ground-truth future; use `predict` for unlabelled data"));
    }
    let (report, cases) = evaluate_split(&model, &data, &cfg.eval, partition.as_ref()).map_err(runtime(STAGE))?;

    std::fs::create_dir_all(out).map_err(runtime(STAGE))?;
    let snapshot = cfg.snapshot();
    let metrics = json!({ "seed": cfg.seed, "config": snapshot, "report": report });
    write_atomic(&out.join("metrics.json"), &to_json(STAGE, &metrics)?).map_err(runtime(STAGE))?;
    if let Some(mr) = &report.mr_matrix {
        let csv = format!("# seed {} config {}\n{}", cfg.seed, snapshot, mr.to_csv());
        write_atomic(&out.join("mr_matrix.csv"), csv.as_bytes()).map_err(runtime(STAGE))?;
    }
    let predictions = PredictionsFile {
        seed: cfg.seed,
        config: snapshot,
        checkpoint: checkpoint.to_path_buf(),
        dataset: dataset_path.to_path_buf(),
        k: model.config().k,
        m: model.config().m,
        eval: cfg.eval,
        cases,
    };
    write_atomic(&out.join("predictions.json"), &to_json(STAGE, &predictions)?).map_err(runtime(STAGE))?;
    let m = &report.metrics;
    println!(
        "cases {} minADE {:.4} minFDE {:.4} MR {:.4}",
        m.cases, m.min_ade, m.min_fde, m.miss_rate
    );
    Ok(())
}

fn predict(mut cfg: RunConfig, a: PredictArgs) -> Result<(), CliError> {
    const STAGE: &str = "predict";
    override_path(&mut cfg.dataset, a.dataset);
    override_path(&mut cfg.checkpoint, a.checkpoint);
    override_path(&mut cfg.out, a.out);
    eval_config(STAGE, &mut cfg, None, a.nms_threshold)?;
    let dataset_path = require_existing(STAGE, "dataset", &cfg.dataset)?;
    let checkpoint = require_existing(STAGE, "checkpoint", &cfg.checkpoint)?;
    let out = require(STAGE, "out", &cfg.out)?;
    let model = load_model(STAGE, checkpoint)?;
    if cfg.eval.k_out > model.config().k {
        return Err(CliError::config(STAGE, format!("k_out {} exceeds K = {}", cfg.eval.k_out, model.config().k)));
    }

    let data = load_normalized(STAGE, dataset_path)?;
    let cases = data
        .scenarios
        .iter()
        .map(|s| predict_case(&model, s, &cfg.eval))
        .collect::<Result<Vec<_>, _>>()
        .map_err(runtime(STAGE))?;
    let predictions = PredictionsFile {
        seed: cfg.seed,
        config: cfg.snapshot(),
        checkpoint: checkpoint.to_path_buf(),
        dataset: dataset_path.to_path_buf(),
        k: model.config().k,
        m: model.config().m,
        eval: cfg.eval,
        cases,
    };
    write_atomic(out, &to_json(STAGE, &predictions)?).map_err(runtime(STAGE))?;
    log::info!("wrote {} predictions to {}", predictions.cases.len(), out.display());
    Ok(())
}

fn plot(mut cfg: RunConfig, a: PlotArgs) -> Result<(), CliError> {
    const STAGE: &str = "plot";
    override_path(&mut cfg.partition, a.partition);
    override_path(&mut cfg.out, a.out);
    let predictions_path = a
        .predictions
        .ok_or_else(|| CliError::config(STAGE, "missing field `predictions`"))?;
    if !predictions_path.exists() {
        return Err(CliError::config(STAGE, format!("predictions {} does not exist", predictions_path.display())));
    }
    let out = require(STAGE, "out", &cfg.out)?;
    let text = std::fs::read_to_string(&predictions_path).map_err(runtime(STAGE))?;
    let preds: PredictionsFile = serde_json::from_str(&text)
        .map_err(|e| CliError::config(STAGE, format!("predictions {}: {e}", predictions_path.display())))?;
    let map = map_proposals_to_regions(preds.k, preds.m).map_err(config(STAGE))?;
    let partition = match &cfg.partition {
        Some(_) => Some(read_partition(STAGE, require_existing(STAGE, "partition", &cfg.partition)?)?),
        None => None,
    };
    if let Some(p) = &partition {
        if p.m != preds.m {
            return Err(CliError::config(STAGE, format!("partition has {} regions but predictions use m = {}", p.m, preds.m)));
        }
    }
    if let Some(bad) = preds.cases.iter().find(|c| c.raw.len() != preds.k) {
        return Err(CliError::config(STAGE, format!("case {} has {} proposals, expected {}", bad.id, bad.raw.len(), preds.k)));
    }
    let description = json!({
        "seed": preds.seed,
        "config": preds.config,
        "predictions": predictions_path.display().to_string(),
        "plot_seed": cfg.seed,
    });
    let svg = render_endpoint_plot(&preds.cases, &map, partition.as_ref(), &description.to_string());
    write_atomic(out, svg.as_bytes()).map_err(runtime(STAGE))?;
    log::info!("wrote {}", out.display());
    Ok(())
}
