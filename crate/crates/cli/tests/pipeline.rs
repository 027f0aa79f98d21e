use std::path::Path;
use std::process::{Command, Output};

fn trajformer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajformer"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for out in [&a, &b] {
        let o = trajformer(&["gen-data", "--seed", "7", "--count", "20", "--out", p(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.lines().next().unwrap().contains("\"seed\":7"));

    let c = dir.path().join("c.jsonl");
    trajformer(&["gen-data", "--seed", "8", "--count", "20", "--out", p(&c)]);
    assert_ne!(text, std::fs::read_to_string(&c).unwrap());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(trajformer(&["gen-data", "--bogus"]).status.code(), Some(1));
    assert_eq!(trajformer(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(trajformer(&["train", "--strategy", "greedy"]).status.code(), Some(1));
    assert_eq!(trajformer(&["--help"]).status.code(), Some(0));
}

#[test]
fn rts_without_partition_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    trajformer(&["gen-data", "--seed", "1", "--count", "5", "--out", p(&data)]);
    let ckpt = dir.path().join("model.json");
    let o = trajformer(&["train", "--strategy", "rts", "--dataset", p(&data), "--out", p(&ckpt)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("train") && err.contains("partition"), "{err}");
    // nothing was written
    assert!(!ckpt.exists());
    assert!(!dir.path().join("model.metrics.jsonl").exists());
}

#[test]
fn validation_failures_touch_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = trajformer(&[
        "eval",
        "--dataset",
        p(&dir.path().join("missing.jsonl")),
        "--checkpoint",
        p(&dir.path().join("missing.json")),
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("eval"));
    assert!(!out.exists());

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"model": {"k": 7, "m": 3}}"#).unwrap();
    let data = dir.path().join("d.jsonl");
    trajformer(&["gen-data", "--count", "3", "--out", p(&data)]);
    let part = dir.path().join("part.json");
    trajformer(&["fit-partition", "--method", "fan", "--m", "3", "--out", p(&part)]);
    let ckpt = dir.path().join("m.json");
    let o = trajformer(&[
        "--config",
        p(&cfg),
        "train",
        "--dataset",
        p(&data),
        "--partition",
        p(&part),
        "--out",
        p(&ckpt),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!ckpt.exists());

    std::fs::write(&cfg, r#"{"modle": {}}"#).unwrap();
    let o = trajformer(&["--config", p(&cfg), "gen-data", "--out", p(&data)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    std::fs::write(&data, "{not json\n").unwrap();
    let o = trajformer(&["fit-partition", "--dataset", p(&data), "--m", "2", "--out", p(&dir.path().join("p.json"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fit-partition"));
}

#[test]
fn tiny_end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{
            "generator": {"history_steps": 6, "future_steps": 5, "neighbor_range": [0, 1]},
            "model": {"hidden_dim": 8, "heads": 2, "encoder_layers": 1, "decoder_layers": 1,
                      "social_decoder_layers": 2, "mlp_hidden": 8, "k": 6, "m": 3,
                      "history_steps": 6, "future_steps": 5},
            "train": {"batch_size": 4}
        }"#,
    )
    .unwrap();
    let c = p(&cfg);
    let train = dir.path().join("train.jsonl");
    let val = dir.path().join("val.jsonl");
    let part = dir.path().join("partition.json");
    let ckpt = dir.path().join("model.json");
    let eval_dir = dir.path().join("eval");
    let preds = dir.path().join("preds.json");
    let svg = dir.path().join("endpoints.svg");

    let steps: Vec<Vec<&str>> = vec![
        vec!["gen-data", "--count", "12", "--out", p(&train)],
        vec!["gen-data", "--count", "6", "--split", "val", "--out", p(&val)],
        vec!["fit-partition", "--dataset", p(&train), "--out", p(&part)],
        vec!["train", "--dataset", p(&train), "--partition", p(&part), "--epochs", "2", "--out", p(&ckpt)],
        vec!["eval", "--dataset", p(&val), "--checkpoint", p(&ckpt), "--partition", p(&part), "--out", p(&eval_dir)],
        vec!["predict", "--dataset", p(&val), "--checkpoint", p(&ckpt), "--out", p(&preds)],
        vec!["plot", "--predictions", p(&preds), "--partition", p(&part), "--out", p(&svg)],
    ];
    for step in steps {
        let mut args = vec!["--seed", "3", "--config", c];
        args.extend(step);
        let o = trajformer(&args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }

    let log = std::fs::read_to_string(dir.path().join("model.metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["seed"], 3);
        assert!(v["report"]["total"].as_f64().unwrap().is_finite());
    }

    let read = |path: &Path| -> serde_json::Value { serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap() };
    let ck = read(&ckpt);
    assert_eq!(ck["meta"]["seed"], 3);
    assert_eq!(ck["meta"]["epochs"], 2);
    assert_eq!(ck["meta"]["train_config"]["model"]["k"], 6);
    assert_eq!(read(&part)["seed"], 3);
    assert_eq!(read(&part)["config"]["seed"], 3);

    let metrics = read(&eval_dir.join("metrics.json"));
    assert_eq!(metrics["seed"], 3);
    assert_eq!(metrics["report"]["metrics"]["cases"], 6);
    let mr = metrics["report"]["metrics"]["miss_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mr));
    let csv = std::fs::read_to_string(eval_dir.join("mr_matrix.csv")).unwrap();
    assert!(csv.starts_with("# seed 3"));

    let pf = read(&preds);
    assert_eq!(pf["seed"], 3);
    assert_eq!(pf["cases"].as_array().unwrap().len(), 6);
    assert_eq!(pf["cases"][0]["selection"]["indices"].as_array().unwrap().len(), 6);

    let svg = std::fs::read_to_string(&svg).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let meta = doc.descendants().find(|n| n.has_tag_name("metadata")).unwrap();
    assert!(meta.text().unwrap().contains("\"seed\":3"));
    let classes: std::collections::BTreeSet<_> = doc
        .descendants()
        .filter_map(|n| n.attribute("class"))
        .filter(|c| c.starts_with("region-"))
        .collect();
    assert_eq!(classes.len(), 3);
}
