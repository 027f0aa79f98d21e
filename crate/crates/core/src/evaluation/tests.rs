use proptest::prelude::*;

use super::*;
use crate::model::ModelConfig;
use crate::partition::{map_proposals_to_regions, PartitionMethod};
use crate::scene::{generate_synthetic_dataset, normalize_scenario, GeneratorConfig, Split};

fn line_to(end: Point, t: usize) -> Vec<Point> {
    (1..=t).map(|s| [end[0] * s as f64 / t as f64, end[1] * s as f64 / t as f64]).collect()
}

fn set(endpoints: &[Point], scores: &[f64]) -> PredictionSet {
    PredictionSet {
        trajectories: endpoints.iter().map(|e| line_to(*e, 4)).collect(),
        scores: scores.to_vec(),
    }
}

#[test]
fn nms_keeps_the_higher_scored_duplicate() {
    let p = set(&[[0.0, 10.0], [0.5, 10.0]], &[0.1, 0.9]);
    let s = nms_select(&p, 2.0, 1).unwrap();
    assert_eq!(s.indices, vec![1]);
    assert_eq!(s.final_threshold, 2.0);
}

#[test]
fn nms_separated_endpoints_are_top_by_score() {
    let ends: Vec<Point> = (0..6).map(|i| [i as f64 * 5.0, 0.0]).collect();
    let p = set(&ends, &[0.3, 2.0, -1.0, 1.0, 0.0, 5.0]);
    let s = nms_select(&p, 2.0, 3).unwrap();
    assert_eq!(s.indices, vec![5, 1, 3]);
    let total: f64 = confidences(&p.scores).iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn nms_relaxes_when_candidates_run_out() {
    // all endpoints within 1 m: the 2 m pass admits one, then 1 m, 0.5 m ...
    let p = set(&[[0.0, 0.0], [0.6, 0.0], [1.2, 0.0]], &[3.0, 2.0, 1.0]);
    let s = nms_select(&p, 2.0, 3).unwrap();
    assert_eq!(s.indices.len(), 3);
    assert_eq!(s.indices[0], 0);
    assert_eq!(s.final_threshold, 0.5);

    let same = set(&[[1.0, 1.0]; 4], &[0.0; 4]);
    let s = nms_select(&same, 2.0, 4).unwrap();
    assert_eq!(s.indices, vec![0, 1, 2, 3]);
    assert_eq!(s.final_threshold, 0.0);
}

#[test]
fn nms_rejects_impossible_requests() {
    let p = set(&[[0.0, 0.0]; 3], &[0.0; 3]);
    assert!(matches!(nms_select(&p, 2.0, 4), Err(EvalError::Config(_))));
    assert!(matches!(nms_select(&p, 2.0, 0), Err(EvalError::Config(_))));
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn nms_contract(
        pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -3.0f64..3.0), 6..20),
        k_out in 1usize..7,
    ) {
        let ends: Vec<Point> = pts.iter().map(|(x, y, _)| [*x, *y]).collect();
        let scores: Vec<f64> = pts.iter().map(|(_, _, s)| *s).collect();
        let p = set(&ends, &scores);
        let a = nms_select(&p, 2.0, k_out).unwrap();
        let b = nms_select(&p, 2.0, k_out).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.indices.len(), k_out);
        for i in 0..a.indices.len() {
            for j in 0..i {
                prop_assert!(dist(ends[a.indices[i]], ends[a.indices[j]]) >= a.final_threshold);
            }
        }
        // a larger budget only extends the selection
        if k_out < 6 {
            let more = nms_select(&p, 2.0, k_out + 1).unwrap();
            prop_assert_eq!(&more.indices[..k_out], a.indices.as_slice());
        }
    }
}

#[test]
fn metric_examples() {
    let gt = line_to([0.0, 20.0], 4);
    let exact = compute_metrics(&[gt.as_slice()], &gt, 2.0).unwrap();
    assert_eq!((exact.min_ade, exact.min_fde, exact.miss), (0.0, 0.0, false));

    let off = line_to([3.0, 20.0], 4);
    let c = compute_metrics(&[off.as_slice()], &gt, 2.0).unwrap();
    assert!(c.miss);
    // per-step offsets 0.75, 1.5, 2.25, 3.0
    assert!((c.min_ade - 7.5 / 4.0).abs() < 1e-12);

    let near: Vec<Point> = gt.iter().map(|p| [p[0] + 1.9, p[1]]).collect();
    let far: Vec<Point> = gt.iter().map(|p| [p[0] - 5.0, p[1]]).collect();
    let c = compute_metrics(&[far.as_slice(), near.as_slice()], &gt, 2.0).unwrap();
    assert!((c.min_fde - 1.9).abs() < 1e-12);
    assert!(!c.miss);
}

#[test]
fn miss_rate_threshold_extremes() {
    let gt = line_to([0.0, 20.0], 4);
    let exact = gt.clone();
    let off = line_to([0.1, 20.0], 4);
    let cases = vec![
        compute_metrics(&[exact.as_slice()], &gt, 0.0).unwrap(),
        compute_metrics(&[off.as_slice()], &gt, 0.0).unwrap(),
    ];
    assert_eq!(MetricsReport::aggregate(&cases, 1, 0.0).miss_rate, 0.5);
    let inf = compute_metrics(&[off.as_slice()], &gt, f64::INFINITY).unwrap();
    assert!(!inf.miss);
}

fn strip_partition() -> RegionPartition {
    RegionPartition {
        method: PartitionMethod::Kmeans,
        m: 3,
        centroids: vec![[-10.0, 10.0], [0.0, 20.0], [10.0, 10.0]],
        hulls: vec![Vec::new(); 3],
        fan: None,
    }
}

#[test]
fn mr_matrix_diagonal_zero_by_construction() {
    let part = strip_partition();
    let map = map_proposals_to_regions(6, 3).unwrap();
    let mut cases = Vec::new();
    // region i's proposals sit on centroid i; the truth sits on centroid j
    let ends: Vec<Point> = (0..6).map(|p| part.centroids[p / 2]).collect();
    for c in &part.centroids {
        cases.push((set(&ends, &[0.0; 6]), *c));
    }
    let mr = mr_matrix_from_predictions(&cases, &part, &map, 2.0).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(mr.cells[i][j], Some(if i == j { 0.0 } else { 1.0 }));
        }
    }
    assert_eq!(mr.mean_diagonal(), Some(0.0));
    assert_eq!(mr.mean_off_diagonal(), Some(1.0));

    // no case in region 2: that column is undefined
    let mr = mr_matrix_from_predictions(&cases[..2], &part, &map, 2.0).unwrap();
    assert!(mr.cells.iter().all(|row| row[2].is_none()));
    assert_eq!(mr.counts, vec![1, 1, 0]);
    assert!(mr.to_csv().lines().nth(1).unwrap().ends_with(','));
}

fn small_dataset() -> (Model, Dataset) {
    let gen = GeneratorConfig {
        count: 9,
        history_steps: 6,
        future_steps: 5,
        ..GeneratorConfig::default()
    };
    let mut data = generate_synthetic_dataset(&gen, 2, Split::Val).unwrap();
    data.scenarios = data.scenarios.iter().map(|s| normalize_scenario(s).unwrap()).collect();
    let cfg = ModelConfig {
        hidden_dim: 8,
        heads: 2,
        k: 6,
        m: 3,
        history_steps: 6,
        future_steps: 5,
        mlp_hidden: 8,
        ..ModelConfig::default()
    };
    (Model::new(cfg, 1).unwrap(), data)
}

#[test]
fn evaluation_ignores_case_order() {
    let (model, data) = small_dataset();
    let cfg = EvalConfig {
        k_out: 3,
        ..EvalConfig::default()
    };
    let (a, _) = evaluate_split(&model, &data, &cfg, Some(&strip_partition())).unwrap();
    let mut rev = data.clone();
    rev.scenarios.reverse();
    let (b, _) = evaluate_split(&model, &rev, &cfg, Some(&strip_partition())).unwrap();
    assert!((a.metrics.min_ade - b.metrics.min_ade).abs() < 1e-12);
    assert_eq!(a.metrics.miss_rate, b.metrics.miss_rate);
    assert_eq!(a.mr_matrix, b.mr_matrix);
    let cov = a.mode_coverage.unwrap();
    assert_eq!(cov.cases_per_mode.values().sum::<usize>(), 9);
    assert!(cov.per_mode.values().all(|v| *v >= cov.coverage));
}

#[test]
fn world_trajectories_match_the_frame() {
    let (model, data) = small_dataset();
    let s = &data.scenarios[0];
    let p = predict_case(&model, s, &EvalConfig::default()).unwrap();
    assert_eq!(p.world_trajectories.len(), 6);
    let first = p.selection.indices[0];
    let back = s.frame.apply(p.world_trajectories[0][0]);
    let orig = p.raw.trajectories[first][0];
    assert!((back[0] - orig[0]).abs() < 1e-9 && (back[1] - orig[1]).abs() < 1e-9);
}
