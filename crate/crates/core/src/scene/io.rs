//! Line-delimited JSON dataset files.
//!
//! An optional first line `{"header": {...}}` records the split, seed and
//! generator settings. Every other non-blank line is one scenario in world
//! coordinates.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::normalize::denormalize_scenario;
use super::types::{Dataset, Point, Polyline, Scenario, Split, Track};
use super::{GeneratorConfig, SceneError};

#[derive(Debug, Serialize, Deserialize)]
struct TrackRecord {
    points: Vec<Point>,
    #[serde(default)]
    valid: Option<Vec<bool>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioRecord {
    id: String,
    target_history: Vec<Point>,
    #[serde(default)]
    neighbor_histories: Vec<TrackRecord>,
    #[serde(default)]
    map_polylines: Vec<Polyline>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    future: Option<Vec<Point>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mode_label: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    split: Split,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    generator: Option<GeneratorConfig>,
}

const REQUIRED_FIELDS: [&str; 2] = ["id", "target_history"];

fn to_record(s: &Scenario) -> ScenarioRecord {
    let world = if s.frame.is_identity() { s.clone() } else { denormalize_scenario(s) };
    ScenarioRecord {
        id: world.id,
        target_history: world.target_history,
        neighbor_histories: world
            .neighbors
            .into_iter()
            .map(|t| TrackRecord {
                points: t.points,
                valid: Some(t.valid),
            })
            .collect(),
        map_polylines: world.map_polylines,
        future: world.future,
        mode_label: world.mode_label,
    }
}

fn from_record(r: ScenarioRecord, line: usize) -> Result<Scenario, SceneError> {
    let mut s = Scenario::new(r.id, r.target_history);
    for (i, t) in r.neighbor_histories.into_iter().enumerate() {
        let valid = t.valid.unwrap_or_else(|| vec![true; t.points.len()]);
        if valid.len() != t.points.len() {
            return Err(SceneError::Parse {
                line,
                message: format!("neighbor {i}: {} points but {} validity flags", t.points.len(), valid.len()),
            });
        }
        s.neighbors.push(Track { points: t.points, valid });
    }
    s.map_polylines = r.map_polylines;
    s.future = r.future;
    s.mode_label = r.mode_label;
    if s.all_points().iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(SceneError::Parse {
            line,
            message: "non-finite coordinate".into(),
        });
    }
    Ok(s)
}

pub fn write_dataset_to<W: Write>(dataset: &Dataset, mut w: W) -> Result<(), SceneError> {
    let header = DatasetHeader {
        split: dataset.split,
        seed: dataset.seed,
        generator: dataset.generator.clone(),
    };
    serde_json::to_writer(&mut w, &serde_json::json!({ "header": header }))?;
    w.write_all(b"\n")?;
    for s in &dataset.scenarios {
        serde_json::to_writer(&mut w, &to_record(s))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a dataset; scenarios come back in world coordinates with an
/// identity frame. A file without a header is read as the training split.
pub fn read_dataset_from<R: Read>(r: R) -> Result<Dataset, SceneError> {
    let mut dataset = Dataset::new(Split::Train, Vec::new());
    let mut seen = std::collections::HashSet::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| SceneError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let Value::Object(map) = &value else {
            return Err(SceneError::Parse {
                line: line_no,
                message: "record is not a JSON object".into(),
            });
        };
        if let Some(h) = map.get("header") {
            let header: DatasetHeader = serde_json::from_value(h.clone()).map_err(|e| SceneError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            dataset.split = header.split;
            dataset.seed = header.seed;
            dataset.generator = header.generator;
            continue;
        }
        if let Some(field) = REQUIRED_FIELDS.iter().find(|f| !map.contains_key(**f)) {
            return Err(SceneError::Schema {
                line: line_no,
                field: (*field).to_string(),
            });
        }
        let record: ScenarioRecord = serde_json::from_value(value).map_err(|e| SceneError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let s = from_record(record, line_no)?;
        if !seen.insert(s.id.clone()) {
            return Err(SceneError::Parse {
                line: line_no,
                message: format!("duplicate scenario id {}", s.id),
            });
        }
        dataset.scenarios.push(s);
    }
    Ok(dataset)
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<(), SceneError> {
    let mut buf = Vec::new();
    write_dataset_to(dataset, &mut buf)?;
    crate::write_atomic(path, &buf)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset, SceneError> {
    read_dataset_from(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_synthetic_dataset, normalize_scenario};

    #[test]
    fn empty_input_is_an_empty_dataset() {
        let d = read_dataset_from(&b""[..]).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn missing_field_names_it() {
        let text = b"{\"id\":\"a\",\"target_history\":[[0,0],[1,1]]}\n{\"id\":\"b\"}\n";
        match read_dataset_from(&text[..]) {
            Err(SceneError::Schema { line, field }) => {
                assert_eq!(line, 2);
                assert_eq!(field, "target_history");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = b"{\"id\":\"a\",\"target_history\":[[0,0]]}\n\n{\"id\": oops}\n";
        match read_dataset_from(&text[..]) {
            Err(SceneError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let cfg = crate::scene::GeneratorConfig {
            count: 12,
            ..Default::default()
        };
        let d = generate_synthetic_dataset(&cfg, 99, Split::Val).unwrap();
        let mut buf = Vec::new();
        write_dataset_to(&d, &mut buf).unwrap();
        let back = read_dataset_from(&buf[..]).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn normalized_scenarios_are_written_in_world_frame() {
        let cfg = crate::scene::GeneratorConfig {
            count: 3,
            ..Default::default()
        };
        let d = generate_synthetic_dataset(&cfg, 5, Split::Train).unwrap();
        let mut n = d.clone();
        n.scenarios = n.scenarios.iter().map(|s| normalize_scenario(s).unwrap()).collect();
        let mut buf = Vec::new();
        write_dataset_to(&n, &mut buf).unwrap();
        let back = read_dataset_from(&buf[..]).unwrap();
        for (a, b) in d.scenarios.iter().zip(&back.scenarios) {
            for (p, q) in a.all_points().iter().zip(b.all_points()) {
                assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
            }
        }
    }
}
