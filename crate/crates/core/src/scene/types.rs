use serde::{Deserialize, Serialize};

/// 2-D point in meters.
pub type Point = [f64; 2];

/// Semantic tag of a lane centerline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneTag {
    Through,
    LeftTurn,
    RightTurn,
    #[serde(other)]
    Other,
}

impl LaneTag {
    pub const COUNT: usize = 4;

    pub fn one_hot(self) -> [f64; Self::COUNT] {
        let mut v = [0.0; Self::COUNT];
        v[self as usize] = 1.0;
        v
    }

    /// Tag seen in a left/right mirror image.
    pub fn mirrored(self) -> Self {
        match self {
            LaneTag::LeftTurn => LaneTag::RightTurn,
            LaneTag::RightTurn => LaneTag::LeftTurn,
            t => t,
        }
    }
}

/// History of one neighbor vehicle. `valid[i] == false` marks an unobserved step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub points: Vec<Point>,
    pub valid: Vec<bool>,
}

impl Track {
    pub fn fully_valid(points: Vec<Point>) -> Self {
        let valid = vec![true; points.len()];
        Self { points, valid }
    }

    pub fn any_valid(&self) -> bool {
        self.valid.iter().any(|v| *v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<Point>,
    pub tag: LaneTag,
}

/// Rigid transform into the target-centric frame:
/// `p_local = R(rotation) * (p_world - origin)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationFrame {
    pub origin: Point,
    pub rotation: f64,
}

impl Default for NormalizationFrame {
    fn default() -> Self {
        Self::identity()
    }
}

impl NormalizationFrame {
    pub fn identity() -> Self {
        Self {
            origin: [0.0, 0.0],
            rotation: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.origin == [0.0, 0.0] && self.rotation == 0.0
    }

    pub fn apply(&self, p: Point) -> Point {
        rotate([p[0] - self.origin[0], p[1] - self.origin[1]], self.rotation)
    }

    pub fn invert(&self, p: Point) -> Point {
        let r = rotate(p, -self.rotation);
        [r[0] + self.origin[0], r[1] + self.origin[1]]
    }

    /// Frame equivalent to applying `self` and then `next`.
    pub fn then(&self, next: &NormalizationFrame) -> NormalizationFrame {
        let shift = rotate(next.origin, -self.rotation);
        NormalizationFrame {
            origin: [self.origin[0] + shift[0], self.origin[1] + shift[1]],
            rotation: self.rotation + next.rotation,
        }
    }
}

pub(crate) fn rotate(p: Point, angle: f64) -> Point {
    if angle == 0.0 {
        return p;
    }
    let (s, c) = angle.sin_cos();
    [p[0] * c - p[1] * s, p[0] * s + p[1] * c]
}

pub(crate) fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// One prediction case.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub target_history: Vec<Point>,
    pub target_valid: Vec<bool>,
    pub neighbors: Vec<Track>,
    pub map_polylines: Vec<Polyline>,
    pub future: Option<Vec<Point>>,
    /// Generator's hidden mode index; evaluation only.
    pub mode_label: Option<usize>,
    /// Maps the coordinates the scenario was loaded with to the current ones.
    pub frame: NormalizationFrame,
    /// Set when the target never moved and the heading was undefined.
    pub heading_degenerate: bool,
}

impl Scenario {
    pub fn new(id: impl Into<String>, target_history: Vec<Point>) -> Self {
        let n = target_history.len();
        Self {
            id: id.into(),
            target_history,
            target_valid: vec![true; n],
            neighbors: Vec::new(),
            map_polylines: Vec::new(),
            future: None,
            mode_label: None,
            frame: NormalizationFrame::identity(),
            heading_degenerate: false,
        }
    }

    /// Applies `f` to every coordinate (histories, map, future).
    pub(crate) fn map_points(&mut self, mut f: impl FnMut(Point) -> Point) {
        for p in &mut self.target_history {
            *p = f(*p);
        }
        for t in &mut self.neighbors {
            for p in &mut t.points {
                *p = f(*p);
            }
        }
        for pl in &mut self.map_polylines {
            for p in &mut pl.points {
                *p = f(*p);
            }
        }
        if let Some(fut) = &mut self.future {
            for p in fut {
                *p = f(*p);
            }
        }
    }

    pub fn all_points(&self) -> Vec<Point> {
        let mut out = self.target_history.clone();
        for t in &self.neighbors {
            out.extend_from_slice(&t.points);
        }
        for pl in &self.map_polylines {
            out.extend_from_slice(&pl.points);
        }
        if let Some(f) = &self.future {
            out.extend_from_slice(f);
        }
        out
    }

    pub fn gt_endpoint(&self) -> Option<Point> {
        self.future.as_ref().and_then(|f| f.last().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scenarios: Vec<Scenario>,
    pub split: Split,
    pub seed: Option<u64>,
    pub generator: Option<super::GeneratorConfig>,
}

impl Dataset {
    pub fn new(split: Split, scenarios: Vec<Scenario>) -> Self {
        Self {
            scenarios,
            split,
            seed: None,
            generator: None,
        }
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }
}
