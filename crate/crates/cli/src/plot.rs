//! SVG scatter of predicted endpoints in the normalized frame.

use std::fmt::Write;

use trajformer_core::evaluation::{confidences, CasePrediction};
use trajformer_core::partition::{ProposalRegionMap, RegionPartition};
use trajformer_core::scene::Point;

const SIZE: f64 = 640.0;
const MARGIN: f64 = 40.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Endpoints of every proposal whose confidence is not below uniform,
/// grouped by the region the proposal belongs to.
pub fn visible_endpoints(cases: &[CasePrediction], map: &ProposalRegionMap) -> Vec<Vec<Point>> {
    let mut groups = vec![Vec::new(); map.m];
    let uniform = 1.0 / map.k as f64;
    for case in cases {
        let conf = confidences(&case.raw.scores);
        for (i, c) in conf.iter().enumerate() {
            // equal scores round to within an ulp of 1/K; those stay visible
            if *c < uniform - 1e-12 {
                continue;
            }
            groups[map.region_of(i)].push(case.raw.endpoint(i));
        }
    }
    groups
}

struct Frame {
    min: Point,
    max: Point,
    scale: f64,
}

impl Frame {
    fn new(points: impl Iterator<Item = Point>) -> Self {
        let mut min = [0.0f64, 0.0f64];
        let mut max = [0.0f64, 0.0f64];
        for p in points {
            for a in 0..2 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        for a in 0..2 {
            if max[a] - min[a] < 20.0 {
                let mid = (max[a] + min[a]) / 2.0;
                min[a] = mid - 10.0;
                max[a] = mid + 10.0;
            }
        }
        let span = (max[0] - min[0]).max(max[1] - min[1]);
        Self {
            min,
            max,
            scale: (SIZE - 2.0 * MARGIN) / span,
        }
    }

    fn px(&self, p: Point) -> (f64, f64) {
        (MARGIN + (p[0] - self.min[0]) * self.scale, MARGIN + (self.max[1] - p[1]) * self.scale)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render_endpoint_plot(
    cases: &[CasePrediction],
    map: &ProposalRegionMap,
    partition: Option<&RegionPartition>,
    description: &str,
) -> String {
    let groups = visible_endpoints(cases, map);
    let overlay = partition
        .into_iter()
        .flat_map(|p| p.hulls.iter().flatten().chain(&p.centroids).copied().collect::<Vec<_>>());
    let frame = Frame::new(groups.iter().flatten().copied().chain(overlay));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(svg, "<metadata>{}</metadata>", escape(description));
    svg.push_str("<style>\n");
    for i in 0..map.m {
        let c = PALETTE[i % PALETTE.len()];
        let _ = writeln!(svg, ".region-{i} {{ fill: {c}; stroke: {c}; }}");
    }
    svg.push_str(".hull { fill-opacity: 0.08; stroke-width: 1; }\n.axis { stroke: #444; stroke-width: 1; }\n</style>\n");
    let _ = writeln!(svg, r##"<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="#ffffff"/>"##);

    let (ox, oy) = frame.px([0.0, 0.0]);
    let (x0, _) = frame.px([frame.min[0], 0.0]);
    let (x1, _) = frame.px([frame.max[0], 0.0]);
    let (_, y0) = frame.px([0.0, frame.min[1]]);
    let (_, y1) = frame.px([0.0, frame.max[1]]);
    let _ = writeln!(svg, r#"<line class="axis" x1="{x0:.2}" y1="{oy:.2}" x2="{x1:.2}" y2="{oy:.2}"/>"#);
    let _ = writeln!(svg, r#"<line class="axis" x1="{ox:.2}" y1="{y0:.2}" x2="{ox:.2}" y2="{y1:.2}"/>"#);
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="11">x {:.0} m</text>"#, x1 - 50.0, oy - 4.0, frame.max[0]);
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="11">y {:.0} m</text>"#, ox + 4.0, y1 + 12.0, frame.max[1]);

    for (i, points) in groups.iter().enumerate() {
        let _ = writeln!(svg, r#"<g class="region-{i}">"#);
        if let Some(p) = partition {
            if let Some(hull) = p.hulls.get(i).filter(|h| h.len() >= 3) {
                let pts: Vec<String> = hull
                    .iter()
                    .map(|q| {
                        let (x, y) = frame.px(*q);
                        format!("{x:.2},{y:.2}")
                    })
                    .collect();
                let _ = writeln!(svg, r#"<polygon class="hull" points="{}"/>"#, pts.join(" "));
            }
            if let Some(c) = p.centroids.get(i) {
                let (x, y) = frame.px(*c);
                let _ = writeln!(svg, r##"<rect x="{:.2}" y="{:.2}" width="8" height="8" stroke="#000"/>"##, x - 4.0, y - 4.0);
            }
        }
        for q in points {
            let (x, y) = frame.px(*q);
            let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2" fill-opacity="0.6"/>"#);
        }
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    svg
}
