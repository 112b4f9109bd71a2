//! Projection outputs: point capping, the points CSV and an SVG scatter.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::TsneError;
use crate::rng;

pub const SVG_WIDTH: u32 = 1200;
pub const SVG_HEIGHT: u32 = 800;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub dataset_id: String,
    pub emotion: String,
}

/// Indices (sorted) of at most `cap` points, allocated to `(dataset, emotion)`
/// strata in proportion to their size by largest remainder and sampled
/// within each stratum from its own seeded stream.
pub fn stratified_cap(strata: &[(String, String)], cap: usize, seed: u64) -> Vec<usize> {
    let n = strata.len();
    if n <= cap {
        return (0..n).collect();
    }
    let mut groups: BTreeMap<&(String, String), Vec<usize>> = BTreeMap::new();
    for (i, key) in strata.iter().enumerate() {
        groups.entry(key).or_default().push(i);
    }
    let mut quotas: Vec<(usize, f64)> = groups
        .values()
        .map(|members| {
            let exact = cap as f64 * members.len() as f64 / n as f64;
            (exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut spare = cap - quotas.iter().map(|q| q.0).sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..quotas.len()).collect();
    by_remainder.sort_by(|&a, &b| quotas[b].1.total_cmp(&quotas[a].1).then(a.cmp(&b)));
    for g in by_remainder {
        if spare == 0 {
            break;
        }
        quotas[g].0 += 1;
        spare -= 1;
    }
    let mut keep = Vec::with_capacity(cap);
    for ((key, members), (quota, _)) in groups.iter().zip(&quotas) {
        let mut stream = rng::stream(seed, &["tsne-cap", &key.0, &key.1]);
        keep.extend(index::sample(&mut stream, members.len(), *quota).into_iter().map(|k| members[k]));
    }
    keep.sort_unstable();
    keep
}

pub fn write_points_csv(path: &Path, points: &[ProjectedPoint]) -> Result<(), TsneError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| TsneError::Output(e.to_string()))?;
    for p in points {
        w.serialize(p).map_err(|e| TsneError::Output(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_points_csv(path: &Path) -> Result<Vec<ProjectedPoint>, TsneError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| TsneError::Output(e.to_string()))?;
    r.deserialize()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| TsneError::Output(e.to_string()))
}

const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#393b79", "#ad494a",
];

fn glyph(shape: usize, x: f64, y: f64, color: &str) -> String {
    let r = 3.5;
    match shape % 6 {
        0 => format!(r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{color}"/>"#),
        1 => format!(
            r#"<rect x="{:.2}" y="{:.2}" width="{}" height="{}" fill="{color}"/>"#,
            x - r,
            y - r,
            2.0 * r,
            2.0 * r
        ),
        2 => format!(
            r#"<polygon points="{x:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}"/>"#,
            y - r,
            x - r,
            y + r,
            x + r,
            y + r
        ),
        3 => format!(
            r#"<polygon points="{x:.2},{:.2} {:.2},{y:.2} {x:.2},{:.2} {:.2},{y:.2}" fill="{color}"/>"#,
            y - r,
            x + r,
            y + r,
            x - r
        ),
        4 => format!(
            r#"<path d="M{:.2},{:.2}L{:.2},{:.2}M{:.2},{:.2}L{:.2},{:.2}" stroke="{color}" stroke-width="1.5"/>"#,
            x - r,
            y - r,
            x + r,
            y + r,
            x - r,
            y + r,
            x + r,
            y - r
        ),
        _ => format!(r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="none" stroke="{color}" stroke-width="1.5"/>"#),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Scatter plot with one color per dataset and one glyph per emotion, plus legends.
pub fn render_svg(points: &[ProjectedPoint]) -> String {
    let datasets: Vec<&str> = {
        let mut d: Vec<&str> = points.iter().map(|p| p.dataset_id.as_str()).collect();
        d.sort_unstable();
        d.dedup();
        d
    };
    let emotions: Vec<&str> = {
        let mut e: Vec<&str> = points.iter().map(|p| p.emotion.as_str()).collect();
        e.sort_unstable();
        e.dedup();
        e
    };
    let (left, top, plot_w, plot_h) = (40.0, 40.0, 900.0, 720.0);
    let (min_x, max_x) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.x), hi.max(p.x)));
    let (min_y, max_y) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.y), hi.max(p.y)));
    let span_x = (max_x - min_x).max(1e-12);
    let span_y = (max_y - min_y).max(1e-12);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r##"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#cccccc"/>"##
    );
    for p in points {
        let d = datasets.binary_search(&p.dataset_id.as_str()).unwrap_or(0);
        let e = emotions.binary_search(&p.emotion.as_str()).unwrap_or(0);
        let x = left + (p.x - min_x) / span_x * plot_w;
        let y = top + plot_h - (p.y - min_y) / span_y * plot_h;
        let _ = writeln!(svg, "{}", glyph(e, x, y, PALETTE[d % PALETTE.len()]));
    }
    let legend_x = left + plot_w + 40.0;
    let mut row = top + 10.0;
    let _ = writeln!(svg, r#"<text x="{legend_x}" y="{row}" font-family="sans-serif" font-size="14" font-weight="bold">dataset</text>"#);
    for (i, d) in datasets.iter().enumerate() {
        row += 20.0;
        let _ = writeln!(svg, "{}", glyph(0, legend_x + 5.0, row - 4.0, PALETTE[i % PALETTE.len()]));
        let _ = writeln!(svg, r#"<text x="{}" y="{row}" font-family="sans-serif" font-size="12">{}</text>"#, legend_x + 16.0, escape(d));
    }
    row += 36.0;
    let _ = writeln!(svg, r#"<text x="{legend_x}" y="{row}" font-family="sans-serif" font-size="14" font-weight="bold">emotion</text>"#);
    for (i, e) in emotions.iter().enumerate() {
        row += 20.0;
        let _ = writeln!(svg, "{}", glyph(i, legend_x + 5.0, row - 4.0, "#333333"));
        let _ = writeln!(svg, r#"<text x="{}" y="{row}" font-family="sans-serif" font-size="12">{}</text>"#, legend_x + 16.0, escape(e));
    }
    svg.push_str("</svg>\n");
    svg
}
