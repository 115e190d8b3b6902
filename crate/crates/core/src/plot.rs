//! Standalone SVG scatter plots colored by cluster.

use std::fmt::Write;

use ndarray::Array2;

use crate::error::{Error, Result};

/// 20-color categorical palette; cluster `j` uses entry `j mod 20`.
pub const PALETTE: [&str; 20] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5", "#c49c94",
    "#f7b6d2", "#c7c7c7", "#dbdb8d", "#9edae5",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterSpec {
    /// `n × 2`
    pub points: Array2<f64>,
    pub labels: Vec<usize>,
    pub width: u32,
    pub height: u32,
    pub radius: f64,
    pub title: Option<String>,
}

impl ScatterSpec {
    pub fn new(points: Array2<f64>, labels: Vec<usize>) -> Self {
        Self {
            points,
            labels,
            width: 800,
            height: 800,
            radius: 3.0,
            title: None,
        }
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Axis range padded by 5% of its span on each side.
fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    let span = if hi > lo { hi - lo } else { 1.0 };
    (lo - 0.05 * span, hi + 0.05 * span)
}

pub fn render_scatter(spec: &ScatterSpec) -> Result<String> {
    if spec.points.ncols() != 2 {
        return Err(Error::Shape(format!(
            "scatter needs 2 columns, got {}",
            spec.points.ncols()
        )));
    }
    if spec.points.nrows() != spec.labels.len() {
        return Err(Error::Shape(format!(
            "{} points but {} labels",
            spec.points.nrows(),
            spec.labels.len()
        )));
    }
    if spec.points.nrows() == 0 {
        return Err(Error::Data("nothing to plot".into()));
    }
    if let Some((row, _)) = spec
        .points
        .rows()
        .into_iter()
        .enumerate()
        .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Data(format!("non-finite coordinate in row {row}")));
    }
    if spec.width == 0 || spec.height == 0 || spec.radius.is_nan() || spec.radius <= 0.0 {
        return Err(Error::Config(
            "plot size and marker radius must be positive".into(),
        ));
    }

    let (w, h) = (spec.width as f64, spec.height as f64);
    let (x0, x1) = padded_range(spec.points.column(0).iter().copied());
    let (y0, y1) = padded_range(spec.points.column(1).iter().copied());
    let px = |x: f64| (x - x0) / (x1 - x0) * w;
    let py = |y: f64| h - (y - y0) / (y1 - y0) * h;

    let mut clusters: Vec<usize> = spec.labels.clone();
    clusters.sort_unstable();
    clusters.dedup();

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        spec.width, spec.height, spec.width, spec.height
    );
    if let Some(title) = &spec.title {
        let _ = writeln!(svg, "<title>{}</title>", escape(title));
    }
    let _ = writeln!(
        svg,
        r##"<rect x="0" y="0" width="{}" height="{}" fill="#ffffff" stroke="#333333" stroke-width="1"/>"##,
        spec.width, spec.height
    );
    if (x0..=x1).contains(&0.0) {
        let _ = writeln!(
            svg,
            r##"<line x1="{0:.3}" y1="0" x2="{0:.3}" y2="{1}" stroke="#dddddd" stroke-width="1"/>"##,
            px(0.0),
            spec.height
        );
    }
    if (y0..=y1).contains(&0.0) {
        let _ = writeln!(
            svg,
            r##"<line x1="0" y1="{0:.3}" x2="{1}" y2="{0:.3}" stroke="#dddddd" stroke-width="1"/>"##,
            py(0.0),
            spec.width
        );
    }
    let _ = writeln!(svg, r#"<g id="points">"#);
    for (row, &label) in spec.points.rows().into_iter().zip(&spec.labels) {
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.3}" cy="{:.3}" r="{}" fill="{}" fill-opacity="0.8" class="c{}"/>"#,
            px(row[0]),
            py(row[1]),
            spec.radius,
            PALETTE[label % PALETTE.len()],
            label
        );
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(
        svg,
        r#"<g id="legend" font-family="sans-serif" font-size="12">"#
    );
    for (slot, &label) in clusters.iter().enumerate() {
        let y = 10 + 16 * slot;
        let _ = writeln!(
            svg,
            r##"<rect x="10" y="{y}" width="10" height="10" fill="{}"/><text x="26" y="{}" fill="#333333">cluster {label}</text>"##,
            PALETTE[label % PALETTE.len()],
            y + 9
        );
    }
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");
    Ok(svg)
}
