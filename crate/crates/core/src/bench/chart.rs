//! Minimal deterministic SVG charts.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChartKind {
    Line,
    /// One bar per point of every series, labelled with the series name.
    Bar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Fixed-precision coordinate, so output bytes do not depend on float noise.
fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn span(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Renders the chart as an 800×500 SVG string.
pub fn render_chart(series: &[Series], kind: ChartKind, title: &str) -> Result<String> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::config("cannot chart an empty series list"));
    }
    if series.iter().flat_map(|s| &s.points).any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::config("chart points must be finite"));
    }
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
    let (ymin, ymax) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
    let (ymin, ymax) = match kind {
        ChartKind::Bar => span(ymin.min(0.0), ymax.max(0.0)),
        ChartKind::Line => span(ymin, ymax),
    };
    let sy = |y: f64| MARGIN_TOP + plot_h * (1.0 - (y - ymin) / (ymax - ymin));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="800" height="500" viewBox="0 0 800 500" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#, fmt(WIDTH / 2.0), escape(title));
    // axes
    let (x0, y0, x1, y1) = (MARGIN_LEFT, MARGIN_TOP, MARGIN_LEFT + plot_w, MARGIN_TOP + plot_h);
    let _ = writeln!(svg, r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, fmt(x0), fmt(y1), fmt(x1), fmt(y1));
    let _ = writeln!(svg, r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, fmt(x0), fmt(y0), fmt(x0), fmt(y1));
    for i in 0..=4 {
        let v = ymin + (ymax - ymin) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            fmt(x0 - 6.0),
            fmt(sy(v) + 4.0),
            escape(&format!("{v:.4}"))
        );
    }

    match kind {
        ChartKind::Line => {
            let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
            let (xmin, xmax) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            let (xmin, xmax) = span(xmin, xmax);
            let sx = |x: f64| MARGIN_LEFT + plot_w * (x - xmin) / (xmax - xmin);
            for (label, v) in [(xmin, xmin), (xmax, xmax)] {
                let _ = writeln!(
                    svg,
                    r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                    fmt(sx(v)),
                    fmt(y1 + 18.0),
                    escape(&format!("{label}"))
                );
            }
            for (i, s) in series.iter().enumerate() {
                let color = PALETTE[i % PALETTE.len()];
                let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{},{}", fmt(sx(x)), fmt(sy(y)))).collect();
                let _ = writeln!(
                    svg,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                    pts.join(" ")
                );
                let ly = MARGIN_TOP + 16.0 * i as f64;
                let _ = writeln!(
                    svg,
                    r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
                    fmt(x1 + 10.0),
                    fmt(ly + 4.0),
                    escape(&s.name)
                );
            }
        }
        ChartKind::Bar => {
            let bars: Vec<(usize, &str, f64)> = series
                .iter()
                .enumerate()
                .flat_map(|(i, s)| s.points.iter().map(move |p| (i, s.name.as_str(), p.1)))
                .collect();
            let slot = plot_w / bars.len() as f64;
            let base = sy(0.0);
            for (b, (i, name, y)) in bars.iter().enumerate() {
                let color = PALETTE[i % PALETTE.len()];
                let top = sy(*y).min(base);
                let h = (sy(*y) - base).abs();
                let x = MARGIN_LEFT + slot * b as f64 + slot * 0.15;
                let _ = writeln!(
                    svg,
                    r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{color}"/>"#,
                    fmt(x),
                    fmt(top),
                    fmt(slot * 0.7),
                    fmt(h)
                );
                let cx = x + slot * 0.35;
                let _ = writeln!(
                    svg,
                    r#"<text x="{}" y="{}" text-anchor="end" transform="rotate(-30 {} {})">{}</text>"#,
                    fmt(cx),
                    fmt(y1 + 14.0),
                    fmt(cx),
                    fmt(y1 + 14.0),
                    escape(name)
                );
            }
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes the chart to `path`.
pub fn emit_chart(series: &[Series], kind: ChartKind, title: &str, path: impl AsRef<Path>) -> Result<()> {
    let svg = render_chart(series, kind, title)?;
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_line_has_one_polyline_with_two_points() {
        let svg = render_chart(&[Series::new("a", vec![(0.0, 0.0), (1.0, 1.0)])], ChartKind::Line, "t").unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        let pts = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(pts.split(' ').count(), 2);
        assert!(svg.contains(r#"viewBox="0 0 800 500""#));
    }

    #[test]
    fn six_bars_make_six_rects() {
        let series: Vec<Series> = (0..6).map(|i| Series::new(format!("m{i}"), vec![(0.0, i as f64 * 0.1)])).collect();
        let svg = render_chart(&series, ChartKind::Bar, "mse").unwrap();
        assert_eq!(svg.matches("<rect").count(), 6);
    }

    #[test]
    fn output_is_deterministic_and_empty_input_refused() {
        let s = [Series::new("x<y", vec![(0.0, 2.0), (3.0, -1.0)]), Series::new("b", vec![(1.0, 1.0)])];
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("1.svg"), dir.path().join("2.svg"));
        emit_chart(&s, ChartKind::Line, "t", &p1).unwrap();
        emit_chart(&s, ChartKind::Line, "t", &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert!(std::fs::read_to_string(&p1).unwrap().contains("x&lt;y"));
        assert!(render_chart(&[], ChartKind::Line, "t").is_err());
        assert!(render_chart(&[Series::new("e", vec![])], ChartKind::Bar, "t").is_err());
    }

    #[test]
    fn constant_series_still_renders() {
        let svg = render_chart(&[Series::new("c", vec![(1.0, 0.5), (1.0, 0.5)])], ChartKind::Line, "t").unwrap();
        assert!(!svg.contains("NaN"));
    }
}
