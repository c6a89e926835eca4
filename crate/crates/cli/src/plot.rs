//! Self-contained SVG line plots of sweep summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

pub const SUMMARY_HEADER: [&str; 5] = ["axis_value", "metric_name", "mean", "std", "trial_count"];

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("line {line}: {reason}")]
    Header { line: usize, reason: String },

    #[error("line {line}, column {column} ({name}): {reason}")]
    Cell {
        line: usize,
        column: usize,
        name: &'static str,
        reason: String,
    },

    #[error("line {line}: expected {expected} columns, found {found}")]
    Columns { line: usize, expected: usize, found: usize },

    #[error("nothing to plot: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub axis_value: f64,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub trial_count: usize,
}

/// Parse a sweep summary CSV, reporting the first bad line and column.
pub fn parse_summary(text: &str) -> Result<Vec<Row>, PlotError> {
    if text.trim().is_empty() {
        return Err(PlotError::Empty("CSV has no header".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| PlotError::Header {
        line: 1,
        reason: e.to_string(),
    })?;
    if header.iter().ne(SUMMARY_HEADER) {
        return Err(PlotError::Header {
            line: 1,
            reason: format!(
                "expected header {:?}, found {:?}",
                SUMMARY_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| PlotError::Header {
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != SUMMARY_HEADER.len() {
            return Err(PlotError::Columns {
                line,
                expected: SUMMARY_HEADER.len(),
                found: record.len(),
            });
        }
        let cell = |column: usize, name: &'static str, reason: String| PlotError::Cell {
            line,
            column,
            name,
            reason,
        };
        let number = |column: usize, name: &'static str| -> Result<f64, PlotError> {
            let raw = &record[column - 1];
            raw.parse::<f64>()
                .map_err(|_| cell(column, name, format!("cannot parse {raw:?} as a number")))
        };
        let axis_value = number(1, "axis_value")?;
        if record[1].is_empty() {
            return Err(cell(2, "metric_name", "empty metric name".into()));
        }
        let mean = number(3, "mean")?;
        let std = number(4, "std")?;
        if std.is_nan() || std < 0.0 {
            return Err(cell(4, "std", format!("must be >= 0, got {std}")));
        }
        let trial_count = record[4]
            .parse::<usize>()
            .map_err(|_| cell(5, "trial_count", format!("cannot parse {:?} as a count", &record[4])))?;
        rows.push(Row {
            axis_value,
            metric: record[1].to_string(),
            mean,
            std,
            trial_count,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub metric: String,
    pub label: String,
    /// Plot against the right-hand axis.
    pub secondary: bool,
}

impl Series {
    pub fn new(metric: &str, label: &str) -> Self {
        Self {
            metric: metric.into(),
            label: label.into(),
            secondary: false,
        }
    }

    pub fn secondary(mut self) -> Self {
        self.secondary = true;
        self
    }
}

/// A straight line in log-log space, `y = exp(intercept) · x^slope`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitLine {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub y2_label: Option<String>,
    pub series: Vec<Series>,
    pub log_x: bool,
    pub log_y: bool,
    /// Axis values left out of the plot.
    pub exclude_axis: Vec<f64>,
    /// Take x from this metric's mean at each axis value instead of the axis value.
    pub x_metric: Option<String>,
    pub fit: Option<FitLine>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 80.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#c0392b", "#2471a3", "#1e8449", "#7d3c98", "#b9770e", "#566573"];

struct Point {
    x: f64,
    y: f64,
    lo: f64,
    hi: f64,
}

struct Prepared<'a> {
    series: &'a Series,
    points: Vec<Point>,
}

#[derive(Clone, Copy)]
struct Scale {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Scale {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Option<Self> {
        let (mut lo, mut hi) = values
            .filter(|v| v.is_finite() && (!log || *v > 0.0))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            return None;
        }
        if log {
            lo = lo.log10();
            hi = hi.log10();
            if hi - lo < 1e-12 {
                lo -= 0.5;
                hi += 0.5;
            }
        } else {
            if hi - lo < 1e-12 {
                let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
                lo -= pad;
                hi += pad;
            }
            let pad = (hi - lo) * 0.05;
            lo -= pad;
            hi += pad;
        }
        Some(Self { lo, hi, log })
    }

    fn unit(&self, v: f64) -> f64 {
        let v = if self.log { v.max(f64::MIN_POSITIVE).log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.floor() as i32, self.hi.ceil() as i32);
            let mut t = Vec::new();
            for e in a..=b {
                let mults: &[f64] = if b - a <= 2 { &[1.0, 2.0, 5.0] } else { &[1.0] };
                for m in mults {
                    let v = m * 10f64.powi(e);
                    let l = v.log10();
                    if l >= self.lo - 1e-9 && l <= self.hi + 1e-9 {
                        t.push(v);
                    }
                }
            }
            t
        } else {
            let span = self.hi - self.lo;
            let raw = span / 6.0;
            let mag = 10f64.powf(raw.log10().floor());
            let step = [1.0, 2.0, 5.0, 10.0]
                .iter()
                .map(|m| m * mag)
                .find(|s| span / s <= 7.0)
                .unwrap_or(10.0 * mag);
            let first = (self.lo / step - 1e-9).ceil() as i64;
            let last = (self.hi / step + 1e-9).floor() as i64;
            (first..=last).map(|k| k as f64 * step).collect()
        }
    }
}

fn label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e4).contains(&a) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn prepare<'a>(rows: &[Row], spec: &'a PlotSpec) -> Vec<Prepared<'a>> {
    let kept = |r: &&Row| !spec.exclude_axis.contains(&r.axis_value);
    spec.series
        .iter()
        .map(|series| {
            let mut points: Vec<Point> = rows
                .iter()
                .filter(kept)
                .filter(|r| r.metric == series.metric)
                .filter_map(|r| {
                    let x = match &spec.x_metric {
                        None => r.axis_value,
                        Some(m) => rows.iter().find(|o| o.metric == *m && o.axis_value == r.axis_value)?.mean,
                    };
                    Some(Point {
                        x,
                        y: r.mean,
                        lo: r.mean - r.std,
                        hi: r.mean + r.std,
                    })
                })
                .filter(|p| p.x.is_finite() && p.y.is_finite())
                .filter(|p| !spec.log_x || p.x > 0.0)
                .filter(|p| !spec.log_y || p.y > 0.0)
                .collect();
            points.sort_by(|a, b| a.x.total_cmp(&b.x));
            Prepared { series, points }
        })
        .collect()
}

/// Render the summary CSV as an SVG document.
pub fn render_plot(csv: &str, spec: &PlotSpec) -> Result<String, PlotError> {
    let rows = parse_summary(csv)?;
    if rows.is_empty() {
        return Err(PlotError::Empty("CSV has no data rows".into()));
    }
    if spec.series.is_empty() {
        return Err(PlotError::Empty("no series requested".into()));
    }
    let prepared = prepare(&rows, spec);
    if prepared.iter().all(|p| p.points.is_empty()) {
        let names: Vec<&str> = spec.series.iter().map(|s| s.metric.as_str()).collect();
        return Err(PlotError::Empty(format!("no plottable points for {}", names.join(", "))));
    }

    let all = || prepared.iter().flat_map(|p| p.points.iter());
    let xs = Scale::fit(all().map(|p| p.x), spec.log_x).expect("at least one point");
    let y_values = |secondary: bool| {
        prepared
            .iter()
            .filter(move |p| p.series.secondary == secondary)
            .flat_map(|p| p.points.iter())
            .flat_map(|p| [p.lo, p.y, p.hi])
    };
    let mut y1 = Scale::fit(y_values(false), spec.log_y);
    let y2 = Scale::fit(y_values(true), spec.log_y);
    if y1.is_none() {
        y1 = y2;
    }
    let y1 = y1.expect("at least one point");
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let px = |x: f64| LEFT + xs.unit(x) * pw;
    let py = |s: &Scale, y: f64| TOP + (1.0 - s.unit(y).clamp(-0.05, 1.05)) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="28" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(&spec.title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );

    for t in xs.ticks() {
        let x = px(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#e5e5e5"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 18.0,
            label(t)
        );
    }
    for t in y1.ticks() {
        let y = py(&y1, t);
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e5e5e5"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0,
            label(t)
        );
    }
    if let Some(y2) = &y2 {
        for t in y2.ticks() {
            let y = py(y2, t);
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="start">{}</text>"#,
                LEFT + pw + 6.0,
                y + 4.0,
                label(t)
            );
        }
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0,
        escape(&spec.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(20 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        TOP + ph / 2.0,
        escape(&spec.y_label)
    );
    if let (Some(_), Some(l)) = (&y2, &spec.y2_label) {
        let _ = writeln!(
            svg,
            r#"<text transform="translate({:.2} {:.2}) rotate(90)" text-anchor="middle">{}</text>"#,
            WIDTH - 20.0,
            TOP + ph / 2.0,
            escape(l)
        );
    }

    let _ = writeln!(
        svg,
        r#"<defs><clipPath id="plot-area"><rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}"/></clipPath></defs>"#
    );
    svg.push_str("<g clip-path=\"url(#plot-area)\">\n");
    let mut legend: Vec<(String, &str, bool)> = Vec::new();
    for (i, p) in prepared.iter().enumerate() {
        if p.points.is_empty() {
            continue;
        }
        let color = COLORS[i % COLORS.len()];
        let scale = if p.series.secondary { y2.unwrap_or(y1) } else { y1 };
        let upper: Vec<String> = p.points.iter().map(|q| format!("{:.2},{:.2}", px(q.x), py(&scale, q.hi))).collect();
        let lower: Vec<String> = p.points.iter().rev().map(|q| format!("{:.2},{:.2}", px(q.x), py(&scale, q.lo))).collect();
        let _ = writeln!(
            svg,
            r#"<polygon class="band" points="{} {}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = p.points.iter().map(|q| format!("{:.2},{:.2}", px(q.x), py(&scale, q.y))).collect();
        let dash = if p.series.secondary { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<polyline class="series" points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
            line.join(" ")
        );
        for q in &p.points {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                px(q.x),
                py(&scale, q.y)
            );
        }
        legend.push((escape(&p.series.label), color, p.series.secondary));
    }

    if let Some(fit) = spec.fit {
        let (a, b) = (xs.lo, xs.hi);
        let at = |l: f64| {
            let x = if xs.log { 10f64.powf(l) } else { l };
            (px(x), py(&y1, (fit.intercept + fit.slope * x.ln()).exp()))
        };
        let ((x0, y0), (x1, y1p)) = (at(a), at(b));
        let _ = writeln!(
            svg,
            r##"<line class="fit" x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y1p:.2}" stroke="#111" stroke-width="1.5" stroke-dasharray="3 3"/>"##
        );
        legend.push((
            format!("fit: β = {:.3}, R² = {:.3}", fit.slope, fit.r_squared),
            "#111",
            true,
        ));
    }

    svg.push_str("</g>\n");

    let lx = LEFT + pw - 210.0;
    for (i, (text, color, dashed)) in legend.iter().enumerate() {
        let y = TOP + 18.0 + 18.0 * i as f64;
        let dash = if *dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"{dash}/><text x="{:.2}" y="{:.2}">{text}</text>"#,
            lx + 24.0,
            lx + 30.0,
            y + 4.0
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Render and write; nothing is written when rendering fails.
pub fn write_plot(path: impl AsRef<Path>, csv: &str, spec: &PlotSpec) -> Result<(), PlotError> {
    let svg = render_plot(csv, spec)?;
    fs::write(path, svg)?;
    Ok(())
}
