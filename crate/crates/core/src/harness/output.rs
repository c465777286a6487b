//! Sweep serialization (CSV, JSON) and SVG line charts.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sweep::{Dimension, SweepTable};
use super::HarnessError;
use crate::metrics::AggregateResult;
use crate::model::Minutes;

/// One line of the sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCsvRow {
    pub patients: u32,
    pub participation: f64,
    pub n_seeds: usize,
    pub mean_delivery: f64,
    pub sem_delivery: f64,
    pub mean_latency_min: Option<f64>,
    pub sem_latency_min: Option<f64>,
    pub max_latency_min: Option<Minutes>,
    pub seeds_no_delivery: usize,
}

impl From<&AggregateResult> for SweepCsvRow {
    fn from(a: &AggregateResult) -> Self {
        SweepCsvRow {
            patients: a.point.patients,
            participation: a.point.participation,
            n_seeds: a.n_seeds,
            mean_delivery: a.mean_delivery,
            sem_delivery: a.sem_delivery,
            mean_latency_min: a.mean_latency,
            sem_latency_min: a.sem_latency,
            max_latency_min: a.max_latency,
            seeds_no_delivery: a.seeds_no_delivery,
        }
    }
}

impl SweepCsvRow {
    pub fn x(&self, dim: Dimension) -> f64 {
        match dim {
            Dimension::Patients => f64::from(self.patients),
            Dimension::Participation => self.participation,
        }
    }
}

pub fn write_sweep_csv<W: Write>(table: &SweepTable, writer: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(writer);
    for row in &table.rows {
        w.serialize(SweepCsvRow::from(row))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(reader: R) -> Result<Vec<SweepCsvRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(reader);
    Ok(r.deserialize().collect::<Result<Vec<SweepCsvRow>, _>>()?)
}

pub fn write_sweep_json<W: Write>(table: &SweepTable, writer: W) -> Result<(), HarnessError> {
    serde_json::to_writer_pretty(writer, table)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Delivery,
    Latency,
}

impl Metric {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "delivery" => Some(Metric::Delivery),
            "latency" => Some(Metric::Latency),
            _ => None,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Metric::Delivery => "delivery",
            Metric::Latency => "latency",
        }
    }

    fn axis_title(self) -> &'static str {
        match self {
            Metric::Delivery => "Mean delivery",
            Metric::Latency => "Mean delivery latency (h)",
        }
    }

    /// (value, error bar) for a row, if defined.
    fn value(self, row: &SweepCsvRow) -> Option<(f64, f64)> {
        match self {
            Metric::Delivery => Some((row.mean_delivery, row.sem_delivery)),
            Metric::Latency => row
                .mean_latency_min
                .map(|m| (m / 60.0, row.sem_latency_min.unwrap_or(0.0) / 60.0)),
        }
    }
}

pub struct Series {
    pub label: String,
    /// (x, y, error)
    pub points: Vec<(f64, f64, f64)>,
}

/// Chart of `metric` against `x`, one series per value of the other swept
/// variable.
pub fn chart_series(rows: &[SweepCsvRow], metric: Metric, x: Dimension) -> Vec<Series> {
    let other = match x {
        Dimension::Patients => Dimension::Participation,
        Dimension::Participation => Dimension::Patients,
    };
    let mut keys: Vec<f64> = rows.iter().map(|r| r.x(other)).collect();
    keys.sort_by(f64::total_cmp);
    keys.dedup();
    keys.into_iter()
        .map(|k| {
            let mut points: Vec<(f64, f64, f64)> = rows
                .iter()
                .filter(|r| r.x(other) == k)
                .filter_map(|r| metric.value(r).map(|(y, e)| (r.x(x), y, e)))
                .collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series {
                label: format!("{other} = {k}"),
                points,
            }
        })
        .collect()
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Renders a line chart with SEM error bars. X ticks sit at every distinct x.
pub fn render_svg(series: &[Series], x_title: &str, y_title: &str, title: &str) -> String {
    let mut xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let (x_min, x_max) = match (xs.first(), xs.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        (Some(&a), _) => (a - 0.5, a + 0.5),
        _ => (0.0, 1.0),
    };
    let y_hi = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1 + p.2))
        .fold(0.0, f64::max);
    let y_max = if y_hi > 0.0 { y_hi * 1.05 } else { 1.0 };

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |y: f64| MARGIN_T + plot_h - y / y_max * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{title}</text>"#,
        WIDTH / 2.0
    );
    // axes
    let (x0, y0) = (MARGIN_L, MARGIN_T + plot_h);
    let _ = writeln!(
        svg,
        r#"<line x1="{x0}" y1="{y0}" x2="{}" y2="{y0}" stroke="black"/>"#,
        MARGIN_L + plot_w
    );
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{MARGIN_T}" x2="{x0}" y2="{y0}" stroke="black"/>"#);
    for &x in &xs {
        let px = sx(x);
        let _ = writeln!(
            svg,
            r#"<g class="xtick"><line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{}" stroke="black"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text></g>"#,
            y0 + 5.0,
            y0 + 20.0,
            fmt_tick(x)
        );
    }
    for k in 0..=5 {
        let v = y_max * f64::from(k) / 5.0;
        let py = sy(v);
        let _ = writeln!(
            svg,
            r#"<g class="ytick"><line x1="{}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text></g>"#,
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0,
            fmt_tick(v)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{x_title}</text>"#,
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{y_title}</text>"#,
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0
    );

    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y, _)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        for &(x, y, e) in &s.points {
            let px = sx(x);
            let (top, bottom) = (sy(y + e), sy((y - e).max(0.0)));
            let _ = writeln!(
                svg,
                r#"<line class="errbar" x1="{px:.2}" y1="{top:.2}" x2="{px:.2}" y2="{bottom:.2}" stroke="{color}"/><circle cx="{px:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sy(y)
            );
        }
        if series.len() > 1 {
            let ly = MARGIN_T + 14.0 * i as f64;
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#,
                WIDTH - MARGIN_R - 4.0,
                s.label
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn plot_rows(rows: &[SweepCsvRow], metric: Metric, x: Dimension) -> String {
    let series = chart_series(rows, metric, x);
    let x_title = match x {
        Dimension::Patients => "Number of patients",
        Dimension::Participation => "Participation ratio",
    };
    render_svg(&series, x_title, metric.axis_title(), &format!("{} vs {x}", metric.axis_title()))
}

/// Writes `delivery_vs_<x>.svg` and `latency_vs_<x>.svg` for each swept
/// dimension into `dir`.
pub fn write_plots(table: &SweepTable, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir)?;
    let rows: Vec<SweepCsvRow> = table.rows.iter().map(SweepCsvRow::from).collect();
    let mut written = Vec::new();
    for &x in &table.varied {
        for metric in [Metric::Delivery, Metric::Latency] {
            let path = dir.join(format!("{}_vs_{}.svg", metric.label(), x.label()));
            fs::write(&path, plot_rows(&rows, metric, x))?;
            written.push(path);
        }
    }
    Ok(written)
}
