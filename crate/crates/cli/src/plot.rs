use std::path::Path;

use anyhow::{anyhow, Result};
use plotters::prelude::*;

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

/// `sign(y)·log10(1 + |y|)`: keeps early costs in the thousands and late
/// negative costs readable on one axis.
pub fn signed_log(y: f64) -> f64 {
    y.signum() * y.abs().ln_1p() / std::f64::consts::LN_10
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

fn err<E: std::fmt::Display>(e: E) -> anyhow::Error {
    anyhow!("plot: {e}")
}

/// One named polyline of `(iteration, cost)` points.
pub struct Curve {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Cost against iteration on a signed-log axis, one line per curve.
pub fn training_curves(path: &Path, title: &str, curves: &[Curve]) -> Result<()> {
    let pts = || curves.iter().flat_map(|c| c.points.iter().filter(|p| p.1.is_finite()));
    let (x0, x1) = span(pts().map(|p| p.0));
    let (y0, y1) = span(pts().map(|p| signed_log(p.1)));
    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(err)?;
    chart
        .configure_mesh()
        .x_desc("iteration")
        .y_desc("evaluation cost, sign·log10(1+|c|)")
        .draw()
        .map_err(err)?;
    for (k, c) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let line = c.points.iter().filter(|p| p.1.is_finite()).map(|&(x, y)| (x, signed_log(y)));
        chart
            .draw_series(LineSeries::new(line, color.stroke_width(2)))
            .map_err(err)?
            .label(c.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    if !curves.is_empty() {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(err)?;
    }
    root.present().map_err(err)
}

/// Five-number summary of one group of samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

impl BoxStats {
    /// `None` when no finite samples remain.
    pub fn of(samples: &[f64]) -> Option<Self> {
        let mut v: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(Self {
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

/// Side-by-side box plots: one panel per metric, one box per group.
pub fn box_summary(path: &Path, groups: &[String], panels: &[(&str, Vec<Option<BoxStats>>)]) -> Result<()> {
    let root = SVGBackend::new(path, (420 * panels.len().max(1) as u32, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let areas = root.split_evenly((1, panels.len().max(1)));
    let n = groups.len().max(1) as f64;
    for ((title, stats), area) in panels.iter().zip(&areas) {
        let (y0, y1) = span(stats.iter().flatten().flat_map(|s| [s.min, s.max]));
        let mut chart = ChartBuilder::on(area)
            .caption(*title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(60)
            .build_cartesian_2d(-0.5..n - 0.5, y0..y1)
            .map_err(err)?;
        let names = groups.to_vec();
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(groups.len().max(1))
            .x_label_formatter(&move |x| {
                let i = x.round();
                if (x - i).abs() < 1e-6 && i >= 0.0 {
                    names.get(i as usize).cloned().unwrap_or_default()
                } else {
                    String::new()
                }
            })
            .draw()
            .map_err(err)?;
        for (k, s) in stats.iter().enumerate() {
            let Some(s) = s else { continue };
            let color = PALETTE[k % PALETTE.len()];
            let x = k as f64;
            let w = 0.25;
            chart
                .draw_series([
                    PathElement::new(vec![(x, s.min), (x, s.q1)], BLACK),
                    PathElement::new(vec![(x, s.q3), (x, s.max)], BLACK),
                    PathElement::new(vec![(x - w / 2.0, s.min), (x + w / 2.0, s.min)], BLACK),
                    PathElement::new(vec![(x - w / 2.0, s.max), (x + w / 2.0, s.max)], BLACK),
                ])
                .map_err(err)?;
            chart
                .draw_series([Rectangle::new([(x - w, s.q1), (x + w, s.q3)], color.mix(0.35).filled())])
                .map_err(err)?;
            chart
                .draw_series([
                    Rectangle::new([(x - w, s.q1), (x + w, s.q3)], color.stroke_width(1)),
                    Rectangle::new([(x - w, s.median), (x + w, s.median)], BLACK.stroke_width(2)),
                ])
                .map_err(err)?;
        }
    }
    root.present().map_err(err)
}
