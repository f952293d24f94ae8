//! SVG line charts for the window and graph-size sweeps.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::evaluate::BucketScore;
use crate::pipeline::{AblationReport, Suite};

/// One named line over categorical x positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

const COLORS: [RGBColor; 6] = [BLUE, RED, GREEN, MAGENTA, CYAN, BLACK];

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Config(format!("plot: {e}"))
}

/// Draws `series` against the categories `x` and writes an SVG file.
pub fn line_chart(path: &Path, title: &str, x_desc: &str, y_desc: &str, x: &[String], series: &[Series]) -> Result<()> {
    if x.is_empty() || series.is_empty() {
        return Err(Error::Config("plot: nothing to draw".into()));
    }
    let finite = series.iter().flat_map(|s| s.values.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let pad = ((hi - lo) * 0.1).max(1.0);
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(-0.5f64..(x.len() as f64 - 0.5), (lo - pad).max(0.0)..(hi + pad))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_desc)
        .y_desc(y_desc)
        .x_labels(x.len())
        .x_label_formatter(&|v| {
            let i = v.round();
            if (v - i).abs() < 1e-6 && i >= 0.0 {
                x.get(i as usize).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .draw()
        .map_err(plot_err)?;
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<(f64, f64)> = s.values.iter().enumerate().filter(|(_, v)| v.is_finite()).map(|(i, &v)| (i as f64, v)).collect();
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(s.name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        chart.draw_series(pts.into_iter().map(|p| Circle::new(p, 4, color.filled()))).map_err(plot_err)?;
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Mean BLEU-4 per window size from a window-suite report.
pub fn window_chart(report: &AblationReport, path: &Path) -> Result<()> {
    if report.suite != Suite::Window {
        return Err(Error::Config(format!("expected a window suite report, got {}", report.suite)));
    }
    let x: Vec<String> = report.means.iter().map(|m| m.variant.trim_start_matches("w=").to_string()).collect();
    let series = vec![
        Series { name: "BLEU-4".into(), values: report.means.iter().map(|m| m.bleu4).collect() },
        Series { name: "chrF++".into(), values: report.means.iter().map(|m| m.chrf_pp).collect() },
    ];
    line_chart(path, "Copy window size", "window", "score", &x, &series)
}

/// BLEU-4 per graph-size bucket; one line per named run. Empty buckets are skipped.
pub fn kg_size_chart(runs: &[(String, Vec<BucketScore>)], path: &Path) -> Result<()> {
    let first = runs.first().ok_or_else(|| Error::Config("plot: no bucket tables".into()))?;
    let x: Vec<String> = first.1.iter().map(|b| b.bucket.clone()).collect();
    let series = runs
        .iter()
        .map(|(name, r)| Series { name: name.clone(), values: r.iter().map(|b| if b.graphs == 0 { f64::NAN } else { b.bleu4 }).collect() })
        .collect::<Vec<_>>();
    line_chart(path, "BLEU-4 by graph size", "triplets", "BLEU-4", &x, &series)
}
