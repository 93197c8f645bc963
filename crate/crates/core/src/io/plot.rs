//! Optional SVG renderings of the sweep and convergence results.

use std::path::Path;

use plotters::prelude::*;

use super::results::{normalized_trace, SweepRow};
use crate::error::{Error, Result};
use crate::scheduler::SchedulerKind;
use crate::sim::TracePoint;

const PALETTE: [RGBColor; 4] = [BLUE, RED, GREEN, MAGENTA];

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

fn line_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> Result<()> {
    let points = series.iter().flat_map(|s| s.1.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y1) = (0.0, 1.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }

    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(x0..x1, y0..y1 * 1.05)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(plot_err)?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// `sweep-delay.svg` and `sweep-be-throughput.svg` in `dir`.
pub fn plot_sweep(dir: &Path, x_label: &str, rows: &[SweepRow]) -> Result<()> {
    let by_scheduler = |f: &dyn Fn(&SweepRow) -> f64| -> Vec<(String, Vec<(f64, f64)>)> {
        [SchedulerKind::Proposed, SchedulerKind::Baseline]
            .into_iter()
            .map(|s| {
                let pts = rows
                    .iter()
                    .filter(|r| r.scheduler == s)
                    .map(|r| (r.sweep_value, f(r)))
                    .collect();
                (s.name().to_string(), pts)
            })
            .collect()
    };
    line_chart(
        &dir.join("sweep-delay.svg"),
        "Real-time packet delay",
        x_label,
        "mean delay (s)",
        &by_scheduler(&|r| r.qos_delay_s),
    )?;
    line_chart(
        &dir.join("sweep-be-throughput.svg"),
        "Best-effort throughput",
        x_label,
        "throughput (bit/s)",
        &by_scheduler(&|r| r.be_throughput_bps),
    )
}

/// `lambda-trace.svg` in `dir`: normalized `λ` against slot, one line per case.
pub fn plot_lambda_traces(dir: &Path, cases: &[(f64, &[TracePoint], f64)]) -> Result<()> {
    let series: Vec<(String, Vec<(f64, f64)>)> = cases
        .iter()
        .map(|&(d_max, trace, last)| {
            let pts = trace
                .iter()
                .zip(normalized_trace(trace, last))
                .map(|(p, n)| (p.slot as f64, n))
                .collect();
            (format!("d_max = {d_max} s"), pts)
        })
        .collect();
    line_chart(
        &dir.join("lambda-trace.svg"),
        "Normalized lambda",
        "slot",
        "lambda / final lambda",
        &series,
    )
}
