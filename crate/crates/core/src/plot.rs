//! Static SVG charts: per-split metric bars and the runtime curve.

use std::path::Path;

use plotters::prelude::*;

use crate::bench::RuntimeRow;
use crate::metrics::EvalReport;

type PlotResult = Result<(), Box<dyn std::error::Error>>;

const BASELINE_COLOR: RGBColor = RGBColor(120, 120, 120);
const VCD_COLOR: RGBColor = RGBColor(31, 119, 180);

fn bar_panel(
    area: &DrawingArea<SVGBackend, plotters::coord::Shift>,
    title: &str,
    labels: &[String],
    baseline: &[f64],
    vcd: &[f64],
) -> PlotResult {
    let n = labels.len().max(1);
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(45)
        .build_cartesian_2d(0.0..n as f64, 0.0..1.0)?;
    let labels_owned = labels.to_vec();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n + 1)
        .x_label_formatter(&move |x| {
            let i = x.floor() as usize;
            if (x - x.floor() - 0.5).abs() < 1e-9 || x.fract() == 0.0 {
                labels_owned.get(i).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .y_desc("ratio")
        .draw()?;
    let bars = |values: &[f64], offset: f64, color: RGBColor| {
        values
            .iter()
            .enumerate()
            .map(move |(i, &v)| {
                let x0 = i as f64 + offset;
                Rectangle::new([(x0, 0.0), (x0 + 0.35, v.clamp(0.0, 1.0))], color.filled())
            })
            .collect::<Vec<_>>()
    };
    chart
        .draw_series(bars(baseline, 0.12, BASELINE_COLOR))?
        .label("baseline")
        .legend(|(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], BASELINE_COLOR.filled()));
    chart
        .draw_series(bars(vcd, 0.53, VCD_COLOR))?
        .label("vcd")
        .legend(|(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], VCD_COLOR.filled()));
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()?;
    Ok(())
}

/// Accuracy, F1 and yes-rate per split, baseline against contrastive.
pub fn plot_split_bars(path: &Path, baseline: &EvalReport, vcd: &EvalReport) -> PlotResult {
    let labels: Vec<String> = baseline.splits.keys().cloned().collect();
    let root = SVGBackend::new(path, (1200, 400)).into_drawing_area();
    root.fill(&WHITE)?;
    let panels = root.split_evenly((1, 3));
    type Pick = fn(&crate::metrics::SplitReport) -> f64;
    let metrics: [(&str, Pick); 3] = [
        ("accuracy", |s| s.metrics.accuracy),
        ("F1", |s| s.metrics.f1),
        ("yes-rate", |s| s.metrics.yes_rate),
    ];
    for (panel, (name, pick)) in panels.iter().zip(metrics) {
        let values = |r: &EvalReport| -> Vec<f64> {
            labels
                .iter()
                .map(|l| r.splits.get(l).map(pick).unwrap_or(0.0))
                .collect()
        };
        bar_panel(panel, name, &labels, &values(baseline), &values(vcd))?;
    }
    root.present()?;
    Ok(())
}

/// Object and state hallucination rates, baseline against contrastive.
pub fn plot_chair_bars(path: &Path, baseline: &EvalReport, vcd: &EvalReport) -> PlotResult {
    let labels = vec!["C_O".to_string(), "C_S".to_string()];
    let values = |r: &EvalReport| -> Vec<f64> {
        r.chair
            .map(|c| vec![c.objects.rate, c.states.rate])
            .unwrap_or_else(|| vec![0.0, 0.0])
    };
    let root = SVGBackend::new(path, (500, 400)).into_drawing_area();
    root.fill(&WHITE)?;
    bar_panel(&root, "CHAIR", &labels, &values(baseline), &values(vcd))?;
    root.present()?;
    Ok(())
}

/// Median latency against object count for both modes.
pub fn plot_runtime(path: &Path, rows: &[RuntimeRow]) -> PlotResult {
    let root = SVGBackend::new(path, (700, 450)).into_drawing_area();
    root.fill(&WHITE)?;
    let x_max = rows.iter().map(|r| r.objects).max().unwrap_or(1) as f64;
    let y_max = rows
        .iter()
        .map(|r| r.single_median_ms.max(r.dual_median_ms))
        .fold(0.0, f64::max)
        .max(1e-3)
        * 1.15;
    let mut chart = ChartBuilder::on(&root)
        .caption("decode latency vs scene size", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..x_max * 1.05, 0.0..y_max)?;
    chart
        .configure_mesh()
        .x_desc("objects in scene")
        .y_desc("median latency (ms)")
        .draw()?;
    for (label, color, pick) in [
        (
            "single",
            BASELINE_COLOR,
            (|r: &RuntimeRow| r.single_median_ms) as fn(&RuntimeRow) -> f64,
        ),
        ("dual", VCD_COLOR, |r: &RuntimeRow| r.dual_median_ms),
    ] {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.objects as f64, pick(r))).collect();
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))?
            .label(label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], color.stroke_width(2)));
        chart.draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled())))?;
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()?;
    root.present()?;
    Ok(())
}
