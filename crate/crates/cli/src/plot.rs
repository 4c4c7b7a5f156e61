//! Unlabelled line charts; the numbers themselves go to CSV next to each plot.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{CliError, Result};

const COLOURS: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(90, 90, 90),
];

/// One polyline per series on shared axes, with point markers.
pub fn line_chart(path: &Path, series: &[Vec<(f64, f64)>]) -> Result<()> {
    let pts = series.iter().flatten().filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |lo: f64, hi: f64| {
        let d = ((hi - lo) * 0.05).max(1e-6);
        (lo - d)..(hi + d)
    };
    let draw = || -> std::result::Result<(), Box<dyn std::error::Error>> {
        let root = BitMapBackend::new(path, (640, 420)).into_drawing_area();
        root.fill(&WHITE)?;
        let mut chart = ChartBuilder::on(&root)
            .margin(16)
            .build_cartesian_2d(pad(x0, x1), pad(y0, y1))?;
        chart.configure_mesh().x_labels(0).y_labels(0).draw()?;
        for (i, s) in series.iter().enumerate() {
            let colour = COLOURS[i % COLOURS.len()];
            chart.draw_series(LineSeries::new(s.iter().copied(), colour.stroke_width(2)))?;
            chart.draw_series(s.iter().map(|&p| Circle::new(p, 3, colour.filled())))?;
        }
        root.present()?;
        Ok(())
    };
    draw().map_err(|e| CliError::Runtime(format!("cannot draw {}: {e}", path.display())))
}
