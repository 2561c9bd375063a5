use std::path::Path;

use plotters::prelude::*;

use super::ProjectionReport;
use crate::error::{Error, Result};

const PALETTE: [RGBColor; 8] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
];

/// Render the projection as an SVG scatter, one color per tag plus a legend.
/// The fused tag, if present, is drawn last in black. Output bytes depend
/// only on the report.
pub fn emit_scatter(report: &ProjectionReport, path: &Path) -> Result<()> {
    if report.is_empty() {
        return Err(Error::EmptyDataset("projection report has no points".into()));
    }
    let plot_err = |e: String| Error::Plot(format!("{}: {e}", path.display()));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &report.points {
        x0 = x0.min(p.xy[0]);
        x1 = x1.max(p.xy[0]);
        y0 = y0.min(p.xy[1]);
        y1 = y1.max(p.xy[1]);
    }
    let pad = |lo: f64, hi: f64| {
        let m = ((hi - lo) * 0.05).max(1e-6);
        (lo - m)..(hi + m)
    };

    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 560)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| plot_err(e.to_string()))?;
        let [e1, e2] = report.explained_variance_ratio;
        let mut chart = ChartBuilder::on(&root)
            .caption("imprint projection", ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d(pad(x0, x1), pad(y0, y1))
            .map_err(|e| plot_err(e.to_string()))?;
        chart
            .configure_mesh()
            .x_desc(format!("PC1 ({:.1}%)", 100.0 * e1))
            .y_desc(format!("PC2 ({:.1}%)", 100.0 * e2))
            .draw()
            .map_err(|e| plot_err(e.to_string()))?;

        let mut tags: Vec<&str> = report.centroids.iter().map(|c| c.tag.as_str()).collect();
        if let Some(i) = tags.iter().position(|t| *t == crate::imprint::FUSED) {
            let f = tags.remove(i);
            tags.push(f);
        }
        for (k, tag) in tags.iter().enumerate() {
            let color = if *tag == crate::imprint::FUSED { BLACK } else { PALETTE[k % PALETTE.len()] };
            let style = color.mix(0.6).filled();
            chart
                .draw_series(
                    report
                        .points
                        .iter()
                        .filter(|p| p.tag == *tag)
                        .map(|p| Circle::new((p.xy[0], p.xy[1]), 2, style)),
                )
                .map_err(|e| plot_err(e.to_string()))?
                .label(*tag)
                .legend(move |(x, y)| Circle::new((x, y), 4, color.filled()));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| plot_err(e.to_string()))?;
        root.present().map_err(|e| plot_err(e.to_string()))?;
    }
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
