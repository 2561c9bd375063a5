use std::path::Path;

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, metrics_from};
use crate::corpus::{perturb, Image, Label, LabeledImageSet, PerturbKind};
use crate::detector::Detector;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub level: f64,
    pub balanced_accuracy: f64,
}

/// Balanced accuracy along one perturbation ladder, plus the unperturbed
/// baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCurve {
    pub kind: PerturbKind,
    pub baseline: f64,
    pub points: Vec<CurvePoint>,
}

impl RobustnessCurve {
    pub fn at(&self, level: f64) -> Option<f64> {
        self.points.iter().find(|p| p.level == level).map(|p| p.balanced_accuracy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustnessOptions {
    /// Perturb reals as well as fakes. When false only fakes are degraded.
    pub perturb_reals: bool,
}

impl Default for RobustnessOptions {
    fn default() -> Self {
        Self { perturb_reals: true }
    }
}

/// One curve per perturbation kind, each over its full ladder.
pub fn robustness_suite(det: &Detector, data: &LabeledImageSet, opts: &RobustnessOptions) -> Result<Vec<RobustnessCurve>> {
    let baseline = evaluate(det, data, false)?
        .balanced
        .ok_or_else(|| Error::Precondition("robustness sweep needs both real and fake images".into()))?;
    let mut curves = Vec::new();
    for kind in [PerturbKind::Jpeg, PerturbKind::Blur] {
        let mut points = Vec::with_capacity(4);
        for &level in kind.ladder() {
            let degraded: Vec<Image> = data
                .items
                .iter()
                .map(|img| {
                    if opts.perturb_reals || img.label == Label::Fake {
                        perturb(img, kind, level)
                    } else {
                        Ok(img.clone())
                    }
                })
                .collect::<Result<_>>()?;
            let refs: Vec<&Image> = degraded.iter().collect();
            let probs = det.predict_proba(&refs)?;
            let m = metrics_from(&refs, &probs, false);
            points.push(CurvePoint {
                level,
                balanced_accuracy: m.balanced.expect("labels unchanged by perturbation"),
            });
        }
        curves.push(RobustnessCurve { kind, baseline, points });
    }
    Ok(curves)
}

/// Line plot of every curve against its ladder position, as SVG.
pub fn emit_robustness_plot(curves: &[RobustnessCurve], path: &Path) -> Result<()> {
    if curves.is_empty() {
        return Err(Error::EmptyDataset("no robustness curves".into()));
    }
    let plot_err = |e: String| Error::Plot(format!("{}: {e}", path.display()));
    let colors = [RGBColor(31, 119, 180), RGBColor(214, 39, 40), RGBColor(44, 160, 44)];
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| plot_err(e.to_string()))?;
        let mut chart = ChartBuilder::on(&root)
            .caption("robustness", ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d(-0.2f64..4.2, 0.0f64..100.0)
            .map_err(|e| plot_err(e.to_string()))?;
        chart
            .configure_mesh()
            .x_desc("ladder step (0 = clean)")
            .y_desc("balanced accuracy (%)")
            .draw()
            .map_err(|e| plot_err(e.to_string()))?;
        for (k, c) in curves.iter().enumerate() {
            let color = colors[k % colors.len()];
            let pts: Vec<(f64, f64)> = std::iter::once((0.0, c.baseline))
                .chain(c.points.iter().enumerate().map(|(i, p)| ((i + 1) as f64, p.balanced_accuracy)))
                .collect();
            let ladder: Vec<String> = c.points.iter().map(|p| p.level.to_string()).collect();
            chart
                .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
                .map_err(|e| plot_err(e.to_string()))?
                .label(format!("{} [{}]", c.kind.as_str(), ladder.join(", ")))
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
            chart
                .draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled())))
                .map_err(|e| plot_err(e.to_string()))?;
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
