//! Accuracy metrics, robustness sweeps and the ablation runner.

mod ablation;
mod robustness;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use ablation::{
    ablation_run, ablation_run_cached, apply_delta, standard_grids, AblationRow, AblationTable, ConfigDelta, Probe,
    RunCache, SeedResult,
};
pub use robustness::{emit_robustness_plot, robustness_suite, CurvePoint, RobustnessCurve, RobustnessOptions};

use crate::corpus::{Image, Label, LabeledImageSet};
use crate::detector::{decide, Detector};
use crate::error::{Error, Result};

/// Key used for fakes without a generator tag.
pub const UNKNOWN_GENERATOR: &str = "unknown";

fn rate(correct: usize, n: usize) -> f64 {
    100.0 * correct as f64 / n as f64
}

/// Mean of the real-side and fake-side accuracy, in percent.
pub fn balanced_accuracy(preds: &[(f64, Label)]) -> Result<f64> {
    let (mut rc, mut rn, mut fc, mut fnn) = (0, 0, 0, 0);
    for &(p, label) in preds {
        let hit = decide(p) == label;
        match label {
            Label::Real => {
                rn += 1;
                rc += hit as usize;
            }
            Label::Fake => {
                fnn += 1;
                fc += hit as usize;
            }
        }
    }
    if rn == 0 || fnn == 0 {
        return Err(Error::Precondition(format!(
            "balanced accuracy needs both classes ({rn} real, {fnn} fake); use tpr_only for fake-only sets"
        )));
    }
    Ok((rate(rc, rn) + rate(fc, fnn)) / 2.0)
}

/// Percentage of fake-only predictions at or above the threshold.
pub fn tpr_only(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::EmptyDataset("no predictions".into()));
    }
    let hits = probs.iter().filter(|&&p| decide(p) == Label::Fake).count();
    Ok(rate(hits, probs.len()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMetrics {
    pub fake_accuracy: f64,
    /// Mean of this generator's fake accuracy and the shared real accuracy;
    /// absent when the set has no reals.
    pub balanced: Option<f64>,
    pub count: usize,
}

/// Accuracies in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub real_accuracy: Option<f64>,
    pub fake_accuracy: Option<f64>,
    /// Over all fakes pooled; absent unless both classes are present.
    pub balanced: Option<f64>,
    pub real_count: usize,
    pub fake_count: usize,
    /// Empty unless evaluation was split by generator.
    pub per_generator: BTreeMap<String, GeneratorMetrics>,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
}

impl MetricsReport {
    pub fn with_provenance(mut self, config_hash: impl Into<String>, seed: Option<u64>) -> Self {
        self.config_hash = Some(config_hash.into());
        self.seed = seed;
        self
    }

    /// Balanced accuracy, or the fake-side rate on a fake-only set.
    pub fn headline(&self) -> f64 {
        self.balanced.or(self.fake_accuracy).or(self.real_accuracy).unwrap_or(f64::NAN)
    }
}

/// Classify every image and aggregate. Pure and order invariant.
pub fn evaluate(det: &Detector, data: &LabeledImageSet, split_by_generator: bool) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("evaluation set".into()));
    }
    let refs: Vec<&Image> = data.items.iter().collect();
    let probs = det.predict_proba(&refs)?;
    Ok(metrics_from(&refs, &probs, split_by_generator))
}

pub(crate) fn metrics_from(images: &[&Image], probs: &[f64], split_by_generator: bool) -> MetricsReport {
    let (mut rc, mut rn) = (0usize, 0usize);
    let mut gens: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (img, &p) in images.iter().zip(probs) {
        let hit = (decide(p) == img.label) as usize;
        match img.label {
            Label::Real => {
                rn += 1;
                rc += hit;
            }
            Label::Fake => {
                let g = img.generator.clone().unwrap_or_else(|| UNKNOWN_GENERATOR.into());
                let e = gens.entry(g).or_default();
                e.0 += hit;
                e.1 += 1;
            }
        }
    }
    let (fc, fnn) = gens.values().fold((0, 0), |(a, b), (c, n)| (a + c, b + n));
    let real_accuracy = (rn > 0).then(|| rate(rc, rn));
    let fake_accuracy = (fnn > 0).then(|| rate(fc, fnn));
    let balanced = real_accuracy.zip(fake_accuracy).map(|(r, f)| (r + f) / 2.0);
    let per_generator = if split_by_generator {
        gens.into_iter()
            .map(|(g, (c, n))| {
                let fa = rate(c, n);
                (
                    g,
                    GeneratorMetrics {
                        fake_accuracy: fa,
                        balanced: real_accuracy.map(|r| (r + fa) / 2.0),
                        count: n,
                    },
                )
            })
            .collect()
    } else {
        BTreeMap::new()
    };
    MetricsReport {
        real_accuracy,
        fake_accuracy,
        balanced,
        real_count: rn,
        fake_count: fnn,
        per_generator,
        config_hash: None,
        seed: None,
    }
}

/// Quote a CSV field when needed.
pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests;
