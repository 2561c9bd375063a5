//! Images, labeled sets, the procedural corpus, training-time augmentation
//! and the evaluation perturbation ladder.

mod io;
mod ops;
mod synth;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use io::{list_pngs, load_dataset, load_png, save_dataset, save_png, LoadReport};
pub use ops::{augment, gaussian_blur, jpeg_round_trip, perturb, AugmentPolicy, PerturbKind, BLUR_LADDER, JPEG_LADDER};
pub use synth::{synth_styled_corpus, synth_toy_corpus, CorpusStyle, SUPPORTED_RESOLUTIONS};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Number of color channels of every image.
pub const CHANNELS: usize = 3;

/// Generator id carried by images produced by the imprint simulator.
pub const SIMULATED: &str = "simulated";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }

    /// Binary target used by the detector (fake = 1).
    pub fn target(self) -> f32 {
        match self {
            Label::Real => 0.0,
            Label::Fake => 1.0,
        }
    }
}

/// Square RGB image with values in `[0, 1]`, stored planar (channel-major).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub id: String,
    pub label: Label,
    pub generator: Option<String>,
    size: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(
        id: impl Into<String>,
        label: Label,
        generator: Option<String>,
        size: usize,
        pixels: Vec<f32>,
    ) -> Result<Self> {
        let id = id.into();
        if pixels.len() != CHANNELS * size * size {
            return Err(Error::Shape(format!(
                "image '{id}': {} values for a {size}x{size} RGB image",
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Precondition(format!("image '{id}': pixel outside [0, 1]")));
        }
        if label == Label::Fake && generator.is_none() {
            return Err(Error::Precondition(format!("fake image '{id}' has no generator id")));
        }
        Ok(Self {
            id,
            label,
            generator,
            size,
            pixels,
        })
    }

    /// Same metadata, new pixels (clamped into range).
    pub fn with_pixels(&self, mut pixels: Vec<f32>) -> Self {
        assert_eq!(pixels.len(), self.pixels.len());
        for v in &mut pixels {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self {
            pixels,
            ..self.clone()
        }
    }

    pub fn relabeled(&self, id: impl Into<String>, label: Label, generator: Option<String>) -> Self {
        Self {
            id: id.into(),
            label,
            generator,
            ..self.clone()
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        &self.pixels[c * self.size * self.size..][..self.size * self.size]
    }

    /// Rec.601 luma plane.
    pub fn luma(&self) -> Vec<f64> {
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        r.iter()
            .zip(g)
            .zip(b)
            .map(|((&r, &g), &b)| 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
            .collect()
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&v| v as f64).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn mse(&self, other: &Image) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(&a, &b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / self.pixels.len() as f64
    }
}

/// Stack images into a `[n, 3, h, w]` tensor.
pub fn batch_tensor<'a>(images: impl IntoIterator<Item = &'a Image>) -> Tensor<f32> {
    let mut data = Vec::new();
    let mut n = 0;
    let mut size = 0;
    for img in images {
        size = img.size;
        data.extend_from_slice(&img.pixels);
        n += 1;
    }
    Tensor::new(&[n, CHANNELS, size, size], data)
}

/// Ordered collection of labeled images.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledImageSet {
    pub items: Vec<Image>,
}

impl LabeledImageSet {
    pub fn new(items: Vec<Image>) -> Self {
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn counts_by_label(&self) -> BTreeMap<Label, usize> {
        let mut m = BTreeMap::new();
        for img in &self.items {
            *m.entry(img.label).or_insert(0) += 1;
        }
        m
    }

    pub fn counts_by_generator(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for img in self.items.iter().filter_map(|i| i.generator.as_ref()) {
            *m.entry(img.clone()).or_insert(0) += 1;
        }
        m
    }

    pub fn count(&self, label: Label) -> usize {
        self.items.iter().filter(|i| i.label == label).count()
    }

    pub fn with_label(&self, label: Label) -> impl Iterator<Item = &Image> {
        self.items.iter().filter(move |i| i.label == label)
    }

    /// Common resolution of the set, or `None` when empty or mixed.
    pub fn resolution(&self) -> Option<usize> {
        let first = self.items.first()?.size;
        self.items.iter().all(|i| i.size == first).then_some(first)
    }

    pub fn extend(&mut self, other: LabeledImageSet) {
        self.items.extend(other.items);
    }

    /// Items sorted by id.
    pub fn sorted(mut self) -> Self {
        self.items.sort_by(|a, b| a.id.cmp(&b.id));
        self
    }
}
