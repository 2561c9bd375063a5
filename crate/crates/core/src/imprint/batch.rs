use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LatentReconstructor, LatentTensor};
use crate::container::{Container, NamedArray, MAGIC_BATCH};
use crate::corpus::{Image, Label, LabeledImageSet};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::toygen::ReconstructionSettings;

/// Generator id given to fused batches.
pub const FUSED: &str = "fused";

/// `n` latent differences of one generator, one per source image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImprintBatch {
    pub generator_id: String,
    /// Generators whose batches were combined into this one (just
    /// `generator_id` for a directly collected batch).
    pub contributors: Vec<String>,
    image_ids: Vec<String>,
    shape: [usize; 3],
    data: Vec<f64>,
}

impl ImprintBatch {
    pub fn new(generator_id: impl Into<String>, image_ids: Vec<String>, samples: Vec<LatentTensor>) -> Result<Self> {
        let generator_id = generator_id.into();
        if samples.is_empty() {
            return Err(Error::EmptyDataset(format!("imprint batch of '{generator_id}' has no samples")));
        }
        if samples.len() != image_ids.len() {
            return Err(Error::Shape(format!(
                "{} samples but {} image ids",
                samples.len(),
                image_ids.len()
            )));
        }
        let shape = samples[0].shape();
        let mut data = Vec::with_capacity(samples.len() * samples[0].len());
        for s in samples {
            if s.shape() != shape {
                return Err(Error::Shape(format!("sample shape {:?} differs from {shape:?}", s.shape())));
            }
            data.extend(s.into_values());
        }
        Self::from_parts(generator_id.clone(), vec![generator_id], image_ids, shape, data)
    }

    fn from_parts(
        generator_id: String,
        contributors: Vec<String>,
        image_ids: Vec<String>,
        shape: [usize; 3],
        data: Vec<f64>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        if let Some(dup) = image_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Precondition(format!("duplicate image id '{dup}' in imprint batch")));
        }
        if image_ids.is_empty() {
            return Err(Error::EmptyDataset(format!("imprint batch of '{generator_id}' has no samples")));
        }
        if data.len() != image_ids.len() * shape.iter().product::<usize>() {
            return Err(Error::Shape("imprint batch data does not match n x C x H x W".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("imprint batch of '{generator_id}'")));
        }
        Ok(Self {
            generator_id,
            contributors,
            image_ids,
            shape,
            data,
        })
    }

    pub fn n(&self) -> usize {
        self.image_ids.len()
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    /// Elements per sample, `C * H * W`.
    pub fn dim(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim()..][..self.dim()]
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim())
    }

    /// Row-major `n x dim` values.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        let meta = serde_json::to_value(BatchMeta {
            generator_id: self.generator_id.clone(),
            contributors: self.contributors.clone(),
            image_ids: self.image_ids.clone(),
            shape: self.shape,
        })
        .expect("meta serializes");
        let mut c = Container::new(config_hash, meta);
        c.push(NamedArray::f64("samples", &[self.n(), self.shape[0], self.shape[1], self.shape[2]], self.data.clone()));
        c.write(path, MAGIC_BATCH)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Container::read(path, MAGIC_BATCH)?;
        let meta: BatchMeta = serde_json::from_value(c.meta.clone())
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let data = c.take("samples")?.into_f64()?;
        Self::from_parts(meta.generator_id, meta.contributors, meta.image_ids, meta.shape, data)
    }
}

#[derive(Serialize, Deserialize)]
struct BatchMeta {
    generator_id: String,
    contributors: Vec<String>,
    image_ids: Vec<String>,
    shape: [usize; 3],
}

/// Latent difference `reconstruct(encode(img)) - encode(img)`.
pub fn extract_imprint(
    gen: &dyn LatentReconstructor,
    img: &Image,
    settings: &ReconstructionSettings,
    rng: &mut Rng,
) -> Result<LatentTensor> {
    let z = gen.encode_batch(&[img])?;
    let z2 = gen.reconstruct_batch(&z, settings, rng)?;
    z2[0].sub(&z[0])
}

/// Imprints of every (real) image, stacked in sorted-id order.
pub fn collect_imprints(
    gen: &dyn LatentReconstructor,
    images: &LabeledImageSet,
    settings: &ReconstructionSettings,
    rng: &mut Rng,
) -> Result<ImprintBatch> {
    if let Some(bad) = images.items.iter().find(|i| i.label != Label::Real) {
        return Err(Error::Precondition(format!(
            "imprints are collected from real images only; '{}' is fake",
            bad.id
        )));
    }
    let mut refs: Vec<&Image> = images.items.iter().collect();
    refs.sort_by(|a, b| a.id.cmp(&b.id));
    let ids: Vec<String> = refs.iter().map(|i| i.id.clone()).collect();
    let z = gen.encode_batch(&refs)?;
    let z2 = gen.reconstruct_batch(&z, settings, rng)?;
    let diffs = z2.iter().zip(&z).map(|(b, a)| b.sub(a)).collect::<Result<Vec<_>>>()?;
    ImprintBatch::new(gen.codec_id(), ids, diffs)
}

/// Per-generator fusion weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionSpec {
    pub generator_ids: Vec<String>,
    pub weights: Vec<f64>,
}

impl FusionSpec {
    pub fn uniform(generator_ids: Vec<String>) -> Self {
        let m = generator_ids.len().max(1);
        Self {
            weights: vec![1.0 / m as f64; generator_ids.len()],
            generator_ids,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.generator_ids.is_empty() || self.generator_ids.len() != self.weights.len() {
            return Err(Error::FusionSpec(format!(
                "{} generator ids vs {} weights",
                self.generator_ids.len(),
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::FusionSpec("weights must be finite and non-negative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::FusionSpec(format!("weights sum to {total}, not 1")));
        }
        Ok(())
    }
}

/// Index-wise weighted sum of aligned batches.
pub fn fuse_batches(batches: &[ImprintBatch], spec: &FusionSpec) -> Result<ImprintBatch> {
    spec.validate()?;
    if batches.len() != spec.generator_ids.len() {
        return Err(Error::FusionSpec(format!(
            "{} batches for {} weights",
            batches.len(),
            spec.weights.len()
        )));
    }
    for (b, id) in batches.iter().zip(&spec.generator_ids) {
        if &b.generator_id != id {
            return Err(Error::FusionSpec(format!(
                "batch of '{}' where the spec expects '{id}'",
                b.generator_id
            )));
        }
    }
    let first = &batches[0];
    for b in &batches[1..] {
        if b.shape != first.shape {
            return Err(Error::Shape(format!("batch shapes {:?} and {:?} differ", first.shape, b.shape)));
        }
        if b.image_ids != first.image_ids {
            return Err(Error::Alignment(format!(
                "batches of '{}' and '{}' have different source-image lists",
                first.generator_id, b.generator_id
            )));
        }
    }
    let mut data = vec![0.0; first.data.len()];
    for (b, &w) in batches.iter().zip(&spec.weights) {
        for (acc, &v) in data.iter_mut().zip(&b.data) {
            *acc += w * v;
        }
    }
    ImprintBatch::from_parts(
        FUSED.into(),
        spec.generator_ids.clone(),
        first.image_ids.clone(),
        first.shape,
        data,
    )
}
