use std::collections::HashSet;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{sample_imprint, LaplaceField, LatentCodec};
use crate::corpus::{Image, Label, LabeledImageSet, SIMULATED};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Fraction of reals used as variant sources and variants per source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpansionPolicy {
    pub real_fraction: f64,
    pub variants_per_image: usize,
    pub seed: u64,
}

impl Default for ExpansionPolicy {
    fn default() -> Self {
        Self {
            real_fraction: 0.05,
            variants_per_image: 5,
            seed: 0,
        }
    }
}

impl ExpansionPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.real_fraction) {
            return Err(Error::Policy(format!(
                "real_fraction {} is outside [0, 1]",
                self.real_fraction
            )));
        }
        if self.variants_per_image == 0 {
            return Err(Error::Policy("variants_per_image must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of fakes replaced for `n_real` reals: `round(n_real * p * k)`.
    pub fn replacements(&self, n_real: usize) -> usize {
        (n_real as f64 * self.real_fraction * self.variants_per_image as f64).round() as usize
    }
}

/// Index-level expansion: which reals seed which variant, which fakes go.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpansionPlan {
    /// `(real index, variant index)`, one per simulated fake.
    pub variants: Vec<(usize, usize)>,
    /// Indices (into the fake list) of the removed originals, ascending.
    pub removed: Vec<usize>,
}

/// Choose sources and replaced fakes uniformly at random. Variants are dealt
/// `k` per source, so `ceil(r / k)` distinct reals are used.
pub fn plan_expansion(n_real: usize, n_fake: usize, policy: &ExpansionPolicy, rng: &mut Rng) -> Result<ExpansionPlan> {
    policy.validate()?;
    let r = policy.replacements(n_real);
    if r > n_fake {
        return Err(Error::Policy(format!(
            "{r} replacements requested but only {n_fake} fakes are available"
        )));
    }
    let k = policy.variants_per_image;
    let n_src = r.div_ceil(k);
    if n_src > n_real {
        return Err(Error::Policy(format!("{n_src} variant sources needed, {n_real} reals available")));
    }
    let sources = index::sample(rng, n_real, n_src).into_vec();
    let variants = (0..r).map(|v| (sources[v / k], v % k)).collect();
    let mut removed = index::sample(rng, n_fake, r).into_vec();
    removed.sort_unstable();
    Ok(ExpansionPlan { variants, removed })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub simulated_id: String,
    pub source_real_id: String,
    pub variant: usize,
}

/// Record of an expansion: what was removed and what was inserted.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionManifest {
    pub removed_fake_ids: Vec<String>,
    pub inserted: Vec<ManifestEntry>,
}

impl ExpansionManifest {
    pub fn is_empty(&self) -> bool {
        self.inserted.is_empty() && self.removed_fake_ids.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Id of variant `v` of real image `source_id`.
pub fn simulated_id(source_id: &str, v: usize) -> String {
    format!("{SIMULATED}/{source_id}-v{v}")
}

/// `decode(encode(img) + sample_imprint(field))`, labeled as a simulated fake.
pub fn simulate_fake(codec: &dyn LatentCodec, img: &Image, field: &LaplaceField, rng: &mut Rng) -> Result<Image> {
    Ok(simulate_batch(codec, &[(img, 0)], field, rng)?.remove(0))
}

/// Batched [`simulate_fake`]; imprints are drawn in input order. Each entry
/// is `(real image, variant index)` and sets the output id.
pub fn simulate_batch(
    codec: &dyn LatentCodec,
    sources: &[(&Image, usize)],
    field: &LaplaceField,
    rng: &mut Rng,
) -> Result<Vec<Image>> {
    if field.shape() != codec.latent_shape() {
        return Err(Error::Shape(format!(
            "field shape {:?} vs codec latent shape {:?}",
            field.shape(),
            codec.latent_shape()
        )));
    }
    if let Some((bad, _)) = sources.iter().find(|(i, _)| i.label != Label::Real) {
        return Err(Error::Precondition(format!("simulation source '{}' is not real", bad.id)));
    }
    let imgs: Vec<&Image> = sources.iter().map(|(i, _)| *i).collect();
    let z = codec.encode_batch(&imgs)?;
    let perturbed = z
        .iter()
        .map(|zi| zi.add(&sample_imprint(field, rng)))
        .collect::<Result<Vec<_>>>()?;
    let decoded = codec.decode_batch(&perturbed)?;
    Ok(decoded
        .into_iter()
        .zip(sources)
        .map(|(out, (src, v))| out.relabeled(simulated_id(&src.id, *v), Label::Fake, Some(SIMULATED.into())))
        .collect())
}

/// Replace `round(|real| * p * k)` randomly chosen fakes with simulated
/// variants of randomly chosen reals. Label totals are unchanged; the input
/// is not modified.
pub fn expand_dataset(
    data: &LabeledImageSet,
    codec: &dyn LatentCodec,
    field: &LaplaceField,
    policy: &ExpansionPolicy,
) -> Result<(LabeledImageSet, ExpansionManifest)> {
    let reals: Vec<&Image> = data.with_label(Label::Real).collect();
    let fakes: Vec<&Image> = data.with_label(Label::Fake).collect();
    let mut r = rng::stream(policy.seed, "expand");
    let plan = plan_expansion(reals.len(), fakes.len(), policy, &mut r)?;
    if plan.variants.is_empty() {
        return Ok((data.clone(), ExpansionManifest::default()));
    }
    let removed: HashSet<usize> = plan.removed.iter().copied().collect();
    let sources: Vec<(&Image, usize)> = plan.variants.iter().map(|&(ri, v)| (reals[ri], v)).collect();
    let simulated = simulate_batch(codec, &sources, field, &mut r)?;

    let manifest = ExpansionManifest {
        removed_fake_ids: plan.removed.iter().map(|&i| fakes[i].id.clone()).collect(),
        inserted: simulated
            .iter()
            .zip(&sources)
            .map(|(s, (src, v))| ManifestEntry {
                simulated_id: s.id.clone(),
                source_real_id: src.id.clone(),
                variant: *v,
            })
            .collect(),
    };
    let mut fake_ordinal = 0;
    let mut items: Vec<Image> = Vec::with_capacity(data.len());
    for img in &data.items {
        if img.label == Label::Fake {
            fake_ordinal += 1;
            if removed.contains(&(fake_ordinal - 1)) {
                continue;
            }
        }
        items.push(img.clone());
    }
    items.extend(simulated);
    Ok((LabeledImageSet::new(items), manifest))
}
