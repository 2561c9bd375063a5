//! Imprint simulator: latent differences, per-element Laplace fields,
//! fusion across generators, sampling, and training-set expansion.

mod batch;
mod expand;
mod field;
mod latent;

pub use batch::{collect_imprints, extract_imprint, fuse_batches, FusionSpec, ImprintBatch, FUSED};
pub use expand::{
    expand_dataset, plan_expansion, simulate_batch, simulate_fake, simulated_id, ExpansionManifest, ExpansionPlan,
    ExpansionPolicy, ManifestEntry,
};
pub use field::{
    build_fused_field, fit_laplace, laplace_quantile, sample_imprint, FieldProvenance, LaplaceField, SCALE_FLOOR,
};
pub use latent::LatentTensor;

use crate::corpus::Image;
use crate::error::Result;
use crate::rng::Rng;
use crate::toygen::{GeneratorHandle, ReconstructionSettings};

/// Image <-> latent mapping.
pub trait LatentCodec {
    fn codec_id(&self) -> &str;
    fn latent_shape(&self) -> [usize; 3];
    fn encode_batch(&self, images: &[&Image]) -> Result<Vec<LatentTensor>>;
    fn decode_batch(&self, latents: &[LatentTensor]) -> Result<Vec<Image>>;
}

/// A codec that can also regenerate latents.
pub trait LatentReconstructor: LatentCodec {
    fn reconstruct_batch(
        &self,
        latents: &[LatentTensor],
        settings: &ReconstructionSettings,
        rng: &mut Rng,
    ) -> Result<Vec<LatentTensor>>;
}

impl LatentCodec for GeneratorHandle {
    fn codec_id(&self) -> &str {
        &self.generator_id
    }

    fn latent_shape(&self) -> [usize; 3] {
        GeneratorHandle::latent_shape(self)
    }

    fn encode_batch(&self, images: &[&Image]) -> Result<Vec<LatentTensor>> {
        GeneratorHandle::encode_batch(self, images)
    }

    fn decode_batch(&self, latents: &[LatentTensor]) -> Result<Vec<Image>> {
        GeneratorHandle::decode_batch(self, latents)
    }
}

impl LatentReconstructor for GeneratorHandle {
    fn reconstruct_batch(
        &self,
        latents: &[LatentTensor],
        settings: &ReconstructionSettings,
        rng: &mut Rng,
    ) -> Result<Vec<LatentTensor>> {
        GeneratorHandle::reconstruct_batch(self, latents, settings, rng)
    }
}

#[cfg(test)]
mod tests;
