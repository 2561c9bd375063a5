//! Toy generative reconstructors. Each handle is a small convolutional
//! autoencoder defining a latent space, plus an optional latent denoiser for
//! partial noise-then-denoise round trips.

mod net;
mod train;

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use net::{ArchSpec, Upsample, DIFFUSION_STEPS, LATENT_CHANNELS, LATENT_DOWNSAMPLE};
pub use train::{
    family_id, make_generator_family, make_generator_family_with, train_autoencoder, train_denoiser, CodecTrainConfig,
    FAMILY_ARCHS,
};

use crate::container::{Container, NamedArray, MAGIC_GENERATOR};
use crate::corpus::{batch_tensor, Image, Label};
use crate::error::{Error, Result};
use crate::imprint::LatentTensor;
use crate::nn::{Graph, ParamSet, Tensor};
use net::{AutoencoderNet, DenoiserNet};

/// Images per inference chunk.
const CHUNK: usize = 64;

/// Partial round-trip settings. `guidance` is accepted for compatibility
/// and ignored: the toy denoiser is unconditional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructionSettings {
    pub steps: usize,
    pub strength: f64,
    pub guidance: f64,
}

impl Default for ReconstructionSettings {
    fn default() -> Self {
        Self {
            steps: 8,
            strength: 0.1,
            guidance: 0.0,
        }
    }
}

impl ReconstructionSettings {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("reconstruction.steps must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(Error::Config(format!(
                "reconstruction.strength = {} is outside [0, 1]",
                self.strength
            )));
        }
        if !self.guidance.is_finite() {
            return Err(Error::Config("reconstruction.guidance must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserProvenance {
    pub seed: u64,
    pub width: usize,
    pub steps: usize,
    pub latent_scale: f64,
    pub final_loss: f64,
}

/// How a handle was trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub epochs: usize,
    pub arch_tag: String,
    pub latent_reg: f64,
    pub holdout_mse: Option<f64>,
    pub denoiser: Option<DenoiserProvenance>,
}

#[derive(Clone, Debug)]
struct Denoiser {
    net: DenoiserNet,
    params: ParamSet,
    latent_scale: f64,
}

/// A trained reconstructor. Immutable once built; all methods take `&self`.
#[derive(Clone, Debug)]
pub struct GeneratorHandle {
    pub generator_id: String,
    arch: ArchSpec,
    resolution: usize,
    net: AutoencoderNet,
    params: ParamSet,
    denoiser: Option<Denoiser>,
    pub provenance: Provenance,
}

impl GeneratorHandle {
    pub fn arch(&self) -> ArchSpec {
        self.arch
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        let s = self.resolution / LATENT_DOWNSAMPLE;
        [LATENT_CHANNELS, s, s]
    }

    pub fn has_denoiser(&self) -> bool {
        self.denoiser.is_some()
    }

    /// Autoencoder parameters.
    pub fn parameters(&self) -> &ParamSet {
        &self.params
    }

    pub fn denoiser_parameters(&self) -> Option<&ParamSet> {
        self.denoiser.as_ref().map(|d| &d.params)
    }

    fn check_image(&self, img: &Image) -> Result<()> {
        if img.size() != self.resolution {
            return Err(Error::Shape(format!(
                "image '{}' is {}x{}, handle '{}' expects {}x{}",
                img.id,
                img.size(),
                img.size(),
                self.generator_id,
                self.resolution,
                self.resolution
            )));
        }
        Ok(())
    }

    fn check_latent(&self, z: &LatentTensor) -> Result<()> {
        if z.shape() != self.latent_shape() {
            return Err(Error::Shape(format!(
                "latent shape {:?}, handle '{}' expects {:?}",
                z.shape(),
                self.generator_id,
                self.latent_shape()
            )));
        }
        Ok(())
    }

    /// Deterministic encoding (no posterior sampling).
    pub fn encode(&self, img: &Image) -> Result<LatentTensor> {
        Ok(self.encode_batch(&[img])?.remove(0))
    }

    pub fn encode_batch(&self, images: &[&Image]) -> Result<Vec<LatentTensor>> {
        for img in images {
            self.check_image(img)?;
        }
        let shape = self.latent_shape();
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(CHUNK) {
            let x = batch_tensor(chunk.iter().copied());
            let mut g = Graph::new();
            let p = self.params.bind(&mut g, false);
            let xv = g.constant(x);
            let z = self.net.encode(&mut g, &p, xv);
            for row in g.value(z).data().chunks(shape.iter().product()) {
                out.push(LatentTensor::new(shape, row.iter().map(|&v| v as f64).collect())?);
            }
        }
        Ok(out)
    }

    /// Decode to an image labeled fake by this generator.
    pub fn decode(&self, z: &LatentTensor) -> Result<Image> {
        Ok(self.decode_batch(std::slice::from_ref(z))?.remove(0))
    }

    pub fn decode_batch(&self, latents: &[LatentTensor]) -> Result<Vec<Image>> {
        for z in latents {
            self.check_latent(z)?;
        }
        let shape = self.latent_shape();
        let res = self.resolution;
        let mut out = Vec::with_capacity(latents.len());
        for chunk in latents.chunks(CHUNK) {
            let mut data = Vec::with_capacity(chunk.len() * chunk[0].len());
            for z in chunk {
                data.extend(z.values().iter().map(|&v| v as f32));
            }
            let mut g = Graph::new();
            let p = self.params.bind(&mut g, false);
            let zv = g.constant(Tensor::new(&[chunk.len(), shape[0], shape[1], shape[2]], data));
            let y = self.net.decode(&mut g, &p, zv);
            for row in g.value(y).data().chunks(3 * res * res) {
                let pixels = row.iter().map(|v| v.clamp(0.0, 1.0)).collect();
                out.push(Image::new(
                    format!("{}-decoded", self.generator_id),
                    Label::Fake,
                    Some(self.generator_id.clone()),
                    res,
                    pixels,
                )?);
            }
        }
        Ok(out)
    }

    /// `decode(encode(img))`, keeping the input's metadata.
    pub fn autoencode(&self, img: &Image) -> Result<Image> {
        let z = self.encode(img)?;
        Ok(img.with_pixels(self.decode(&z)?.pixels().to_vec()))
    }

    /// Partial diffusion round trip: noise `z` to `t = round(strength * T)`,
    /// then run `steps` deterministic DDIM updates back to `t = 0`.
    pub fn reconstruct_latent(
        &self,
        z: &LatentTensor,
        settings: &ReconstructionSettings,
        rng: &mut impl Rng,
    ) -> Result<LatentTensor> {
        Ok(self
            .reconstruct_batch(std::slice::from_ref(z), settings, rng)?
            .remove(0))
    }

    /// Batched [`Self::reconstruct_latent`]; noise is drawn in input order, so
    /// the result equals calling the single version on each latent in turn.
    pub fn reconstruct_batch(
        &self,
        latents: &[LatentTensor],
        settings: &ReconstructionSettings,
        rng: &mut impl Rng,
    ) -> Result<Vec<LatentTensor>> {
        settings.validate()?;
        let den = self.denoiser.as_ref().ok_or_else(|| {
            Error::Capability(format!("handle '{}' has no denoiser", self.generator_id))
        })?;
        for z in latents {
            self.check_latent(z)?;
        }
        if settings.guidance != 0.0 {
            log::warn!("guidance {} ignored by the unconditional denoiser", settings.guidance);
        }
        let t_start = (settings.strength * DIFFUSION_STEPS as f64).round() as usize;
        if t_start == 0 {
            return Ok(latents.to_vec());
        }
        let n_steps = settings.steps.min(t_start);
        let times: Vec<usize> = (0..=n_steps)
            .map(|i| (t_start as f64 * (n_steps - i) as f64 / n_steps as f64).round() as usize)
            .collect();
        let ab = net::alpha_bar();
        let shape = self.latent_shape();
        let per = shape.iter().product::<usize>();
        let plane = shape[1] * shape[2];
        let scale = den.latent_scale;

        let mut out = Vec::with_capacity(latents.len());
        for chunk in latents.chunks(CHUNK) {
            let n = chunk.len();
            let a0 = ab[t_start];
            let mut x: Vec<f64> = Vec::with_capacity(n * per);
            for z in chunk {
                for &v in z.values() {
                    let eps: f64 = rng.sample(StandardNormal);
                    x.push(a0.sqrt() * v / scale + (1.0 - a0).sqrt() * eps);
                }
            }
            for w in times.windows(2) {
                let (t, t_prev) = (w[0], w[1]);
                let mut input = Vec::with_capacity(n * (per + plane));
                let tv = (t as f64 / DIFFUSION_STEPS as f64) as f32;
                for row in x.chunks(per) {
                    input.extend(row.iter().map(|&v| v as f32));
                    input.extend(std::iter::repeat_n(tv, plane));
                }
                let mut g = Graph::new();
                let p = den.params.bind(&mut g, false);
                let xv = g.constant(Tensor::new(&[n, shape[0] + 1, shape[1], shape[2]], input));
                let e = den.net.forward(&mut g, &p, xv);
                let eps = g.value(e).data();
                let (a_t, a_p) = (ab[t], ab[t_prev]);
                for (xi, &ei) in x.iter_mut().zip(eps) {
                    let ei = ei as f64;
                    let x0 = (*xi - (1.0 - a_t).sqrt() * ei) / a_t.sqrt();
                    *xi = a_p.sqrt() * x0 + (1.0 - a_p).sqrt() * ei;
                }
            }
            for row in x.chunks(per) {
                out.push(LatentTensor::new(shape, row.iter().map(|v| v * scale).collect())?);
            }
        }
        Ok(out)
    }

    /// Generate fakes from content images: a partial round trip at
    /// `settings.strength` followed by decoding. Outputs are labeled fake
    /// with this generator's id and ids `<generator_id>/<content id>`.
    pub fn generate(
        &self,
        content: &[&Image],
        settings: &ReconstructionSettings,
        rng: &mut impl Rng,
    ) -> Result<Vec<Image>> {
        let z = self.encode_batch(content)?;
        let z2 = self.reconstruct_batch(&z, settings, rng)?;
        let decoded = self.decode_batch(&z2)?;
        Ok(decoded
            .into_iter()
            .zip(content)
            .map(|(img, src)| {
                img.relabeled(
                    format!("{}/{}", self.generator_id, src.id),
                    Label::Fake,
                    Some(self.generator_id.clone()),
                )
            })
            .collect())
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        let meta = serde_json::json!({
            "generator_id": self.generator_id,
            "arch": self.arch.to_string(),
            "resolution": self.resolution,
            "latent_shape": self.latent_shape(),
            "provenance": self.provenance,
        });
        let mut c = Container::new(config_hash, meta);
        for (name, t) in self.params.iter() {
            c.push(NamedArray::f32(format!("ae/{name}"), t.shape(), t.data().to_vec()));
        }
        if let Some(d) = &self.denoiser {
            for (name, t) in d.params.iter() {
                c.push(NamedArray::f32(format!("den/{name}"), t.shape(), t.data().to_vec()));
            }
        }
        c.write(path, MAGIC_GENERATOR)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path, MAGIC_GENERATOR)?;
        let bad = |what: &str| Error::Format(format!("{}: {what}", path.display()));
        let meta = &c.meta;
        let generator_id = meta["generator_id"].as_str().ok_or_else(|| bad("missing generator_id"))?;
        let arch: ArchSpec = meta["arch"].as_str().ok_or_else(|| bad("missing arch"))?.parse()?;
        let resolution = meta["resolution"].as_u64().ok_or_else(|| bad("missing resolution"))? as usize;
        let provenance: Provenance = serde_json::from_value(meta["provenance"].clone())
            .map_err(|e| bad(&format!("provenance: {e}")))?;
        let mut h = Self::untrained(generator_id, arch, resolution, 0)?;
        h.provenance = provenance.clone();
        let mut ae = Vec::new();
        let mut den = Vec::new();
        for a in c.arrays {
            let (dst, name) = if let Some(n) = a.name.strip_prefix("ae/") {
                (&mut ae, n.to_string())
            } else if let Some(n) = a.name.strip_prefix("den/") {
                (&mut den, n.to_string())
            } else {
                return Err(bad(&format!("unexpected array '{}'", a.name)));
            };
            let shape = a.shape.clone();
            dst.push((name, Tensor::new(&shape, a.into_f32()?)));
        }
        h.params.load(ae).map_err(|e| bad(&e))?;
        if let Some(dp) = &provenance.denoiser {
            let mut params = ParamSet::new();
            let net = DenoiserNet::build(&mut params, &mut crate::rng::stream(0, "load"), dp.width);
            params.load(den).map_err(|e| bad(&e))?;
            h.denoiser = Some(Denoiser {
                net,
                params,
                latent_scale: dp.latent_scale,
            });
        } else if !den.is_empty() {
            return Err(bad("denoiser weights without denoiser provenance"));
        }
        Ok(h)
    }

    /// Freshly initialized autoencoder without a denoiser.
    pub(crate) fn untrained(id: &str, arch: ArchSpec, resolution: usize, seed: u64) -> Result<Self> {
        if resolution < 16 || !resolution.is_power_of_two() {
            return Err(Error::Config(format!("unsupported resolution {resolution}")));
        }
        let mut params = ParamSet::new();
        let net = AutoencoderNet::build(&mut params, &mut crate::rng::stream(seed, "ae-init"), arch);
        Ok(Self {
            generator_id: id.to_string(),
            arch,
            resolution,
            net,
            params,
            denoiser: None,
            provenance: Provenance {
                seed,
                epochs: 0,
                arch_tag: arch.to_string(),
                latent_reg: 0.0,
                holdout_mse: None,
                denoiser: None,
            },
        })
    }
}

#[cfg(test)]
pub(crate) mod tests;
