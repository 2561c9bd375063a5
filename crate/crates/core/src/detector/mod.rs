//! Hybrid-feature detector: noise-imprint extractor, fixed DCT band
//! features, a small semantic embedding, and an MLP head.

mod loss;
mod net;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use loss::{loss_contrast, loss_diff, loss_total, loss_total_var, LossWeights};
pub use net::{Mlp, Nie, SemNet};

use crate::container::{Container, NamedArray, MAGIC_DETECTOR};
use crate::corpus::{batch_tensor, Image, Label};
use crate::error::{Error, Result};
use crate::nn::{Activation, Bound, Graph, ParamSet, Tensor, Var};
use crate::rng;
use crate::spectrum;

/// Decision threshold on the fake probability; ties go to fake.
pub const THRESHOLD: f64 = 0.5;

/// Fixed affine map applied to log band energies before the head.
const FREQ_SHIFT: f64 = 8.0;
const FREQ_SCALE: f64 = 3.0;

/// Images per inference chunk.
const CHUNK: usize = 64;

pub fn decide(prob: f64) -> Label {
    if prob >= THRESHOLD {
        Label::Fake
    } else {
        Label::Real
    }
}

/// Which feature branches feed the head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Branches {
    pub noise: bool,
    pub freq: bool,
    pub sem: bool,
}

impl Default for Branches {
    fn default() -> Self {
        Self {
            noise: true,
            freq: true,
            sem: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub noise_dim: usize,
    pub freq_bands: usize,
    pub sem_dim: usize,
    pub nie_width: usize,
    pub sem_width: usize,
    pub head_hidden: usize,
    pub projector_hidden: usize,
    /// Contrastive temperature.
    pub temperature: f64,
    pub branches: Branches,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            noise_dim: 128,
            freq_bands: 32,
            sem_dim: 128,
            nie_width: 16,
            sem_width: 16,
            head_hidden: 64,
            projector_hidden: 64,
            temperature: 0.1,
            branches: Branches::default(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let b = self.branches;
        if !(b.noise || b.freq || b.sem) {
            return Err(Error::Config("detector.branches: at least one branch must be enabled".into()));
        }
        for (name, v) in [
            ("noise_dim", self.noise_dim),
            ("freq_bands", self.freq_bands),
            ("sem_dim", self.sem_dim),
            ("nie_width", self.nie_width),
            ("sem_width", self.sem_width),
            ("head_hidden", self.head_hidden),
            ("projector_hidden", self.projector_hidden),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("detector.{name} must be >= 1")));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "detector.temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Width of the concatenated hybrid feature.
    pub fn hybrid_dim(&self) -> usize {
        let b = self.branches;
        b.noise as usize * self.noise_dim + b.freq as usize * self.freq_bands + b.sem as usize * self.sem_dim
    }
}

/// Pooled NIE output for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseFeature {
    pub f: Vec<f64>,
}

/// Per-branch features of one image; disabled branches are empty.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridFeature {
    pub noise: Vec<f64>,
    pub freq: Vec<f64>,
    pub sem: Vec<f64>,
}

/// Log radial DCT band energies of the luma plane (DC excluded).
pub fn freq_features(img: &Image, bands: usize) -> Vec<f64> {
    spectrum::log_band_energies(img, bands)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detector {
    pub config: DetectorConfig,
    pub loss_weights: LossWeights,
    resolution: usize,
    latent_shape: [usize; 3],
    pub(crate) params: ParamSet,
    nie: Option<Nie>,
    sem: Option<SemNet>,
    head: Mlp,
    projector: Option<Mlp>,
}

impl Detector {
    /// Fresh detector for `resolution` images; the projector maps noise
    /// features to latents of `latent_shape`.
    pub fn new(
        config: DetectorConfig,
        loss_weights: LossWeights,
        resolution: usize,
        latent_shape: [usize; 3],
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        loss_weights.validate()?;
        if resolution < 8 {
            return Err(Error::Config(format!("detector resolution {resolution} is too small")));
        }
        let mut params = ParamSet::new();
        let mut r = rng::stream(seed, "detector-init");
        let c = &config;
        let nie = c.branches.noise.then(|| Nie::build(&mut params, &mut r, c.nie_width, c.noise_dim));
        let sem = c.branches.sem.then(|| SemNet::build(&mut params, &mut r, c.sem_width, c.sem_dim));
        let head = Mlp::build(&mut params, &mut r, "head", c.hybrid_dim(), c.head_hidden, 1);
        let latent_len = latent_shape.iter().product();
        let projector = c
            .branches
            .noise
            .then(|| Mlp::build(&mut params, &mut r, "projector", c.noise_dim, c.projector_hidden, latent_len));
        Ok(Self {
            config,
            loss_weights,
            resolution,
            latent_shape,
            params,
            nie,
            sem,
            head,
            projector,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        self.latent_shape
    }

    pub fn parameters(&self) -> &ParamSet {
        &self.params
    }

    pub fn has_noise_branch(&self) -> bool {
        self.nie.is_some()
    }

    fn check_images(&self, images: &[&Image]) -> Result<()> {
        if let Some(bad) = images.iter().find(|i| i.size() != self.resolution) {
            return Err(Error::Shape(format!(
                "image '{}' is {}x{}, detector expects {}x{}",
                bad.id,
                bad.size(),
                bad.size(),
                self.resolution,
                self.resolution
            )));
        }
        Ok(())
    }

    /// Scaled frequency features of a batch, `[n, bands]`.
    pub(crate) fn freq_input(&self, images: &[&Image]) -> Tensor<f32> {
        let bands = self.config.freq_bands;
        let mut data = Vec::with_capacity(images.len() * bands);
        for img in images {
            data.extend(freq_features(img, bands).iter().map(|v| ((v + FREQ_SHIFT) / FREQ_SCALE) as f32));
        }
        Tensor::new(&[images.len(), bands], data)
    }

    /// Input tensors of a batch: pixels and, when enabled, frequency features.
    pub(crate) fn inputs(&self, images: &[&Image]) -> Result<(Tensor<f32>, Option<Tensor<f32>>)> {
        self.check_images(images)?;
        let x = batch_tensor(images.iter().copied());
        let freq = self.config.branches.freq.then(|| self.freq_input(images));
        Ok((x, freq))
    }

    /// Logits `[n, 1]` of the hybrid head.
    pub(crate) fn forward(&self, g: &mut Graph, p: &Bound, x: Var, freq: Option<Var>) -> Var {
        let mut parts = Vec::with_capacity(3);
        parts.extend(self.noise_features(g, p, x));
        if self.config.branches.freq {
            parts.push(freq.expect("frequency input for an enabled branch"));
        }
        if let Some(sem) = &self.sem {
            parts.push(sem.forward(g, p, x));
        }
        let h = if parts.len() == 1 { parts[0] } else { g.concat(&parts) };
        self.head.forward(g, p, h)
    }

    /// Pooled NIE features `[n, noise_dim]`, if the branch is enabled.
    pub(crate) fn noise_features(&self, g: &mut Graph, p: &Bound, x: Var) -> Option<Var> {
        self.nie.as_ref().map(|nie| nie.forward(g, p, x))
    }

    /// Projector output `[n, latent_len]` for noise-feature differences.
    pub(crate) fn project(&self, g: &mut Graph, p: &Bound, delta_f: Var) -> Option<Var> {
        self.projector.as_ref().map(|m| m.forward(g, p, delta_f))
    }

    /// Fake probabilities, deterministic and in input order.
    pub fn predict_proba(&self, images: &[&Image]) -> Result<Vec<f64>> {
        self.check_images(images)?;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(CHUNK) {
            let (x, freq) = self.inputs(chunk)?;
            let mut g = Graph::new();
            let p = self.params.bind(&mut g, false);
            let xv = g.constant(x);
            let fv = freq.map(|f| g.constant(f));
            let fw = self.forward(&mut g, &p, xv, fv);
            let prob = g.act(fw, Activation::Sigmoid);
            out.extend(g.value(prob).data().iter().map(|&v| v as f64));
        }
        Ok(out)
    }

    pub fn predict(&self, img: &Image) -> Result<f64> {
        Ok(self.predict_proba(&[img])?[0])
    }

    pub fn nie_forward(&self, img: &Image) -> Result<NoiseFeature> {
        let nie = self
            .nie
            .as_ref()
            .ok_or_else(|| Error::Capability("noise branch is disabled".into()))?;
        self.check_images(&[img])?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(batch_tensor([img]));
        let f = nie.forward(&mut g, &p, x);
        Ok(NoiseFeature {
            f: g.value(f).data().iter().map(|&v| v as f64).collect(),
        })
    }

    pub fn sem_features(&self, img: &Image) -> Result<Vec<f64>> {
        let sem = self
            .sem
            .as_ref()
            .ok_or_else(|| Error::Capability("semantic branch is disabled".into()))?;
        self.check_images(&[img])?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(batch_tensor([img]));
        let f = sem.forward(&mut g, &p, x);
        Ok(g.value(f).data().iter().map(|&v| v as f64).collect())
    }

    /// Features of every enabled branch, unscaled.
    pub fn features(&self, img: &Image) -> Result<HybridFeature> {
        let b = self.config.branches;
        Ok(HybridFeature {
            noise: if b.noise { self.nie_forward(img)?.f } else { vec![] },
            freq: if b.freq { freq_features(img, self.config.freq_bands) } else { vec![] },
            sem: if b.sem { self.sem_features(img)? } else { vec![] },
        })
    }

    /// Head probability for precomputed features (noise, freq, sem order).
    pub fn discriminate(&self, h: &HybridFeature) -> Result<f64> {
        let c = &self.config;
        let want = [
            (c.branches.noise as usize * c.noise_dim, h.noise.len(), "noise"),
            (c.branches.freq as usize * c.freq_bands, h.freq.len(), "freq"),
            (c.branches.sem as usize * c.sem_dim, h.sem.len(), "sem"),
        ];
        for (w, got, name) in want {
            if w != got {
                return Err(Error::Shape(format!("{name} feature has {got} values, expected {w}")));
            }
        }
        let mut v: Vec<f32> = h.noise.iter().map(|&x| x as f32).collect();
        v.extend(h.freq.iter().map(|x| ((x + FREQ_SHIFT) / FREQ_SCALE) as f32));
        v.extend(h.sem.iter().map(|&x| x as f32));
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(Tensor::new(&[1, v.len()], v));
        let logit = self.head.forward(&mut g, &p, x);
        let prob = g.act(logit, Activation::Sigmoid);
        Ok(g.value(prob).item() as f64)
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        self.to_container(config_hash).write(path, MAGIC_DETECTOR)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_hash(path).map(|(d, _)| d)
    }

    /// Load and also return the producing config hash.
    pub fn load_with_hash(path: &Path) -> Result<(Self, String)> {
        let c = Container::read(path, MAGIC_DETECTOR)?;
        let hash = c.config_hash.clone();
        let d = Self::from_container(c).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Ok((d, hash))
    }

    /// Container with the detector meta under `"detector"` and one array per
    /// parameter.
    pub(crate) fn to_container(&self, config_hash: &str) -> Container {
        let meta = serde_json::json!({
            "detector": DetectorMeta {
                config: self.config.clone(),
                loss_weights: self.loss_weights,
                resolution: self.resolution,
                latent_shape: self.latent_shape,
            }
        });
        let mut c = Container::new(config_hash, meta);
        for (name, t) in self.params.iter() {
            c.push(NamedArray::f32(name, t.shape(), t.data().to_vec()));
        }
        c
    }

    /// Inverse of [`Self::to_container`]; arrays under `opt.` are ignored.
    pub(crate) fn from_container(c: Container) -> std::result::Result<Self, String> {
        let meta: DetectorMeta = serde_json::from_value(c.meta["detector"].clone()).map_err(|e| e.to_string())?;
        let mut d = Self::new(meta.config, meta.loss_weights, meta.resolution, meta.latent_shape, 0)
            .map_err(|e| e.to_string())?;
        let mut entries = Vec::new();
        for a in c.arrays.into_iter().filter(|a| !a.name.starts_with("opt.")) {
            let shape = a.shape.clone();
            let name = a.name.clone();
            entries.push((name, Tensor::new(&shape, a.into_f32().map_err(|e| e.to_string())?)));
        }
        d.params.load(entries)?;
        Ok(d)
    }
}

#[derive(Serialize, Deserialize)]
struct DetectorMeta {
    config: DetectorConfig,
    loss_weights: LossWeights,
    resolution: usize,
    latent_shape: [usize; 3],
}
