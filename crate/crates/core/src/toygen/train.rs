use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::net::{alpha_bar, DenoiserNet, DIFFUSION_STEPS};
use super::{ArchSpec, Denoiser, DenoiserProvenance, GeneratorHandle};
use crate::corpus::{batch_tensor, LabeledImageSet};
use crate::error::{Error, Result};
use crate::nn::{AdamW, Graph, ParamSet, Tensor};
use crate::rng;

/// Training knobs shared by every handle of a family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the `mean(z^2)` latent penalty before the per-arch multiplier.
    pub latent_reg: f64,
    pub holdout_fraction: f64,
    /// Held-out pixel MSE above which training is reported as failed.
    pub mse_ceiling: f64,
    pub denoiser_width: usize,
    pub denoiser_steps: usize,
    pub denoiser_batch: usize,
    pub denoiser_learning_rate: f64,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 2e-3,
            latent_reg: 1e-3,
            holdout_fraction: 0.1,
            mse_ceiling: 0.01,
            denoiser_width: 16,
            denoiser_steps: 1500,
            denoiser_batch: 64,
            denoiser_learning_rate: 2e-3,
        }
    }
}

impl CodecTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size as f64),
            ("learning_rate", self.learning_rate),
            ("mse_ceiling", self.mse_ceiling),
            ("denoiser_width", self.denoiser_width as f64),
            ("denoiser_batch", self.denoiser_batch as f64),
            ("denoiser_learning_rate", self.denoiser_learning_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("codec.{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) || self.latent_reg < 0.0 {
            return Err(Error::Config(
                "codec.holdout_fraction must be in [0, 1) and codec.latent_reg >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Architecture and latent-penalty multiplier of family member `i`
/// (cycled when the family is larger). Members 0 and 1 share an
/// architecture and differ only by seed.
pub const FAMILY_ARCHS: [(&str, f64); 6] = [
    ("nearest-relu-w16", 1.0),
    ("nearest-relu-w16", 1.0),
    ("shuffle-lrelu-w16", 1.0),
    ("shuffle-tanh-w12", 3.0),
    ("nearest-lrelu-w12", 0.3),
    ("shuffle-relu-w16", 1.0),
];

/// Default id of family member `i`: `gen-a`, `gen-b`, ...
pub fn family_id(i: usize) -> String {
    if i < 26 {
        format!("gen-{}", (b'a' + i as u8) as char)
    } else {
        format!("gen-{i}")
    }
}

/// Train an autoencoder (no denoiser). A fixed fraction of `images` is held
/// out; the handle is rejected when its held-out MSE exceeds the ceiling.
pub fn train_autoencoder(
    images: &LabeledImageSet,
    arch_tag: &str,
    seed: u64,
    epochs: usize,
    cfg: &CodecTrainConfig,
) -> Result<GeneratorHandle> {
    train_autoencoder_with_reg(images, arch_tag, seed, epochs, cfg, cfg.latent_reg)
}

fn train_autoencoder_with_reg(
    images: &LabeledImageSet,
    arch_tag: &str,
    seed: u64,
    epochs: usize,
    cfg: &CodecTrainConfig,
    latent_reg: f64,
) -> Result<GeneratorHandle> {
    cfg.validate()?;
    let arch: ArchSpec = arch_tag.parse()?;
    let n = images.len();
    if n < 64 {
        return Err(Error::Precondition(format!(
            "autoencoder training needs at least 64 images, got {n}"
        )));
    }
    let res = images
        .resolution()
        .ok_or_else(|| Error::Shape("training images have mixed resolutions".into()))?;
    let mut h = GeneratorHandle::untrained(&format!("{arch_tag}-s{seed}"), arch, res, seed)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "ae-split"));
    let n_hold = ((n as f64 * cfg.holdout_fraction).ceil() as usize).clamp(1, n - 1);
    let (hold, train) = order.split_at(n_hold);

    let mut opt = AdamW::new(&h.params, cfg.learning_rate, 0.0);
    let mut r = rng::stream(seed, "ae-batches");
    let mut idx = train.to_vec();
    for epoch in 0..epochs {
        idx.shuffle(&mut r);
        for chunk in idx.chunks(cfg.batch_size) {
            let x = batch_tensor(chunk.iter().map(|&i| &images.items[i]));
            let mut g = Graph::new();
            let p = h.params.bind(&mut g, true);
            let xv = g.constant(x);
            let z = h.net.encode(&mut g, &p, xv);
            let y = h.net.decode(&mut g, &p, z);
            let mut loss = g.mse(y, xv);
            if latent_reg > 0.0 {
                let zz = g.mul(z, z);
                let m = g.mean(zz);
                let reg = g.scale(m, latent_reg as f32);
                loss = g.add(loss, reg);
            }
            let lv = g.value(loss).item() as f64;
            if !lv.is_finite() {
                return Err(Error::TrainingFailure {
                    reason: format!("non-finite autoencoder loss in epoch {epoch}"),
                    final_loss: lv,
                });
            }
            g.backward(loss);
            let grads = h.params.grads(&mut g, &p);
            opt.step(&mut h.params, &grads);
        }
    }

    let held: Vec<_> = hold.iter().map(|&i| &images.items[i]).collect();
    let z = h.encode_batch(&held)?;
    let recon = h.decode_batch(&z)?;
    let mse = held.iter().zip(&recon).map(|(a, b)| a.mse(b)).sum::<f64>() / held.len() as f64;
    h.provenance.epochs = epochs;
    h.provenance.latent_reg = latent_reg;
    h.provenance.holdout_mse = Some(mse);
    if !(mse <= cfg.mse_ceiling) {
        return Err(Error::TrainingFailure {
            reason: format!(
                "'{arch_tag}' held-out MSE {mse:.5} above ceiling {}",
                cfg.mse_ceiling
            ),
            final_loss: mse,
        });
    }
    log::info!("autoencoder {arch_tag} seed {seed}: held-out MSE {mse:.5}");
    Ok(h)
}

/// Fit an epsilon-predicting denoiser on the handle's (scaled) latents of
/// `images` and attach it to the handle.
pub fn train_denoiser(
    h: &mut GeneratorHandle,
    images: &LabeledImageSet,
    seed: u64,
    cfg: &CodecTrainConfig,
) -> Result<()> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::EmptyDataset("denoiser training set".into()));
    }
    let refs: Vec<_> = images.items.iter().collect();
    let latents = h.encode_batch(&refs)?;
    let all: Vec<f64> = latents.iter().flat_map(|z| z.values().iter().copied()).collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64;
    let scale = var.sqrt().max(1e-6);

    let shape = h.latent_shape();
    let per = shape.iter().product::<usize>();
    let plane = shape[1] * shape[2];
    let mut params = ParamSet::new();
    let net = DenoiserNet::build(&mut params, &mut rng::stream(seed, "den-init"), cfg.denoiser_width);
    let mut opt = AdamW::new(&params, cfg.denoiser_learning_rate, 0.0);
    let mut r = rng::stream(seed, "den-batches");
    let ab = alpha_bar();
    let bs = cfg.denoiser_batch;
    let mut recent = Vec::new();
    for step in 0..cfg.denoiser_steps {
        let mut input = Vec::with_capacity(bs * (per + plane));
        let mut target = Vec::with_capacity(bs * per);
        for _ in 0..bs {
            let z = &latents[r.random_range(0..latents.len())];
            let u: f64 = r.random();
            let t = ((DIFFUSION_STEPS as f64 * u * u).ceil() as usize).clamp(1, DIFFUSION_STEPS);
            let a = ab[t];
            for &v in z.values() {
                let eps: f64 = r.sample(StandardNormal);
                input.push((a.sqrt() * v / scale + (1.0 - a).sqrt() * eps) as f32);
                target.push(eps as f32);
            }
            input.extend(std::iter::repeat_n((t as f64 / DIFFUSION_STEPS as f64) as f32, plane));
        }
        let mut g = Graph::new();
        let p = params.bind(&mut g, true);
        let xv = g.constant(Tensor::new(&[bs, shape[0] + 1, shape[1], shape[2]], input));
        let tv = g.constant(Tensor::new(&[bs, shape[0], shape[1], shape[2]], target));
        let pred = net.forward(&mut g, &p, xv);
        let loss = g.mse(pred, tv);
        let lv = g.value(loss).item() as f64;
        if !lv.is_finite() {
            return Err(Error::TrainingFailure {
                reason: format!("non-finite denoiser loss at step {step}"),
                final_loss: lv,
            });
        }
        if step + 50 >= cfg.denoiser_steps {
            recent.push(lv);
        }
        g.backward(loss);
        let grads = params.grads(&mut g, &p);
        opt.step(&mut params, &grads);
    }
    let final_loss = if recent.is_empty() {
        f64::NAN
    } else {
        recent.iter().sum::<f64>() / recent.len() as f64
    };
    h.provenance.denoiser = Some(DenoiserProvenance {
        seed,
        width: cfg.denoiser_width,
        steps: cfg.denoiser_steps,
        latent_scale: scale,
        final_loss: if final_loss.is_finite() { final_loss } else { 0.0 },
    });
    h.denoiser = Some(Denoiser {
        net,
        params,
        latent_scale: scale,
    });
    Ok(())
}

/// Train `m` handles (autoencoder plus denoiser) on `base_corpus`. Members
/// differ in architecture, latent penalty and seed; all share one latent shape.
pub fn make_generator_family(
    m: usize,
    base_corpus: &LabeledImageSet,
    seed: u64,
    cfg: &CodecTrainConfig,
) -> Result<Vec<GeneratorHandle>> {
    let archs: Vec<usize> = (0..m).map(|i| i % FAMILY_ARCHS.len()).collect();
    make_generator_family_with(&archs, base_corpus, seed, cfg)
}

/// Like [`make_generator_family`], with member `i` built from
/// `FAMILY_ARCHS[archs[i]]`.
pub fn make_generator_family_with(
    archs: &[usize],
    base_corpus: &LabeledImageSet,
    seed: u64,
    cfg: &CodecTrainConfig,
) -> Result<Vec<GeneratorHandle>> {
    if archs.is_empty() {
        return Err(Error::Precondition("generator family needs m >= 1".into()));
    }
    if let Some(bad) = archs.iter().find(|&&a| a >= FAMILY_ARCHS.len()) {
        return Err(Error::Precondition(format!(
            "architecture index {bad} out of range (family table has {})",
            FAMILY_ARCHS.len()
        )));
    }
    let mut family = Vec::with_capacity(archs.len());
    for (i, &a) in archs.iter().enumerate() {
        let (arch, reg_mult) = FAMILY_ARCHS[a];
        let member_seed: u64 = rng::indexed(seed, "family", i as u64).random();
        let mut h = train_autoencoder_with_reg(
            base_corpus,
            arch,
            member_seed,
            cfg.epochs,
            cfg,
            cfg.latent_reg * reg_mult,
        )?;
        h.generator_id = family_id(i);
        train_denoiser(&mut h, base_corpus, member_seed, cfg)?;
        family.push(h);
    }
    let shape = family[0].latent_shape();
    if family.iter().any(|h| h.latent_shape() != shape) {
        return Err(Error::Shape("generator family latent shapes differ".into()));
    }
    Ok(family)
}
