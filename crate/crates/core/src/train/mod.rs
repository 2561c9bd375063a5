//! Detector training on an expanded dataset, with manifest-linked pairs
//! feeding the auxiliary losses.

mod fit;
mod pairs;

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use fit::{
    fit, fit_with_pool, param_digest, pool_seed, train_pool, Checkpointing, FitConfig, FitOutcome, RunCounts, RunSeeds,
    SimulatorConfig, TrainingReport,
};
pub use pairs::{build_pairs, PairStream, TrainingPair};

use crate::container::{Container, NamedArray, MAGIC_DETECTOR};
use crate::corpus::{augment, AugmentPolicy, Image, LabeledImageSet, SIMULATED};
use crate::detector::{loss_contrast, loss_diff, loss_total_var, Detector, DetectorConfig, LossWeights};
use crate::error::{Error, Result};
use crate::imprint::ExpansionPolicy;
use crate::nn::{AdamW, Graph, Tensor};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Pairs per auxiliary batch.
    pub pair_batch_size: usize,
    pub epochs: usize,
    /// A pair batch accompanies every `pair_interleave`-th BCE batch; the
    /// pair stream is cycled as needed.
    pub pair_interleave: usize,
    pub loss: LossWeights,
    pub augment: AugmentPolicy,
    /// Apply `augment` to simulated fakes too; they are never augmented
    /// inside auxiliary pairs.
    pub augment_simulated: bool,
    pub expansion: ExpansionPolicy,
    pub detector: DetectorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-2,
            batch_size: 32,
            pair_batch_size: 16,
            epochs: 10,
            pair_interleave: 1,
            loss: LossWeights::default(),
            augment: AugmentPolicy::default(),
            augment_simulated: true,
            expansion: ExpansionPolicy::default(),
            detector: DetectorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("train.learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("train.weight_decay must be >= 0".into()));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("pair_interleave", self.pair_interleave),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("train.{name} must be >= 1")));
            }
        }
        if self.pair_batch_size < 2 {
            return Err(Error::Config("train.pair_batch_size must be >= 2".into()));
        }
        self.loss.validate()?;
        self.augment.validate()?;
        self.expansion.validate()?;
        self.detector.validate()
    }
}

/// Component losses of one update; absent terms are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub bce: f64,
    pub diff: f64,
    pub contrast: f64,
    pub total: f64,
    pub with_pairs: bool,
}

/// One AdamW update of `L_total` on a BCE batch and an optional pair batch.
/// Auxiliary terms are skipped when the noise branch is off or their weight
/// is zero.
pub fn train_step(
    det: &mut Detector,
    opt: &mut AdamW,
    bce_batch: &[&Image],
    pair_batch: Option<&[&TrainingPair]>,
) -> Result<StepMetrics> {
    if bce_batch.is_empty() {
        return Err(Error::EmptyDataset("empty BCE batch".into()));
    }
    let w = det.loss_weights;
    let (x, freq) = det.inputs(bce_batch)?;
    let targets: Vec<f32> = bce_batch.iter().map(|i| i.label.target()).collect();

    let mut g = Graph::new();
    let p = det.params.bind(&mut g, true);
    let xv = g.constant(x);
    let fv = freq.map(|f| g.constant(f));
    let fw = det.forward(&mut g, &p, xv, fv);
    let bce = g.bce_with_logits(fw, &targets);

    let mut diff = None;
    let mut contrast = None;
    let pairs = pair_batch.filter(|b| !b.is_empty() && det.has_noise_branch() && w.alpha > 0.0);
    if let Some(pb) = pairs {
        let n = pb.len();
        let imgs: Vec<&Image> = pb.iter().map(|q| &q.real).chain(pb.iter().map(|q| &q.fake)).collect();
        let (px, _) = det.inputs(&imgs)?;
        let pxv = g.constant(px);
        let feats = det.noise_features(&mut g, &p, pxv).expect("noise branch");
        if w.lambda_diff > 0.0 {
            let fr = g.rows(feats, 0, n);
            let ff = g.rows(feats, n, 2 * n);
            let df = g.sub(ff, fr);
            let proj = det.project(&mut g, &p, df).expect("projector with noise branch");
            let dz: Vec<f32> = pb
                .iter()
                .flat_map(|q| q.z_fake.values().iter().zip(q.z_real.values()).map(|(a, b)| (a - b) as f32))
                .collect();
            diff = Some(loss_diff(&mut g, proj, &dz)?);
        }
        if w.lambda_contrast > 0.0 && n >= 2 {
            contrast = Some(loss_contrast(&mut g, feats, n, det.config.temperature)?);
        }
    }
    let total = loss_total_var(&mut g, bce, diff, contrast, &w);
    let scalar = |g: &Graph, v: Option<crate::nn::Var>| v.map_or(0.0, |v| g.value(v).item() as f64);
    let m = StepMetrics {
        bce: scalar(&g, Some(bce)),
        diff: scalar(&g, diff),
        contrast: scalar(&g, contrast),
        total: scalar(&g, Some(total)),
        with_pairs: pairs.is_some(),
    };
    if !m.total.is_finite() {
        return Err(Error::TrainingFailure {
            reason: format!(
                "non-finite loss (bce {}, diff {}, contrast {}) at optimizer step {} on batch starting '{}'",
                m.bce,
                m.diff,
                m.contrast,
                opt.steps_taken(),
                bce_batch[0].id
            ),
            final_loss: m.total,
        });
    }
    g.backward(total);
    let grads = det.params.grads(&mut g, &p);
    opt.step(&mut det.params, &grads);
    Ok(m)
}

/// Mean losses over one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub steps: usize,
    pub pair_steps: usize,
    pub bce: f64,
    pub diff: f64,
    pub contrast: f64,
    pub total: f64,
}

/// Detector, optimizer and position in the schedule. Persisted as a detector
/// checkpoint with extra `opt.` arrays, so every checkpoint is resumable.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub detector: Detector,
    pub optimizer: AdamW,
    pub next_epoch: usize,
    pub history: Vec<EpochLosses>,
}

impl TrainState {
    pub fn new(detector: Detector, cfg: &TrainConfig) -> Self {
        let optimizer = AdamW::new(&detector.params, cfg.learning_rate, cfg.weight_decay);
        Self {
            detector,
            optimizer,
            next_epoch: 0,
            history: Vec::new(),
        }
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        let mut c = self.detector.to_container(config_hash);
        c.meta["train_state"] = serde_json::json!({
            "next_epoch": self.next_epoch,
            "optimizer_step": self.optimizer.steps_taken(),
            "history": self.history,
        });
        let (m, v) = self.optimizer.moments();
        for ((name, _), (mt, vt)) in self.detector.params.iter().zip(m.iter().zip(v)) {
            c.push(NamedArray::f32(format!("opt.m/{name}"), mt.shape(), mt.data().to_vec()));
            c.push(NamedArray::f32(format!("opt.v/{name}"), vt.shape(), vt.data().to_vec()));
        }
        c.write(path, MAGIC_DETECTOR)
    }

    /// Restore a state saved by [`Self::save`]; learning rate and weight
    /// decay come from `cfg`.
    pub fn load(path: &Path, cfg: &TrainConfig) -> Result<Self> {
        let c = Container::read(path, MAGIC_DETECTOR)?;
        let bad = |e: String| Error::Format(format!("{}: {e}", path.display()));
        let ts = c.meta["train_state"].clone();
        if ts.is_null() {
            return Err(bad("checkpoint carries no training state".into()));
        }
        let next_epoch = ts["next_epoch"].as_u64().ok_or_else(|| bad("missing next_epoch".into()))? as usize;
        let step = ts["optimizer_step"].as_u64().ok_or_else(|| bad("missing optimizer_step".into()))?;
        let history: Vec<EpochLosses> = serde_json::from_value(ts["history"].clone()).map_err(|e| bad(e.to_string()))?;
        let mut moments: std::collections::HashMap<String, Tensor<f32>> = std::collections::HashMap::new();
        for a in c.arrays.iter().filter(|a| a.name.starts_with("opt.")) {
            let t = Tensor::new(&a.shape, a.clone().into_f32()?);
            moments.insert(a.name.clone(), t);
        }
        let detector = Detector::from_container(c).map_err(bad)?;
        let mut optimizer = AdamW::new(&detector.params, cfg.learning_rate, cfg.weight_decay);
        let names: Vec<String> = detector.params.names().to_vec();
        let mut take = |prefix: &str| {
            names
                .iter()
                .map(|n| moments.remove(&format!("opt.{prefix}/{n}")).ok_or_else(|| bad(format!("missing opt.{prefix}/{n}"))))
                .collect::<Result<Vec<_>>>()
        };
        let m = take("m")?;
        let v = take("v")?;
        optimizer.restore(step, m, v).map_err(bad)?;
        Ok(Self {
            detector,
            optimizer,
            next_epoch,
            history,
        })
    }
}

/// Run epochs `state.next_epoch..cfg.epochs` (or fewer with `stop_after`).
/// Each epoch draws its shuffles and augmentations from a stream indexed by
/// `(seed, epoch)`, so resuming from a saved state replays exactly.
pub fn train_epochs(
    state: &mut TrainState,
    data: &LabeledImageSet,
    pairs: &PairStream,
    cfg: &TrainConfig,
    seed: u64,
    stop_after: Option<usize>,
) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset("training set".into()));
    }
    let end = stop_after.map_or(cfg.epochs, |s| (state.next_epoch + s).min(cfg.epochs));
    for epoch in state.next_epoch..end {
        let mut r = rng::indexed(seed, "epoch", epoch as u64);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut r);
        let pair_batches = pairs.epoch_batches(&mut r);
        let mut aug = rng::indexed(seed, "augment", epoch as u64);
        let mut acc = EpochLosses {
            epoch,
            steps: 0,
            pair_steps: 0,
            bce: 0.0,
            diff: 0.0,
            contrast: 0.0,
            total: 0.0,
        };
        for (i, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let images: Vec<Image> = chunk
                .iter()
                .map(|&k| {
                    let img = &data.items[k];
                    if !cfg.augment_simulated && img.generator.as_deref() == Some(SIMULATED) {
                        Ok(img.clone())
                    } else {
                        augment(img, &cfg.augment, &mut aug)
                    }
                })
                .collect::<Result<_>>()?;
            let refs: Vec<&Image> = images.iter().collect();
            let pb = (!pair_batches.is_empty() && i % cfg.pair_interleave == 0)
                .then(|| &pair_batches[(i / cfg.pair_interleave) % pair_batches.len()]);
            let pb_refs: Option<Vec<&TrainingPair>> = pb.map(|b| b.iter().map(|&k| &pairs.pairs()[k]).collect());
            let m = train_step(&mut state.detector, &mut state.optimizer, &refs, pb_refs.as_deref())?;
            acc.steps += 1;
            acc.pair_steps += m.with_pairs as usize;
            acc.bce += m.bce;
            acc.diff += m.diff;
            acc.contrast += m.contrast;
            acc.total += m.total;
        }
        let s = acc.steps as f64;
        acc.bce /= s;
        acc.total /= s;
        if acc.pair_steps > 0 {
            acc.diff /= acc.pair_steps as f64;
            acc.contrast /= acc.pair_steps as f64;
        }
        log::info!(
            "epoch {epoch}: bce {:.4} diff {:.4} contrast {:.4} total {:.4}",
            acc.bce,
            acc.diff,
            acc.contrast,
            acc.total
        );
        state.history.push(acc);
        state.next_epoch = epoch + 1;
    }
    Ok(())
}
