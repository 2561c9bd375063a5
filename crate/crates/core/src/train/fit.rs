use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{build_pairs, train_epochs, EpochLosses, PairStream, TrainConfig, TrainState};
use crate::container::config_hash;
use crate::corpus::{Label, LabeledImageSet};
use crate::detector::Detector;
use crate::error::{Error, Result, StageExt};
use crate::imprint::{
    build_fused_field, collect_imprints, expand_dataset, ExpansionManifest, FusionSpec, ImprintBatch, LaplaceField,
};
use crate::nn::ParamSet;
use crate::rng;
use crate::toygen::{make_generator_family_with, CodecTrainConfig, FAMILY_ARCHS, GeneratorHandle, ReconstructionSettings, LATENT_CHANNELS, LATENT_DOWNSAMPLE};

/// Imprint simulator setup. The first pool member doubles as the frozen
/// codec that maps images to and from latent space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorConfig {
    /// Number of reconstructors whose imprints are fused (`m`); 0 disables
    /// simulation entirely.
    pub pool_size: usize,
    /// Real images used to collect each imprint batch.
    pub imprint_images: usize,
    pub reconstruction: ReconstructionSettings,
    /// Fusion weights, uniform when absent.
    pub fusion_weights: Option<Vec<f64>>,
    /// Architecture-table indices of the pool members when the pool is
    /// trained here; the first `pool_size` entries are used, and the table
    /// is cycled when empty. The default starts with architectures the
    /// default world family does not use.
    pub archs: Vec<usize>,
    /// Training of the pool when `fit` builds it itself.
    pub codec: CodecTrainConfig,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            pool_size: 4,
            imprint_images: 500,
            reconstruction: ReconstructionSettings::default(),
            fusion_weights: None,
            archs: vec![5, 4, 3, 2],
            codec: CodecTrainConfig::default(),
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pool_size > 0 && self.imprint_images == 0 {
            return Err(Error::Config("simulator.imprint_images must be >= 1".into()));
        }
        if !self.archs.is_empty() && self.archs.len() < self.pool_size {
            return Err(Error::Config(format!(
                "simulator.archs has {} entries, pool_size {} needs that many",
                self.archs.len(),
                self.pool_size
            )));
        }
        if let Some(w) = &self.fusion_weights {
            if w.len() != self.pool_size {
                return Err(Error::Config(format!(
                    "simulator.fusion_weights has {} entries for pool_size {}",
                    w.len(),
                    self.pool_size
                )));
            }
        }
        self.reconstruction.validate()?;
        self.codec.validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub seed: u64,
    pub simulator: SimulatorConfig,
    pub train: TrainConfig,
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.simulator.validate()?;
        self.train.validate()
    }

    /// Whether this run needs a simulator pool at all.
    pub fn uses_simulator(&self) -> bool {
        self.simulator.pool_size > 0 && self.train.expansion.real_fraction > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub run: u64,
    pub pool: u64,
    pub imprints: u64,
    pub expansion: u64,
    pub detector_init: u64,
    pub epochs: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunCounts {
    pub train_images: usize,
    pub real: usize,
    pub fake: usize,
    pub simulated: usize,
    pub removed_fakes: usize,
    pub pairs: usize,
    pub imprint_images: usize,
}

/// Machine-readable summary of a `fit` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub config: FitConfig,
    pub config_hash: String,
    pub seeds: RunSeeds,
    pub counts: RunCounts,
    pub simulator_ids: Vec<String>,
    pub codec_id: Option<String>,
    /// Parameter digest of the frozen codec before and after detector training.
    pub codec_digest_before: Option<String>,
    pub codec_digest_after: Option<String>,
    pub epochs: Vec<EpochLosses>,
    pub warnings: Vec<String>,
}

impl TrainingReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug)]
pub struct FitOutcome {
    pub detector: Detector,
    pub report: TrainingReport,
    pub manifest: ExpansionManifest,
    pub field: Option<LaplaceField>,
    pub imprint_batches: Vec<ImprintBatch>,
}

/// Where to persist per-epoch training state, and whether to resume from it.
#[derive(Clone, Debug, Default)]
pub struct Checkpointing {
    pub state_path: Option<PathBuf>,
    pub resume: bool,
}

/// Hex digest of a parameter set's raw values.
pub fn param_digest(p: &ParamSet) -> String {
    let mut h = Sha256::new();
    for (name, t) in p.iter() {
        h.update(name.as_bytes());
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Full pipeline: train a simulator pool on the training reals, then run
/// [`fit_with_pool`].
pub fn fit(cfg: &FitConfig, data: &LabeledImageSet, ckpt: &Checkpointing) -> Result<FitOutcome> {
    cfg.validate()?;
    let pool = if cfg.uses_simulator() {
        let reals = LabeledImageSet::new(data.with_label(Label::Real).cloned().collect());
        train_pool(&cfg.simulator, &reals, pool_seed(cfg.seed)).stage("codec-family")?
    } else {
        Vec::new()
    };
    fit_with_pool(cfg, data, &pool, ckpt)
}

/// Train a simulator pool; members are named `sim-a`, `sim-b`, ...
pub fn train_pool(sim: &SimulatorConfig, reals: &LabeledImageSet, seed: u64) -> Result<Vec<GeneratorHandle>> {
    let archs: Vec<usize> = if sim.archs.is_empty() {
        (0..sim.pool_size).map(|i| i % FAMILY_ARCHS.len()).collect()
    } else {
        sim.archs[..sim.pool_size].to_vec()
    };
    let mut pool = make_generator_family_with(&archs, reals, seed, &sim.codec)?;
    for h in &mut pool {
        h.generator_id = h.generator_id.replacen("gen-", "sim-", 1);
    }
    Ok(pool)
}

impl RunSeeds {
    /// Every stage seed of a run, derived from the run seed.
    pub fn derive(seed: u64) -> Self {
        Self {
            run: seed,
            pool: pool_seed(seed),
            imprints: rng::stream(seed, "imprint-seed").random(),
            expansion: rng::stream(seed, "expansion-seed").random(),
            detector_init: seed,
            epochs: seed,
        }
    }
}

/// Seed of the simulator pool trained for run seed `seed`.
pub fn pool_seed(seed: u64) -> u64 {
    rng::stream(seed, "pool-seed").random()
}

/// Imprints -> fused field -> expansion -> pairs -> detector, using the first
/// `pool_size` members of a pre-trained `pool`.
pub fn fit_with_pool(
    cfg: &FitConfig,
    data: &LabeledImageSet,
    pool: &[GeneratorHandle],
    ckpt: &Checkpointing,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let hash = config_hash(cfg);
    let res = data
        .resolution()
        .ok_or_else(|| Error::Shape("training images are empty or have mixed resolutions".into()))
        .stage("data")?;
    let seeds = RunSeeds::derive(cfg.seed);
    let mut warnings = Vec::new();
    let m = cfg.simulator.pool_size;
    let simulate = cfg.uses_simulator();
    if simulate && pool.len() < m {
        return Err(Error::Precondition(format!("simulator pool has {} members, {m} required", pool.len())))
            .stage("codec-family");
    }
    let pool = if simulate { &pool[..m] } else { &pool[..0] };

    let mut imprint_batches = Vec::new();
    let mut field = None;
    let mut imprint_n = 0;
    let (expanded, manifest) = if simulate {
        let reals: Vec<_> = data.with_label(Label::Real).collect();
        let mut r = rng::stream(seeds.imprints, "imprint-subset");
        let n = cfg.simulator.imprint_images.min(reals.len());
        if n < cfg.simulator.imprint_images {
            warnings.push(format!("only {n} reals available for imprint collection"));
        }
        let subset = LabeledImageSet::new(
            index::sample(&mut r, reals.len(), n).into_iter().map(|i| reals[i].clone()).collect(),
        );
        imprint_n = n;
        // Every generator sees the same noise draws, so index-wise fusion
        // averages generator behavior rather than independent noise.
        for g in pool {
            let mut gr = rng::stream(seeds.imprints, "imprint");
            imprint_batches.push(collect_imprints(g, &subset, &cfg.simulator.reconstruction, &mut gr).stage("imprints")?);
        }
        let ids: Vec<String> = pool.iter().map(|g| g.generator_id.clone()).collect();
        let spec = match &cfg.simulator.fusion_weights {
            Some(w) => FusionSpec {
                generator_ids: ids,
                weights: w.clone(),
            },
            None => FusionSpec::uniform(ids),
        };
        let f = build_fused_field(&imprint_batches, &spec).stage("fuse")?;
        let mut policy = cfg.train.expansion.clone();
        policy.seed = seeds.expansion;
        let out = expand_dataset(data, &pool[0], &f, &policy).stage("expand")?;
        field = Some(f);
        out
    } else {
        (data.clone(), ExpansionManifest::default())
    };

    let pairs = match pool.first() {
        Some(codec) => build_pairs(&expanded, &manifest, codec, cfg.train.pair_batch_size).stage("pairs")?,
        None => PairStream::default(),
    };
    if pairs.is_empty() && cfg.train.loss.uses_aux() && cfg.train.detector.branches.noise {
        warnings.push("no simulated pairs: auxiliary losses are inactive".into());
    }

    let latent_shape = pool
        .first()
        .map(|g| g.latent_shape())
        .unwrap_or([LATENT_CHANNELS, res / LATENT_DOWNSAMPLE, res / LATENT_DOWNSAMPLE]);
    let digest_before = pool.first().map(|g| param_digest(g.parameters()));

    let mut state = match (&ckpt.state_path, ckpt.resume) {
        (Some(p), true) if p.exists() => TrainState::load(p, &cfg.train).stage("resume")?,
        _ => {
            let det = Detector::new(cfg.train.detector.clone(), cfg.train.loss, res, latent_shape, seeds.detector_init)
                .stage("detector")?;
            TrainState::new(det, &cfg.train)
        }
    };
    while state.next_epoch < cfg.train.epochs {
        train_epochs(&mut state, &expanded, &pairs, &cfg.train, seeds.epochs, Some(1)).stage("train")?;
        if let Some(p) = &ckpt.state_path {
            state.save(p, &hash).stage("checkpoint")?;
        }
    }
    let digest_after = pool.first().map(|g| param_digest(g.parameters()));
    for w in &warnings {
        log::warn!("{w}");
    }

    let report = TrainingReport {
        config: cfg.clone(),
        config_hash: hash,
        seeds,
        counts: RunCounts {
            train_images: expanded.len(),
            real: expanded.count(Label::Real),
            fake: expanded.count(Label::Fake),
            simulated: manifest.inserted.len(),
            removed_fakes: manifest.removed_fake_ids.len(),
            pairs: pairs.len(),
            imprint_images: imprint_n,
        },
        simulator_ids: pool.iter().map(|g| g.generator_id.clone()).collect(),
        codec_id: pool.first().map(|g| g.generator_id.clone()),
        codec_digest_before: digest_before,
        codec_digest_after: digest_after,
        epochs: state.history.clone(),
        warnings,
    };
    Ok(FitOutcome {
        detector: state.detector,
        report,
        manifest,
        field,
        imprint_batches,
    })
}
