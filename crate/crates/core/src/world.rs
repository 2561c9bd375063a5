//! The desk-scale experiment world: procedural reals, a family of toy
//! generators producing fakes, and a leave-one-generator-out split.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{synth_styled_corpus, CorpusStyle, Image, Label, LabeledImageSet};
use crate::error::{Error, Result, StageExt};
use crate::rng;
use crate::toygen::{family_id, make_generator_family, CodecTrainConfig, GeneratorHandle, ReconstructionSettings};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub seed: u64,
    pub resolution: usize,
    /// Training reals; the training fakes match this count.
    pub n_real: usize,
    /// Appearance of every procedural real in the world. The default keeps
    /// sensor noise low so that generator residue is not masked.
    pub style: CorpusStyle,
    /// Reals the generator family is trained on.
    pub n_family_train: usize,
    pub n_test_real: usize,
    /// Test fakes per generator.
    pub n_test_fake: usize,
    pub family_size: usize,
    /// Index of the generator whose fakes are used for training.
    pub train_generator: usize,
    /// Index of the generator held out for the unseen-generator test.
    pub test_generator: usize,
    /// Round-trip settings used by every generator to produce fakes.
    pub fake_settings: ReconstructionSettings,
    pub codec: CodecTrainConfig,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            resolution: 32,
            n_real: 2000,
            style: CorpusStyle {
                noise_sigma: (0.0, 0.01),
                ..CorpusStyle::default()
            },
            n_family_train: 1000,
            n_test_real: 500,
            n_test_fake: 500,
            family_size: 4,
            train_generator: 0,
            test_generator: 2,
            fake_settings: ReconstructionSettings {
                steps: 8,
                strength: 0.1,
                guidance: 0.0,
            },
            codec: CodecTrainConfig::default(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_real == 0 || self.n_test_real == 0 || self.n_test_fake == 0 {
            return Err(Error::Config("world image counts must be >= 1".into()));
        }
        if self.train_generator >= self.family_size || self.test_generator >= self.family_size {
            return Err(Error::Config(format!(
                "world generator indices must be below family_size {}",
                self.family_size
            )));
        }
        if self.train_generator == self.test_generator {
            return Err(Error::Config("world.test_generator must differ from world.train_generator".into()));
        }
        self.fake_settings.validate()?;
        self.codec.validate()
    }
}

/// Generators plus the train/test splits they produce.
#[derive(Clone, Debug)]
pub struct World {
    pub config: WorldConfig,
    pub generators: Vec<GeneratorHandle>,
    /// Training reals and the training generator's fakes.
    pub train: LabeledImageSet,
    pub test_real: LabeledImageSet,
    /// Test fakes keyed by generator id.
    pub test_fakes: BTreeMap<String, LabeledImageSet>,
}

impl World {
    pub fn train_generator_id(&self) -> String {
        family_id(self.config.train_generator)
    }

    pub fn test_generator_id(&self) -> String {
        family_id(self.config.test_generator)
    }

    /// Test reals plus the fakes of one generator.
    pub fn test_set(&self, generator_id: &str) -> Result<LabeledImageSet> {
        let fakes = self
            .test_fakes
            .get(generator_id)
            .ok_or_else(|| Error::Precondition(format!("world has no generator '{generator_id}'")))?;
        let mut set = self.test_real.clone();
        set.extend(fakes.clone());
        Ok(set)
    }

    /// Test reals plus the fakes of every generator.
    pub fn full_test_set(&self) -> LabeledImageSet {
        let mut set = self.test_real.clone();
        for f in self.test_fakes.values() {
            set.extend(f.clone());
        }
        set
    }
}

fn reals(cfg: &WorldConfig, n: usize, prefix: &str) -> Result<LabeledImageSet> {
    synth_styled_corpus(cfg.seed, n, cfg.resolution, &cfg.style, prefix, Label::Real, None)
}

fn fakes_from(gen: &GeneratorHandle, content: &LabeledImageSet, settings: &ReconstructionSettings, seed: u64, label: &str) -> Result<LabeledImageSet> {
    let refs: Vec<&Image> = content.items.iter().collect();
    let mut r = rng::stream(seed, label);
    Ok(LabeledImageSet::new(gen.generate(&refs, settings, &mut r)?))
}

/// Train the family and render every split.
pub fn build_world(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let base = reals(cfg, cfg.n_family_train, "family").stage("corpus")?;
    let generators = make_generator_family(cfg.family_size, &base, cfg.seed, &cfg.codec).stage("world-family")?;
    build_world_with(cfg, generators)
}

/// Render the splits with an already trained family.
pub fn build_world_with(cfg: &WorldConfig, generators: Vec<GeneratorHandle>) -> Result<World> {
    cfg.validate()?;
    if generators.len() != cfg.family_size {
        return Err(Error::Precondition(format!(
            "{} generators for family_size {}",
            generators.len(),
            cfg.family_size
        )));
    }
    let mut train = reals(cfg, cfg.n_real, "real").stage("corpus")?;
    let content = reals(cfg, cfg.n_real, "content").stage("corpus")?;
    let gen_a = &generators[cfg.train_generator];
    train.extend(fakes_from(gen_a, &content, &cfg.fake_settings, cfg.seed, "train-fakes").stage("world-fakes")?);

    let test_real = reals(cfg, cfg.n_test_real, "test-real").stage("corpus")?;
    let test_content = reals(cfg, cfg.n_test_fake, "test-content").stage("corpus")?;
    let mut test_fakes = BTreeMap::new();
    for (i, g) in generators.iter().enumerate() {
        let label = format!("test-fakes-{i}");
        test_fakes.insert(
            g.generator_id.clone(),
            fakes_from(g, &test_content, &cfg.fake_settings, cfg.seed, &label).stage("world-fakes")?,
        );
    }
    Ok(World {
        config: cfg.clone(),
        generators,
        train,
        test_real,
        test_fakes,
    })
}
