//! Experiment configuration: one TOML file with a section per stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::container::config_hash;
use crate::error::{Error, Result};
use crate::eval::RobustnessOptions;
use crate::train::{FitConfig, SimulatorConfig, TrainConfig};
use crate::world::WorldConfig;

/// Version of the configuration schema understood by this build.
pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "IMPRINT_LAB_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub holdout_fraction: f64,
    pub standardize: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            holdout_fraction: 0.2,
            standardize: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// Name of a built-in grid.
    pub grid: String,
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            grid: "components".into(),
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Run seed; required.
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub simulator: SimulatorConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub robustness: RobustnessOptions,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    /// Defaults everywhere except the seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed,
            output_dir: default_output_dir(),
            world: WorldConfig::default(),
            simulator: SimulatorConfig::default(),
            train: TrainConfig::default(),
            robustness: RobustnessOptions::default(),
            analysis: AnalysisConfig::default(),
            ablation: AblationConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.world.validate()?;
        self.fit().validate()?;
        if !(0.0..1.0).contains(&self.analysis.holdout_fraction) || self.analysis.holdout_fraction == 0.0 {
            return Err(Error::Config("analysis.holdout_fraction must be in (0, 1)".into()));
        }
        if self.ablation.seeds.is_empty() {
            return Err(Error::Config("ablation.seeds must not be empty".into()));
        }
        Ok(())
    }

    /// The training-pipeline part of the config.
    pub fn fit(&self) -> FitConfig {
        FitConfig {
            seed: self.seed,
            simulator: self.simulator.clone(),
            train: self.train.clone(),
        }
    }

    /// Output directory after the environment override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }

    /// The fully populated config as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }
}

/// Parse and validate config text; errors name the offending field.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::Config(e.message().to_string()))?;
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            Error::Config(inner.message().to_string())
        } else {
            Error::Config(format!("{path}: {}", inner.message()))
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config("schema_version = 1\nseed = 5\n").unwrap();
        assert_eq!(c, ExperimentConfig::with_seed(5));
        assert_eq!(c.train.learning_rate, 1e-4);
        assert_eq!(c.train.loss.alpha, 0.2);
        assert_eq!(c.world.n_real, 2000);
        assert!(c.train.augment_simulated);
        let c = parse_config("schema_version = 1\nseed = 5\n[train]\naugment_simulated = false\n").unwrap();
        assert!(!c.train.augment_simulated);
    }

    #[test]
    fn seed_is_mandatory() {
        let e = parse_config("schema_version = 1\n").unwrap_err().to_string();
        assert!(e.contains("seed"), "{e}");
    }

    #[test]
    fn wrong_version_is_rejected() {
        let e = parse_config("schema_version = 9\nseed = 1\n").unwrap_err().to_string();
        assert!(e.contains("schema_version"), "{e}");
    }

    #[test]
    fn errors_name_the_field_path() {
        let e = parse_config("schema_version = 1\nseed = 1\n[train]\nepochs = \"many\"\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("train.epochs"), "{e}");
        let e = parse_config("schema_version = 1\nseed = 1\n[train.loss]\ngamma = 1.0\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("train.loss") && e.contains("gamma"), "{e}");
        let e = parse_config("schema_version = 1\nseed = 1\nbogus = 2\n").unwrap_err().to_string();
        assert!(e.contains("bogus"), "{e}");
    }

    #[test]
    fn semantic_violations_are_config_errors() {
        let e = parse_config("schema_version = 1\nseed = 1\n[train]\nlearning_rate = 0.0\n").unwrap_err();
        assert_eq!(e.tag(), "config");
        assert!(e.to_string().contains("learning_rate"));
    }

    #[test]
    fn echoed_config_reloads_identically() {
        let mut c = ExperimentConfig::with_seed(11);
        c.train.epochs = 3;
        c.simulator.fusion_weights = Some(vec![0.1, 0.2, 0.3, 0.4]);
        let back = parse_config(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let min = parse_config("schema_version = 1\nseed = 2\n").unwrap();
        assert_eq!(parse_config(&min.to_toml()).unwrap(), min);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::with_seed(1);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.train.epochs += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn fit_section_carries_the_run_seed() {
        let c = ExperimentConfig::with_seed(9);
        assert_eq!(c.fit().seed, 9);
        assert_eq!(c.fit().train, c.train);
    }
}
