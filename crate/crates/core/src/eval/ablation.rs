use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{csv_field, evaluate};
use crate::container::config_hash;
use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::toygen::GeneratorHandle;
use crate::train::{fit_with_pool, Checkpointing, FitConfig};
use crate::world::World;

/// A tagged set of overrides on a base configuration, written as a partial
/// config table (for example `train.loss.alpha = 0.0`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDelta {
    pub tag: String,
    #[serde(default)]
    pub set: toml::Table,
}

impl ConfigDelta {
    /// Parse the override table from TOML text.
    pub fn parse(tag: &str, text: &str) -> Result<Self> {
        let set: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("delta '{tag}': {}", e.message())))?;
        Ok(Self { tag: tag.into(), set })
    }
}

fn merge(dst: &mut toml::Table, src: &toml::Table, path: &str) -> Result<()> {
    for (k, v) in src {
        let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        match (dst.get_mut(k), v) {
            (Some(toml::Value::Table(d)), toml::Value::Table(s)) => merge(d, s, &here)?,
            (Some(_), toml::Value::Table(_)) => {
                return Err(Error::Config(format!("'{here}' is not a section")));
            }
            _ => {
                dst.insert(k.clone(), v.clone());
            }
        }
    }
    Ok(())
}

/// Overlay `delta` on `base` and re-validate against the schema.
pub fn apply_delta(base: &FitConfig, delta: &ConfigDelta) -> Result<FitConfig> {
    let bad = |e: String| Error::Config(format!("delta '{}': {e}", delta.tag));
    let mut table = toml::Table::try_from(base).map_err(|e| bad(e.to_string()))?;
    merge(&mut table, &delta.set, "").map_err(|e| bad(e.to_string()))?;
    let cfg: FitConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| bad(e.message().to_string()))?;
    cfg.validate().map_err(|e| bad(e.to_string()))?;
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Balanced accuracy against the training generator's test fakes.
    pub seen: f64,
    /// Balanced accuracy against the held-out generator's test fakes.
    pub unseen: f64,
    /// Balanced accuracy per world generator.
    pub per_generator: BTreeMap<String, f64>,
    /// Additional measurements from the caller's probe.
    pub extra: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub tag: String,
    pub results: Vec<SeedResult>,
}

impl AblationRow {
    fn mean(&self, f: impl Fn(&SeedResult) -> f64) -> f64 {
        self.results.iter().map(f).sum::<f64>() / self.results.len() as f64
    }

    pub fn mean_seen(&self) -> f64 {
        self.mean(|r| r.seen)
    }

    pub fn mean_unseen(&self) -> f64 {
        self.mean(|r| r.unseen)
    }

    pub fn mean_extra(&self, key: &str) -> Option<f64> {
        self.results
            .iter()
            .map(|r| r.extra.get(key).copied())
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn unseen_by_seed(&self) -> Vec<f64> {
        self.results.iter().map(|r| r.unseen).collect()
    }
}

/// Results keyed by configuration tag, in grid order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub train_generator: String,
    pub test_generator: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, tag: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.tag == tag)
    }

    /// One line per (tag, seed) plus a `mean` line per tag.
    pub fn to_csv(&self) -> String {
        let extras: Vec<String> = {
            let mut k: Vec<String> = self
                .rows
                .iter()
                .flat_map(|r| r.results.iter().flat_map(|s| s.extra.keys().cloned()))
                .collect();
            k.sort();
            k.dedup();
            k
        };
        let mut out = String::from("tag,seed,seen,unseen");
        for e in &extras {
            out.push(',');
            out.push_str(&csv_field(e));
        }
        out.push('\n');
        let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.4}"));
        for row in &self.rows {
            for r in &row.results {
                out.push_str(&format!("{},{},{:.4},{:.4}", csv_field(&row.tag), r.seed, r.seen, r.unseen));
                for e in &extras {
                    out.push(',');
                    out.push_str(&fmt(r.extra.get(e).copied()));
                }
                out.push('\n');
            }
            out.push_str(&format!("{},mean,{:.4},{:.4}", csv_field(&row.tag), row.mean_seen(), row.mean_unseen()));
            for e in &extras {
                out.push(',');
                out.push_str(&fmt(row.mean_extra(e)));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Extra per-run measurements, keyed by name.
pub type Probe<'a> = &'a dyn Fn(&Detector) -> Result<BTreeMap<String, f64>>;

/// Seed results keyed by resolved config and seed. Only valid for one world,
/// pool and probe; grids whose entries coincide then train each run once.
#[derive(Clone, Debug, Default)]
pub struct RunCache {
    results: BTreeMap<(String, u64), SeedResult>,
}

impl RunCache {
    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }
}

/// Train and evaluate every grid entry for every seed, sharing the world and
/// the simulator pool. Errors carry the configuration tag.
pub fn ablation_run(
    base: &FitConfig,
    grid: &[ConfigDelta],
    seeds: &[u64],
    world: &World,
    pool: &[GeneratorHandle],
    probe: Option<Probe>,
) -> Result<AblationTable> {
    ablation_run_cached(base, grid, seeds, world, pool, probe, &mut RunCache::default())
}

/// [`ablation_run`] that reuses and extends `cache`.
pub fn ablation_run_cached(
    base: &FitConfig,
    grid: &[ConfigDelta],
    seeds: &[u64],
    world: &World,
    pool: &[GeneratorHandle],
    probe: Option<Probe>,
    cache: &mut RunCache,
) -> Result<AblationTable> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one grid entry and one seed".into()));
    }
    let seen_id = world.train_generator_id();
    let unseen_id = world.test_generator_id();
    let test = world.full_test_set();
    let mut rows = Vec::with_capacity(grid.len());
    for delta in grid {
        let tagged = |e: Error| e.in_stage(format!("ablation[{}]", delta.tag));
        let cfg = apply_delta(base, delta).map_err(tagged)?;
        let mut results = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut c = cfg.clone();
            c.seed = seed;
            let key = (config_hash(&c), seed);
            if let Some(r) = cache.results.get(&key) {
                results.push(r.clone());
                continue;
            }
            let out = fit_with_pool(&c, &world.train, pool, &Checkpointing::default()).map_err(tagged)?;
            let m = evaluate(&out.detector, &test, true).map_err(tagged)?;
            let per_generator: BTreeMap<String, f64> = m
                .per_generator
                .iter()
                .map(|(g, gm)| (g.clone(), gm.balanced.expect("test set has reals")))
                .collect();
            let extra = match probe {
                Some(p) => p(&out.detector).map_err(tagged)?,
                None => BTreeMap::new(),
            };
            let r = SeedResult {
                seed,
                seen: per_generator[&seen_id],
                unseen: per_generator[&unseen_id],
                per_generator,
                extra,
            };
            log::info!("ablation {} seed {seed}: seen {:.2} unseen {:.2}", delta.tag, r.seen, r.unseen);
            cache.results.insert(key, r.clone());
            results.push(r);
        }
        rows.push(AblationRow {
            tag: delta.tag.clone(),
            results,
        });
    }
    Ok(AblationTable {
        train_generator: seen_id,
        test_generator: unseen_id,
        rows,
    })
}

/// Named experiment grids: `components`, `losses`, `diversity` and
/// `augmentation`.
pub fn standard_grids() -> BTreeMap<&'static str, Vec<ConfigDelta>> {
    let d = |tag: &str, text: &str| ConfigDelta::parse(tag, text).expect("built-in delta parses");
    let no_nis = "train.expansion.real_fraction = 0.0\n";
    let no_nie = "train.detector.branches.noise = false\n";
    let no_base = "train.detector.branches.freq = false\ntrain.detector.branches.sem = false\n";
    let mut g = BTreeMap::new();
    g.insert(
        "components",
        vec![
            d("base", &format!("{no_nis}{no_nie}")),
            d("base+nie", no_nis),
            d("base+nis", no_nie),
            d("full", ""),
            d("nie", &format!("{no_nis}{no_base}")),
            d("nis+nie", no_base),
        ],
    );
    g.insert(
        "losses",
        vec![
            d("no-aux", "train.loss.alpha = 0.0\n"),
            d("diff-only", "train.loss.lambda_contrast = 0.0\n"),
            d("contrast-only", "train.loss.lambda_diff = 0.0\n"),
            d("full", ""),
        ],
    );
    g.insert(
        "diversity",
        [0usize, 1, 2, 4]
            .iter()
            .map(|&m| d(&format!("m={m}"), &format!("simulator.pool_size = {m}\n")))
            .collect(),
    );
    g.insert(
        "augmentation",
        vec![
            d("augmented", ""),
            d("no-augmentation", "train.augment.blur_probability = 0.0\ntrain.augment.jpeg_probability = 0.0\n"),
        ],
    );
    g
}
