//! Command-line front end. `dispatch` returns the process exit code:
//! 0 on success, 1 on a runtime error (one `error[<tag>]: <message>` line on
//! stderr), 2 on a usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::{emit_scatter, pca_project, tail_fit_compare, write_json_lines};
use crate::config::{load_config, ExperimentConfig, OUTPUT_DIR_ENV};
use crate::corpus::{
    list_pngs, load_dataset, load_png, save_dataset, synth_styled_corpus, Image, Label, LabeledImageSet,
};
use crate::detector::{decide, Detector};
use crate::error::{Error, Result};
use crate::eval::{ablation_run, emit_robustness_plot, evaluate, robustness_suite, standard_grids};
use crate::imprint::{
    build_fused_field, collect_imprints, expand_dataset, fit_laplace, fuse_batches, FusionSpec, ImprintBatch,
    LaplaceField,
};
use crate::rng;
use crate::toygen::GeneratorHandle;
use crate::train::{fit, fit_with_pool, pool_seed, train_pool, Checkpointing, RunSeeds};
use crate::world::build_world_with;

#[derive(Debug, Parser)]
#[command(name = "imprint-lab", version, about = "Noise-imprint simulation and generated-image detection")]
pub struct Cli {
    /// Experiment config (TOML).
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config and the environment.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Log more (-v info, -vv debug).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write procedural real images in the dataset layout.
    SynthCorpus {
        /// Number of images (default: world.n_real).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train the world's generator family and render train/test data.
    TrainGenerators {
        /// Also train the simulator pool on the training reals.
        #[arg(long)]
        pool: bool,
    },
    /// Collect an imprint batch from one generator and fit its field.
    FitImprint {
        #[arg(long)]
        generator: PathBuf,
        /// Dataset whose reals are the imprint sources.
        #[arg(long)]
        data: PathBuf,
        /// Number of source reals (default: simulator.imprint_images).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fuse aligned imprint batches and fit the fused field.
    Fuse {
        #[arg(long, num_args = 1.., required = true)]
        batches: Vec<PathBuf>,
        /// Fusion weights (default: simulator.fusion_weights, else uniform).
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        weights: Option<Vec<f64>>,
    },
    /// Replace fakes with simulated fakes.
    Expand {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        field: PathBuf,
        /// Generator used to encode and decode.
        #[arg(long)]
        codec: PathBuf,
    },
    /// Train a detector.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Directory of pre-trained simulator generators.
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Resume from the training state in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Metrics of a detector on a dataset.
    Eval {
        #[arg(long)]
        detector: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// JPEG and blur robustness curves.
    Robustness {
        #[arg(long)]
        detector: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run an ablation grid over the configured seeds.
    Ablate {
        /// Built-in grid (default: ablation.grid).
        #[arg(long)]
        grid: Option<String>,
        /// Directory of the world's generators.
        #[arg(long)]
        generators: PathBuf,
        /// Directory of simulator generators (trained if absent).
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Tail-fit comparison and PCA projection of imprint batches.
    Analyze {
        #[arg(long, num_args = 1.., required = true)]
        batches: Vec<PathBuf>,
        #[arg(long)]
        fused: Option<PathBuf>,
    },
    /// Fake probability for each input image.
    Predict {
        #[arg(long)]
        detector: PathBuf,
        /// PNG files, directories of PNGs, or dataset roots.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SynthCorpus { .. } => "synth-corpus",
            Command::TrainGenerators { .. } => "train-generators",
            Command::FitImprint { .. } => "fit-imprint",
            Command::Fuse { .. } => "fuse",
            Command::Expand { .. } => "expand",
            Command::Fit { .. } => "fit",
            Command::Eval { .. } => "eval",
            Command::Robustness { .. } => "robustness",
            Command::Ablate { .. } => "ablate",
            Command::Analyze { .. } => "analyze",
            Command::Predict { .. } => "predict",
        }
    }

    fn needs_config(&self) -> bool {
        !matches!(self, Command::Eval { .. } | Command::Robustness { .. } | Command::Predict { .. })
    }
}

/// Reproducibility record written by every run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub argv: Vec<String>,
    pub config: Option<ExperimentConfig>,
    pub config_hash: Option<String>,
    pub seeds: Option<RunSeeds>,
    /// SHA-256 of every artifact, keyed by path relative to the output directory.
    pub artifacts: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

struct Run {
    out: PathBuf,
    cfg: Option<ExperimentConfig>,
    hash: String,
    artifacts: Vec<PathBuf>,
    warnings: Vec<String>,
}

impl Run {
    fn cfg(&self) -> &ExperimentConfig {
        self.cfg.as_ref().expect("checked before dispatch")
    }

    fn path(&self, rel: impl AsRef<Path>) -> Result<PathBuf> {
        let p = self.out.join(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(p)
    }

    fn record(&mut self, p: PathBuf) {
        self.artifacts.push(p);
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        let p = self.path(rel)?;
        let text = serde_json::to_string_pretty(value).expect("report serializes");
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        self.record(p.clone());
        Ok(p)
    }
}

/// Parse `argv` (program name first) and run the subcommand.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(&cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.tag(), one_line(&e.to_string()));
            1
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn run(cli: &Cli, argv: Vec<String>) -> Result<()> {
    let cmd = &cli.command;
    let cfg = match &cli.config {
        Some(p) => Some(load_config(p)?),
        None if cmd.needs_config() => {
            return Err(Error::Config(format!("'{}' needs --config", cmd.name())));
        }
        None => None,
    };
    let out = match (&cli.out, &cfg) {
        (Some(o), _) => o.clone(),
        (None, Some(c)) => c.resolved_output_dir(),
        (None, None) => std::env::var_os(OUTPUT_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs")),
    };
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let hash = cfg.as_ref().map(|c| c.hash()).unwrap_or_default();
    let mut r = Run {
        out,
        cfg,
        hash,
        artifacts: Vec::new(),
        warnings: Vec::new(),
    };
    if let Some(c) = &r.cfg {
        let p = r.path("config.resolved.toml")?;
        std::fs::write(&p, c.to_toml()).map_err(|e| Error::io(&p, e))?;
    }
    match cmd {
        Command::SynthCorpus { n } => synth_corpus(&mut r, *n),
        Command::TrainGenerators { pool } => train_generators(&mut r, *pool),
        Command::FitImprint { generator, data, n } => fit_imprint(&mut r, generator, data, *n),
        Command::Fuse { batches, weights } => fuse(&mut r, batches, weights.clone()),
        Command::Expand { data, field, codec } => expand(&mut r, data, field, codec),
        Command::Fit { data, pool, resume } => fit_cmd(&mut r, data, pool.as_deref(), *resume),
        Command::Eval { detector, data } => eval_cmd(&mut r, detector, data),
        Command::Robustness { detector, data } => robustness_cmd(&mut r, detector, data),
        Command::Ablate { grid, generators, pool } => ablate(&mut r, grid.as_deref(), generators, pool.as_deref()),
        Command::Analyze { batches, fused } => analyze(&mut r, batches, fused.as_deref()),
        Command::Predict { detector, inputs } => predict(&mut r, detector, inputs),
    }
    .map_err(|e| e.in_stage(cmd.name()))?;

    let mut artifacts = BTreeMap::new();
    for p in &r.artifacts {
        let key = p.strip_prefix(&r.out).unwrap_or(p).to_string_lossy().into_owned();
        artifacts.insert(key, hash_path(p)?);
    }
    let manifest = RunManifest {
        command: cmd.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        argv,
        seeds: r.cfg.as_ref().map(|c| RunSeeds::derive(c.seed)),
        config_hash: r.cfg.as_ref().map(|_| r.hash.clone()),
        config: r.cfg.clone(),
        artifacts,
        warnings: r.warnings.clone(),
    };
    r.write_json(&format!("manifest-{}.json", cmd.name()), &manifest)?;
    Ok(())
}

/// SHA-256 of a file, or of a directory's sorted relative paths and file digests.
pub fn hash_path(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, &mut files)?;
        files.sort();
        let mut h = Sha256::new();
        for f in files {
            h.update(f.strip_prefix(path).unwrap_or(&f).to_string_lossy().as_bytes());
            h.update(hash_path(&f)?.as_bytes());
        }
        Ok(hex::encode(h.finalize()))
    } else {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

fn load_data(r: &mut Run, root: &Path) -> Result<LabeledImageSet> {
    let rep = load_dataset(root)?;
    r.warnings.extend(rep.warnings);
    Ok(rep.set)
}

/// Generators saved in `dir`, in file-name order.
fn load_generators(dir: &Path) -> Result<Vec<GeneratorHandle>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "gen"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyDataset(format!("no .gen files in {}", dir.display())));
    }
    files.iter().map(|p| GeneratorHandle::load(p)).collect()
}

fn save_generators(r: &mut Run, gens: &[GeneratorHandle], dir: &str) -> Result<()> {
    for g in gens {
        let p = r.path(format!("{dir}/{}.gen", g.generator_id))?;
        g.save(&p, &r.hash)?;
        r.record(p);
    }
    Ok(())
}

fn synth_corpus(r: &mut Run, n: Option<usize>) -> Result<()> {
    let w = &r.cfg().world;
    let n = n.unwrap_or(w.n_real);
    let set = synth_styled_corpus(w.seed, n, w.resolution, &w.style, "real", Label::Real, None)?;
    let p = r.path("corpus")?;
    save_dataset(&set, &p)?;
    r.record(p);
    Ok(())
}

fn train_generators(r: &mut Run, with_pool: bool) -> Result<()> {
    let cfg = r.cfg().clone();
    let world = crate::world::build_world(&cfg.world)?;
    save_generators(r, &world.generators, "generators")?;
    let train = r.path("data/train")?;
    save_dataset(&world.train, &train)?;
    r.record(train);
    let test = r.path("data/test")?;
    save_dataset(&world.full_test_set(), &test)?;
    r.record(test);
    if with_pool {
        let reals = LabeledImageSet::new(world.train.with_label(Label::Real).cloned().collect());
        let pool = train_pool(&cfg.simulator, &reals, pool_seed(cfg.seed)).map_err(|e| e.in_stage("codec-family"))?;
        save_generators(r, &pool, "pool")?;
    }
    Ok(())
}

fn fit_imprint(r: &mut Run, generator: &Path, data: &Path, n: Option<usize>) -> Result<()> {
    let cfg = r.cfg().clone();
    let gen = GeneratorHandle::load(generator)?;
    let set = load_data(r, data)?;
    let reals: Vec<&Image> = set.with_label(Label::Real).collect();
    let n = n.unwrap_or(cfg.simulator.imprint_images).min(reals.len());
    if n == 0 {
        return Err(Error::EmptyDataset(format!("no real images under {}", data.display())));
    }
    let seeds = RunSeeds::derive(cfg.seed);
    let mut pick = rng::stream(seeds.imprints, "imprint-subset");
    let subset = LabeledImageSet::new(
        rand::seq::index::sample(&mut pick, reals.len(), n)
            .into_iter()
            .map(|i| reals[i].clone())
            .collect(),
    );
    let mut gr = rng::stream(seeds.imprints, "imprint");
    let batch = collect_imprints(&gen, &subset, &cfg.simulator.reconstruction, &mut gr)?;
    let field = fit_laplace(&batch)?;
    let bp = r.path(format!("imprints/{}.batch", gen.generator_id))?;
    batch.save(&bp, &r.hash)?;
    r.record(bp);
    let fp = r.path(format!("imprints/{}.field", gen.generator_id))?;
    field.save(&fp, &r.hash)?;
    r.record(fp);
    Ok(())
}

fn fuse(r: &mut Run, paths: &[PathBuf], weights: Option<Vec<f64>>) -> Result<()> {
    let batches = paths.iter().map(|p| ImprintBatch::load(p)).collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = batches.iter().map(|b| b.generator_id.clone()).collect();
    let spec = match weights.or_else(|| r.cfg().simulator.fusion_weights.clone()) {
        Some(w) => FusionSpec {
            generator_ids: ids,
            weights: w,
        },
        None => FusionSpec::uniform(ids),
    };
    let fused = fuse_batches(&batches, &spec)?;
    let field = build_fused_field(&batches, &spec)?;
    let bp = r.path("fused.batch")?;
    fused.save(&bp, &r.hash)?;
    r.record(bp);
    let fp = r.path("fused.field")?;
    field.save(&fp, &r.hash)?;
    r.record(fp);
    Ok(())
}

fn expand(r: &mut Run, data: &Path, field: &Path, codec: &Path) -> Result<()> {
    let cfg = r.cfg().clone();
    let set = load_data(r, data)?;
    let field = LaplaceField::load(field)?;
    let codec = GeneratorHandle::load(codec)?;
    let mut policy = cfg.train.expansion.clone();
    policy.seed = RunSeeds::derive(cfg.seed).expansion;
    let (expanded, manifest) = expand_dataset(&set, &codec, &field, &policy)?;
    let dp = r.path("expanded")?;
    save_dataset(&expanded, &dp)?;
    r.record(dp);
    let mp = r.path("expansion_manifest.json")?;
    manifest.save(&mp)?;
    r.record(mp);
    Ok(())
}

fn fit_cmd(r: &mut Run, data: &Path, pool: Option<&Path>, resume: bool) -> Result<()> {
    let cfg = r.cfg().fit();
    let set = load_data(r, data)?;
    let ckpt = Checkpointing {
        state_path: Some(r.path("train_state.ckpt")?),
        resume,
    };
    let out = match pool {
        Some(dir) => fit_with_pool(&cfg, &set, &load_generators(dir)?, &ckpt)?,
        None => fit(&cfg, &set, &ckpt)?,
    };
    let dp = r.path("detector.ckpt")?;
    out.detector.save(&dp, &r.hash)?;
    r.record(dp);
    if let Some(f) = &out.field {
        let fp = r.path("fused.field")?;
        f.save(fp.as_path(), &r.hash)?;
        r.record(fp);
    }
    if !out.manifest.is_empty() {
        let mp = r.path("expansion_manifest.json")?;
        out.manifest.save(&mp)?;
        r.record(mp);
    }
    let rp = r.path("training_report.json")?;
    out.report.save(&rp)?;
    r.record(rp);
    r.warnings.extend(out.report.warnings.iter().cloned());
    if let Some(last) = out.report.epochs.last() {
        println!("epoch {} total loss {:.4}", last.epoch, last.total);
    }
    Ok(())
}

fn eval_cmd(r: &mut Run, detector: &Path, data: &Path) -> Result<()> {
    let (det, det_hash) = Detector::load_with_hash(detector)?;
    let set = load_data(r, data)?;
    let seed = r.cfg.as_ref().map(|c| c.seed);
    let m = evaluate(&det, &set, true)?.with_provenance(det_hash, seed);
    r.write_json("metrics.json", &m)?;
    println!("balanced accuracy {:.2}", m.headline());
    Ok(())
}

fn robustness_cmd(r: &mut Run, detector: &Path, data: &Path) -> Result<()> {
    let det = Detector::load(detector)?;
    let set = load_data(r, data)?;
    let opts = r.cfg.as_ref().map(|c| c.robustness).unwrap_or_default();
    let curves = robustness_suite(&det, &set, &opts)?;
    r.write_json("robustness.json", &curves)?;
    let p = r.path("robustness.svg")?;
    emit_robustness_plot(&curves, &p)?;
    r.record(p);
    Ok(())
}

fn ablate(r: &mut Run, grid: Option<&str>, generators: &Path, pool: Option<&Path>) -> Result<()> {
    let cfg = r.cfg().clone();
    let name = grid.unwrap_or(&cfg.ablation.grid);
    let grids = standard_grids();
    let deltas = grids.get(name).ok_or_else(|| {
        let known: Vec<&str> = grids.keys().copied().collect();
        Error::Config(format!("unknown ablation grid '{name}' (known: {})", known.join(", ")))
    })?;
    let world = build_world_with(&cfg.world, load_generators(generators)?)?;
    let pool = match pool {
        Some(dir) => load_generators(dir)?,
        None => {
            let reals = LabeledImageSet::new(world.train.with_label(Label::Real).cloned().collect());
            let pool = train_pool(&cfg.simulator, &reals, pool_seed(cfg.seed)).map_err(|e| e.in_stage("codec-family"))?;
            save_generators(r, &pool, "pool")?;
            pool
        }
    };
    let table = ablation_run(&cfg.fit(), deltas, &cfg.ablation.seeds, &world, &pool, None)?;
    let cp = r.path(format!("ablation-{name}.csv"))?;
    table.write_csv(&cp)?;
    r.record(cp);
    r.write_json(&format!("ablation-{name}.json"), &table)?;
    print!("{}", table.to_csv());
    Ok(())
}

fn analyze(r: &mut Run, paths: &[PathBuf], fused: Option<&Path>) -> Result<()> {
    let a = r.cfg().analysis.clone();
    let batches = paths.iter().map(|p| ImprintBatch::load(p)).collect::<Result<Vec<_>>>()?;
    let fused = fused.map(ImprintBatch::load).transpose()?;
    let tails = batches
        .iter()
        .chain(fused.as_ref())
        .map(|b| tail_fit_compare(b, a.holdout_fraction))
        .collect::<Result<Vec<_>>>()?;
    let tp = r.path("tails.jsonl")?;
    write_json_lines(&tp, &tails)?;
    r.record(tp);
    let proj = pca_project(&batches, fused.as_ref(), a.standardize)?;
    r.write_json("pca.json", &proj)?;
    let sp = r.path("pca.svg")?;
    emit_scatter(&proj, &sp)?;
    r.record(sp);
    Ok(())
}

fn predict(r: &mut Run, detector: &Path, inputs: &[PathBuf]) -> Result<()> {
    let det = Detector::load(detector)?;
    let mut images = Vec::new();
    for p in inputs {
        if p.is_dir() && (p.join("real").is_dir() || p.join("fake").is_dir()) {
            images.extend(load_data(r, p)?.items);
        } else if p.is_dir() {
            for f in list_pngs(p)? {
                images.push(load_png(&f)?);
            }
        } else {
            images.push(load_png(p)?);
        }
    }
    if images.is_empty() {
        return Err(Error::EmptyDataset("no input images".into()));
    }
    let refs: Vec<&Image> = images.iter().collect();
    let probs = det.predict_proba(&refs)?;
    let mut csv = String::from("id,probability_fake,decision\n");
    for (img, p) in images.iter().zip(&probs) {
        csv.push_str(&format!("{},{p:.6},{}\n", crate::eval::csv_field(&img.id), decide(*p).as_str()));
    }
    let cp = r.path("predictions.csv")?;
    std::fs::write(&cp, &csv).map_err(|e| Error::io(&cp, e))?;
    r.record(cp);
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(csv.as_bytes());
    Ok(())
}
