//! `dofa`: synthesize data, warm-start the generator, pretrain, probe,
//! export embeddings and run the invariant checks.
//!
//! Exit status is 0 on success, 1 on a runtime failure and 2 on a usage
//! error. Progress goes to stderr; results go to files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dofa_core::config::{RunConfig, EFFECTIVE_CONFIG, PRESETS};
use dofa_core::data::{synth_dataset, write_manifest, write_raster, Dataset, ManifestEntry};
use dofa_core::losses::TeacherModel;
use dofa_core::train::{
    export_embeddings, init_generator, linear_probe, pretrain, Checkpoint, InitGeneratorOptions, PretrainOptions,
    ProbeResult, TeacherSource,
};
use dofa_core::verify::{format_table, run_checks, VerifyLevel, VerifyOptions};
use dofa_core::DofaModel;

pub const MANIFEST: &str = "manifest.tsv";
pub const PROBE_REPORT: &str = "probe.json";

#[derive(Parser)]
#[command(name = "dofa", version, about = "Wavelength-conditioned patch embedding: pretraining and probing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML run configuration layered over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "desk", value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: String,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let cfg = match &self.config {
            Some(path) => RunConfig::load(path, &self.preset),
            None => RunConfig::preset(&self.preset),
        };
        cfg.map_err(|e| Usage(e.to_string()).into())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a labeled synthetic dataset: one raster per sample plus a manifest.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        per_modality: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        /// Image height and width; defaults to the model's image size.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a fresh embedding generator to a teacher's RGB patch embedding.
    InitGenerator {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, conflicts_with = "random_teacher")]
        teacher: Option<PathBuf>,
        /// Use a randomly initialized teacher built from --teacher-seed.
        #[arg(long)]
        random_teacher: bool,
        #[arg(long)]
        teacher_seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = InitGeneratorOptions::default().steps)]
        steps: usize,
        #[arg(long, default_value_t = InitGeneratorOptions::default().lr)]
        lr: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Masked-autoencoder pretraining with teacher distillation.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset manifest.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        init_gen: Option<PathBuf>,
        /// Teacher checkpoint; a random teacher seeded from the run seed otherwise.
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Linear probe on frozen features, against a random-init baseline.
    Probe {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Comma-separated learning rates to sweep.
        #[arg(long, value_delimiter = ',')]
        lrs: Option<Vec<f64>>,
        #[arg(long)]
        seed: Option<u64>,
        /// Skip the random-init baseline.
        #[arg(long)]
        no_baseline: bool,
    },
    /// Write mean-pooled encoder features of a dataset as an embedding raster.
    Export {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the invariant suite and print a per-check table.
    Verify {
        #[arg(long, value_enum, default_value = "fast")]
        level: Level,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Test hook: scales analytic gradients before comparison.
        #[arg(long, hide = true, default_value_t = 1.0)]
        corrupt_grad: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Fast,
    Full,
}

/// Failures that are the caller's fault rather than the run's.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

fn require(flag: Option<PathBuf>, from_config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    match flag.or_else(|| from_config.clone()) {
        Some(p) => Ok(p),
        None => Err(Usage(format!("--{name} is required (or set paths.{} in the config)", name.replace('-', "_"))).into()),
    }
}

fn threads() -> Result<usize> {
    match std::env::var("DOFA_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Usage(format!("DOFA_THREADS must be a positive integer, got {v:?}")).into()),
        },
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_synth(
    cfg: RunConfig,
    out: Option<PathBuf>,
    per_modality: Option<usize>,
    classes: Option<usize>,
    size: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = cfg;
    let out = require(out, &cfg.paths.out, "out")?;
    cfg.data.per_modality = per_modality.unwrap_or(cfg.data.per_modality);
    cfg.data.classes = classes.unwrap_or(cfg.data.classes);
    cfg.data.seed = seed.unwrap_or(cfg.data.seed);
    if let Some(s) = size {
        cfg.model.image_size = s;
    }
    if cfg.data.classes == 0 || cfg.model.image_size == 0 {
        return Err(Usage("--classes and --size must be positive".into()).into());
    }
    cfg.paths.out = Some(out.clone());
    let names: Vec<&str> = cfg.data.modalities.iter().map(String::as_str).collect();
    let data = synth_dataset(&names, cfg.data.per_modality, cfg.data.classes, cfg.model.image_size, cfg.data.seed, &cfg.data.synth)?;

    create_dir(&out)?;
    let workers = threads()?.min(data.len().max(1));
    let chunk = data.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = data
            .samples
            .chunks(chunk)
            .map(|part| {
                let out = &out;
                s.spawn(move || part.iter().try_for_each(|smp| write_raster(out.join(&smp.id), &smp.image)))
            })
            .collect();
        handles.into_iter().try_for_each(|h| h.join().expect("writer thread"))
    })?;
    let entries: Vec<ManifestEntry> = data
        .samples
        .iter()
        .map(|s| ManifestEntry { path: s.id.clone(), modality: s.image.modality.clone(), label: s.image.label })
        .collect();
    write_manifest(out.join(MANIFEST), &entries)?;
    cfg.echo(&out)?;
    for name in &names {
        println!("{name}\t{}", entries.iter().filter(|e| e.modality == *name).count());
    }
    println!("total\t{}", entries.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_init_generator(
    cfg: RunConfig,
    teacher: Option<PathBuf>,
    random_teacher: bool,
    teacher_seed: Option<u64>,
    out: Option<PathBuf>,
    steps: usize,
    lr: f64,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = cfg;
    let out = require(out, &cfg.paths.init_generator, "out")?;
    let seed = seed.unwrap_or(cfg.optim.seed);
    let teacher_model = match (teacher.or(cfg.paths.teacher.clone()), random_teacher) {
        (Some(path), false) => {
            cfg.paths.teacher = Some(path.clone());
            Checkpoint::load(&path).and_then(|c| c.to_teacher()).with_context(|| format!("teacher {}", path.display()))?
        }
        (_, true) => {
            cfg.paths.teacher = None;
            TeacherModel::new(&cfg.model, teacher_seed.unwrap_or(seed.wrapping_add(1)))?
        }
        (None, false) => return Err(Usage("one of --teacher or --random-teacher is required".into()).into()),
    };
    cfg.paths.init_generator = Some(out.clone());
    let opts = InitGeneratorOptions { steps, lr, seed, ..InitGeneratorOptions::default() };
    eprintln!("fitting generator: {steps} steps at lr {lr}");
    let (ck, report) = init_generator(&cfg.model, &teacher_model, &opts)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    ck.save(&out)?;
    let echo = PathBuf::from(format!("{}.{EFFECTIVE_CONFIG}", out.display()));
    std::fs::write(&echo, cfg.to_toml()).with_context(|| format!("cannot write {}", echo.display()))?;
    println!("initial loss\t{:.9e}", report.initial());
    println!("final loss\t{:.9e}", report.last());
    println!("ratio\t{:.6e}", report.ratio());
    println!("steps\t{}", report.steps_run);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_pretrain(
    cfg: RunConfig,
    data: Option<PathBuf>,
    init_gen: Option<PathBuf>,
    teacher: Option<PathBuf>,
    out: Option<PathBuf>,
    resume: Option<PathBuf>,
    overrides: (Option<usize>, Option<usize>, Option<f64>, Option<u64>),
    quiet: bool,
) -> Result<()> {
    let mut cfg = cfg;
    let data_path = require(data, &cfg.paths.data, "data")?;
    let out = require(out, &cfg.paths.out, "out")?;
    let (epochs, batch_size, lr, seed) = overrides;
    if let Some(e) = epochs {
        cfg.optim.total_epochs = e;
    }
    if let Some(b) = batch_size {
        cfg.optim.batch_size = b;
    }
    if let Some(l) = lr {
        cfg.optim.base_lr = l;
    }
    if let Some(s) = seed {
        cfg.optim.seed = s;
    }
    cfg.validate().map_err(|e| Usage(e.to_string()))?;
    cfg.paths.data = Some(data_path.clone());
    cfg.paths.out = Some(out.clone());
    cfg.paths.init_generator = init_gen.or(cfg.paths.init_generator.clone());
    cfg.paths.teacher = teacher.or(cfg.paths.teacher.clone());

    let dataset = Dataset::load(&data_path).with_context(|| format!("loading {}", data_path.display()))?;
    eprintln!("{} samples from {}", dataset.len(), data_path.display());
    create_dir(&out)?;
    cfg.echo(&out)?;
    let mut opts = PretrainOptions::new(cfg.model.clone(), cfg.optim.clone(), &out);
    if let Some(t) = &cfg.paths.teacher {
        opts.teacher = TeacherSource::Checkpoint(t.clone());
    }
    opts.init_generator = cfg.paths.init_generator.clone();
    opts.resume = resume;
    opts.verbose = !quiet;
    let ck = pretrain(&dataset, &opts)?;
    if let (Some(first), Some(last)) = (ck.history.first(), ck.history.last()) {
        println!("epochs\t{}", ck.progress.epoch);
        println!("steps\t{}", ck.progress.step);
        println!("recon\t{:.6}\t{:.6}", first.recon, last.recon);
        println!("distill\t{:.6}\t{:.6}", first.distill, last.distill);
    }
    Ok(())
}

#[derive(Serialize)]
struct ProbeReport {
    checkpoint: PathBuf,
    pretrained: ProbeResult,
    random_init: Option<ProbeResult>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_probe(
    cfg: RunConfig,
    ckpt: PathBuf,
    train: Option<PathBuf>,
    val: Option<PathBuf>,
    out: Option<PathBuf>,
    epochs: Option<usize>,
    lrs: Option<Vec<f64>>,
    seed: Option<u64>,
    no_baseline: bool,
) -> Result<()> {
    let mut cfg = cfg;
    let train = require(train, &cfg.paths.train, "train")?;
    let val = require(val, &cfg.paths.val, "val")?;
    let out = require(out, &cfg.paths.out, "out")?;
    cfg.probe.epochs = epochs.unwrap_or(cfg.probe.epochs);
    cfg.probe.lrs = lrs.unwrap_or(cfg.probe.lrs);
    cfg.probe.seed = seed.unwrap_or(cfg.probe.seed);
    if cfg.probe.lrs.is_empty() || cfg.probe.epochs == 0 {
        return Err(Usage("--epochs and --lrs must be non-empty".into()).into());
    }
    cfg.paths.train = Some(train.clone());
    cfg.paths.val = Some(val.clone());
    cfg.paths.out = Some(out.clone());

    let ck = Checkpoint::load(&ckpt).with_context(|| format!("checkpoint {}", ckpt.display()))?;
    let model = ck.to_model()?;
    cfg.model = ck.model.clone();
    let train_set = Dataset::load(&train).with_context(|| format!("loading {}", train.display()))?;
    let val_set = Dataset::load(&val).with_context(|| format!("loading {}", val.display()))?;
    create_dir(&out)?;
    cfg.echo(&out)?;

    eprintln!("probing {} on {} train / {} val samples", ckpt.display(), train_set.len(), val_set.len());
    let pretrained = linear_probe(&model, &train_set, &val_set, &cfg.probe)?;
    let random_init = if no_baseline {
        None
    } else {
        eprintln!("probing random-init baseline (seed {})", ck.progress.seed);
        let baseline = DofaModel::new(&ck.model, ck.progress.seed)?;
        Some(linear_probe(&baseline, &train_set, &val_set, &cfg.probe)?)
    };
    println!("top1\t{:.4}\tlr {}", pretrained.val_accuracy, pretrained.lr);
    if let Some(r) = &random_init {
        println!("random_init_top1\t{:.4}\tlr {}", r.val_accuracy, r.lr);
    }
    write_json(&out.join(PROBE_REPORT), &ProbeReport { checkpoint: ckpt, pretrained, random_init })
}

fn cmd_export(ckpt: PathBuf, data: PathBuf, out: PathBuf) -> Result<()> {
    let model = Checkpoint::load(&ckpt).and_then(|c| c.to_model()).with_context(|| format!("checkpoint {}", ckpt.display()))?;
    let dataset = Dataset::load(&data).with_context(|| format!("loading {}", data.display()))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let rows = export_embeddings(&model, &dataset, &out)?;
    println!("rows\t{}", rows.len());
    println!("dim\t{}", rows.first().map_or(0, |r| r.0.len()));
    Ok(())
}

fn cmd_verify(level: Level, seed: u64, corrupt_grad: f64) -> Result<bool> {
    let level = match level {
        Level::Fast => VerifyLevel::Fast,
        Level::Full => VerifyLevel::Full,
    };
    let outcomes = run_checks(&VerifyOptions { level, seed, analytic_scale: corrupt_grad });
    print!("{}", format_table(&outcomes));
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    if failed.is_empty() {
        println!("all {} checks passed", outcomes.len());
        Ok(true)
    } else {
        eprintln!("failed checks: {}", failed.join(", "));
        Ok(false)
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth { cfg, out, per_modality, classes, size, seed } => {
            cmd_synth(cfg.load()?, out, per_modality, classes, size, seed)?;
        }
        Command::InitGenerator { cfg, teacher, random_teacher, teacher_seed, out, steps, lr, seed } => {
            cmd_init_generator(cfg.load()?, teacher, random_teacher, teacher_seed, out, steps, lr, seed)?;
        }
        Command::Pretrain { cfg, data, init_gen, teacher, out, resume, epochs, batch_size, lr, seed, quiet } => {
            cmd_pretrain(cfg.load()?, data, init_gen, teacher, out, resume, (epochs, batch_size, lr, seed), quiet)?;
        }
        Command::Probe { cfg, ckpt, train, val, out, epochs, lrs, seed, no_baseline } => {
            cmd_probe(cfg.load()?, ckpt, train, val, out, epochs, lrs, seed, no_baseline)?;
        }
        Command::Export { ckpt, data, out } => cmd_export(ckpt, data, out)?,
        Command::Verify { level, seed, corrupt_grad } => return cmd_verify(level, seed, corrupt_grad),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
