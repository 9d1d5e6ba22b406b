use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::checkpoint::{optimizer_tensors, restore_optimizer, store_tensors, Checkpoint, CheckpointKind, EpochRecord, Progress};
use super::optim::{lr_schedule, AdamW, OptimConfig};
use super::{derived_rng, Stream};
use crate::autograd::Graph;
use crate::data::{batch_schedule, Dataset};
use crate::error::{Error, Result};
use crate::hypernet::WavelengthList;
use crate::losses::{combine_terms, draw_sample, sample_terms, SampleInputs, TeacherModel};
use crate::model::{DofaModel, ModelConfig};
use crate::tensor::Tensor;

pub const METRICS_FILE: &str = "metrics.tsv";
pub const TEACHER_FILE: &str = "teacher.dofc";
pub const LAST_CHECKPOINT: &str = "last.dofc";

#[derive(Clone, Debug)]
pub enum TeacherSource {
    Checkpoint(PathBuf),
    /// Build a frozen randomly initialized teacher from this seed.
    Random { seed: u64 },
}

#[derive(Clone, Debug)]
pub struct PretrainOptions {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub out_dir: PathBuf,
    pub teacher: TeacherSource,
    /// Generator checkpoint from the warm-start phase.
    pub init_generator: Option<PathBuf>,
    /// Continue from this checkpoint; its configs take precedence.
    pub resume: Option<PathBuf>,
    /// Return after this many completed epochs (counted from the start of training).
    pub stop_after_epoch: Option<usize>,
    /// Per-epoch progress on stderr.
    pub verbose: bool,
}

impl PretrainOptions {
    pub fn new(model: ModelConfig, optim: OptimConfig, out_dir: impl Into<PathBuf>) -> Self {
        let seed = optim.seed;
        Self {
            model,
            optim,
            out_dir: out_dir.into(),
            teacher: TeacherSource::Random { seed: seed.wrapping_add(1) },
            init_generator: None,
            resume: None,
            stop_after_epoch: None,
            verbose: false,
        }
    }
}

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.dofc")
}

fn load_teacher(opts: &PretrainOptions, cfg: &ModelConfig) -> Result<TeacherModel<f32>> {
    let saved = opts.out_dir.join(TEACHER_FILE);
    let teacher = if opts.resume.is_some() && saved.exists() {
        Checkpoint::load(&saved)?.to_teacher()?
    } else {
        match &opts.teacher {
            TeacherSource::Checkpoint(path) => Checkpoint::load(path)?.to_teacher()?,
            TeacherSource::Random { seed } => TeacherModel::new(cfg, *seed)?,
        }
    };
    let t = &teacher.net;
    if t.dim != cfg.teacher_dim || t.patch_size != cfg.patch_size || t.image_size != cfg.image_size {
        return Err(Error::Shape(format!(
            "teacher (dim {}, patch {}, image {}) does not fit the model (teacher_dim {}, patch {}, image {})",
            t.dim, t.patch_size, t.image_size, cfg.teacher_dim, cfg.patch_size, cfg.image_size
        )));
    }
    Ok(teacher)
}

/// Keeps the first `lines` records of a metrics file, so a resumed run
/// appends exactly where the checkpoint left off.
fn truncate_metrics(path: &Path, lines: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let kept: Vec<String> = BufReader::new(file).lines().take(lines).collect::<std::io::Result<_>>().map_err(|e| Error::io(path, e))?;
    let mut text = kept.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct BatchLoss {
    recon: f64,
    cos: f64,
    total: f64,
}

fn train_step(
    model: &mut DofaModel<f32>,
    teacher: &TeacherModel<f32>,
    data: &Dataset,
    indices: &[usize],
    step: u64,
    seed: u64,
    recon_on_all_patches: bool,
) -> Result<BatchLoss> {
    let lambdas: &WavelengthList = &data.samples[indices[0]].image.wavelengths;
    if let Some(&i) = indices.iter().find(|&&i| data.samples[i].image.wavelengths != *lambdas) {
        return Err(Error::MixedBatch(format!("{} has different wavelengths from the rest of its batch", data.samples[i].id)));
    }
    let mut rng = derived_rng(seed, Stream::Step, step);
    let mut drawn = Vec::with_capacity(indices.len());
    for &i in indices {
        let img = &data.samples[i].image;
        let (plan, proxy) = draw_sample(img, model.config(), &mut rng)?;
        drawn.push((plan, proxy.data));
    }

    let mut g = Graph::new();
    let sp = model.store.bind(&mut g, true);
    let tp = teacher.store.bind(&mut g, false);
    let weights = model.net.generate(&mut g, &sp, lambdas)?;
    let rgb = model.net.enc_generator.forward(&mut g, &sp, &WavelengthList::rgb())?;
    let mut terms = Vec::with_capacity(indices.len());
    for (&i, (plan, proxy)) in indices.iter().zip(&drawn) {
        let image: &Tensor<f32> = &data.samples[i].image.data;
        let input = SampleInputs { image, plan, proxy };
        terms.push(sample_terms(&mut g, &model.net, &sp, &teacher.net, &tp, &weights, &rgb, &input, recon_on_all_patches)?);
    }
    let (total, recon, cos) = combine_terms(&mut g, &terms)?;
    let out = BatchLoss { recon: g.scalar(recon) as f64, cos: g.scalar(cos) as f64, total: g.scalar(total) as f64 };
    if !out.total.is_finite() {
        let ids: Vec<&str> = indices.iter().map(|&i| data.samples[i].id.as_str()).collect();
        return Err(Error::NonFinite(format!("loss {} at step {step}; batch: {}", out.total, ids.join(", "))));
    }
    let grads = g.backward(total)?;
    model.store.zero_grad();
    model.store.accumulate_grads(&sp, &grads);
    Ok(out)
}

/// Masked-autoencoder pretraining with teacher distillation.
///
/// Writes one `step<TAB>lr<TAB>recon<TAB>distill<TAB>total` line per step to
/// `metrics.tsv` (distill is the cosine similarity, total = recon - distill),
/// a checkpoint after every epoch, and the teacher used. Returns the last
/// checkpoint written.
pub fn pretrain(data: &Dataset, opts: &PretrainOptions) -> Result<Checkpoint> {
    if data.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;

    let resumed = opts.resume.as_ref().map(Checkpoint::load).transpose()?;
    let (mut model, optim, mut progress, mut history, mut adam) = match &resumed {
        Some(ck) => {
            let model = ck.to_model()?;
            let optim = ck.optim.clone().ok_or_else(|| Error::Malformed("checkpoint has no optimizer config".into()))?;
            let adam = restore_optimizer(&model.store, &ck.optimizer, ck.progress.step)?;
            (model, optim, ck.progress.clone(), ck.history.clone(), adam)
        }
        None => {
            opts.model.validate()?;
            let mut model = DofaModel::new(&opts.model, opts.optim.seed)?;
            if let Some(path) = &opts.init_generator {
                Checkpoint::load(path)?.apply_generator(&mut model)?;
            }
            let adam = AdamW::new(&model.store);
            let progress = Progress { step: 0, epoch: 0, seed: opts.optim.seed };
            (model, opts.optim.clone(), progress, Vec::new(), adam)
        }
    };
    optim.validate()?;
    let cfg = model.config().clone();
    let teacher = load_teacher(opts, &cfg)?;
    Checkpoint::from_teacher(&cfg, &teacher).save(opts.out_dir.join(TEACHER_FILE))?;

    let items: Vec<(&str, usize)> = data.images().map(|im| (im.modality.as_str(), im.channels())).collect();
    let steps_per_epoch = batch_schedule(&items, optim.batch_size, 0)?.len();
    let metrics_path = opts.out_dir.join(METRICS_FILE);
    if resumed.is_some() {
        truncate_metrics(&metrics_path, progress.step as usize)?;
    } else if metrics_path.exists() {
        fs::remove_file(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    }
    let file = OpenOptions::new().create(true).append(true).open(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);

    let mut last = None;
    for epoch in progress.epoch..optim.total_epochs {
        let started = Instant::now();
        let batches = batch_schedule(&items, optim.batch_size, derived_rng_seed(progress.seed, epoch))?;
        let (mut recon, mut cos, mut total) = (0.0, 0.0, 0.0);
        for batch in &batches {
            let step = progress.step;
            let lr = lr_schedule(step as usize, steps_per_epoch, &optim);
            let loss = train_step(&mut model, &teacher, data, &batch.indices, step, progress.seed, optim.recon_on_all_patches)?;
            adam.step(&mut model.store, lr, &optim)?;
            writeln!(metrics, "{step}\t{lr}\t{}\t{}\t{}", loss.recon, loss.cos, loss.total).map_err(|e| Error::io(&metrics_path, e))?;
            recon += loss.recon;
            cos += loss.cos;
            total += loss.total;
            progress.step += 1;
        }
        metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
        let n = batches.len() as f64;
        let record = EpochRecord { epoch: epoch + 1, recon: recon / n, distill: cos / n, total: total / n };
        if opts.verbose {
            eprintln!(
                "epoch {}/{}  recon {:.5}  cos {:.5}  total {:.5}  ({:.1}s)",
                record.epoch,
                optim.total_epochs,
                record.recon,
                record.distill,
                record.total,
                started.elapsed().as_secs_f64()
            );
        }
        history.push(record);
        progress.epoch = epoch + 1;

        let ck = Checkpoint {
            kind: CheckpointKind::Model,
            model: cfg.clone(),
            optim: Some(optim.clone()),
            progress: progress.clone(),
            history: history.clone(),
            params: store_tensors(&model.store),
            optimizer: optimizer_tensors(&model.store, &adam),
        };
        ck.save(opts.out_dir.join(epoch_checkpoint_name(epoch + 1)))?;
        ck.save(opts.out_dir.join(LAST_CHECKPOINT))?;
        last = Some(ck);
        if opts.stop_after_epoch == Some(epoch + 1) {
            break;
        }
    }
    match last {
        Some(ck) => Ok(ck),
        None => resumed.ok_or_else(|| Error::Config("no epochs to run".into())),
    }
}

fn derived_rng_seed(seed: u64, epoch: usize) -> u64 {
    use rand::RngCore;
    derived_rng(seed, Stream::Shuffle, epoch as u64).next_u64()
}
