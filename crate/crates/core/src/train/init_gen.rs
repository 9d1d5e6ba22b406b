use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{store_tensors, Checkpoint, CheckpointKind, Progress};
use super::optim::{AdamW, OptimConfig};
use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::hypernet::{DynamicKernel, GeneratorRole, WavelengthList, WeightGenerator};
use crate::losses::{generator_init_term, TeacherModel};
use crate::model::ModelConfig;
use crate::nn::ParamStore;

#[derive(Clone, Debug, PartialEq)]
pub struct InitGeneratorOptions {
    pub steps: usize,
    /// Constant Adam learning rate.
    pub lr: f64,
    pub seed: u64,
    /// Stop as soon as the loss is at or below this value.
    pub tolerance: f64,
}

impl Default for InitGeneratorOptions {
    fn default() -> Self {
        Self { steps: 200, lr: 1e-3, seed: 0, tolerance: 1e-12 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitGeneratorReport {
    /// Loss before each update, then the final loss.
    pub losses: Vec<f64>,
    pub steps_run: usize,
}

impl InitGeneratorReport {
    pub fn initial(&self) -> f64 {
        self.losses[0]
    }

    pub fn last(&self) -> f64 {
        *self.losses.last().expect("at least one loss")
    }

    pub fn ratio(&self) -> f64 {
        if self.initial() == 0.0 {
            0.0
        } else {
            self.last() / self.initial()
        }
    }
}

/// Fits `generator` so that its output for `lambdas` matches `target`.
pub fn train_generator(
    store: &mut ParamStore<f32>,
    generator: &WeightGenerator,
    target: &DynamicKernel<f32>,
    lambdas: &WavelengthList,
    opts: &InitGeneratorOptions,
) -> Result<InitGeneratorReport> {
    let optim = OptimConfig { weight_decay: 0.0, ..OptimConfig::default() };
    let mut adam = AdamW::new(store);
    let mut losses = Vec::with_capacity(opts.steps + 1);
    let mut steps_run = 0;
    loop {
        let mut g = Graph::new();
        let p = store.bind(&mut g, true);
        let loss = generator_init_term(&mut g, &p, generator, target, lambdas)?;
        let value = g.scalar(loss) as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("generator warm-start loss at step {steps_run}")));
        }
        losses.push(value);
        if value <= opts.tolerance || steps_run == opts.steps {
            break;
        }
        let grads = g.backward(loss)?;
        store.zero_grad();
        store.accumulate_grads(&p, &grads);
        adam.step(store, opts.lr, &optim)?;
        steps_run += 1;
    }
    Ok(InitGeneratorReport { losses, steps_run })
}

/// Trains a fresh embedding generator to reproduce the teacher's patch
/// embedding for the RGB wavelengths. The returned checkpoint holds only the
/// generator's parameters, named as in the full model.
pub fn init_generator(
    cfg: &ModelConfig,
    teacher: &TeacherModel<f32>,
    opts: &InitGeneratorOptions,
) -> Result<(Checkpoint, InitGeneratorReport)> {
    cfg.validate()?;
    if teacher.net.dim != cfg.embed_dim || teacher.net.patch_size != cfg.patch_size {
        return Err(Error::Shape(format!(
            "teacher embedding [{}, 3, {p}, {p}] cannot initialize a generator for [{}, C, {q}, {q}]",
            teacher.net.dim,
            cfg.embed_dim,
            p = teacher.net.patch_size,
            q = cfg.patch_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut store = ParamStore::new();
    let generator = WeightGenerator::new(&mut store, "enc_generator", cfg.generator(cfg.embed_dim, GeneratorRole::Embedding), &mut rng)?;
    let report = train_generator(&mut store, &generator, &teacher.kernel()?, &WavelengthList::rgb(), opts)?;
    let ck = Checkpoint {
        kind: CheckpointKind::Generator,
        model: cfg.clone(),
        optim: None,
        progress: Progress { step: report.steps_run as u64, epoch: 0, seed: opts.seed },
        history: Vec::new(),
        params: store_tensors(&store),
        optimizer: Vec::new(),
    };
    Ok((ck, report))
}
