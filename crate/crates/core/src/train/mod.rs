//! Optimization, checkpointing, pretraining, generator warm start, linear
//! probing and embedding export.

mod checkpoint;
mod export;
mod init_gen;
mod optim;
mod pretrain;
pub mod probe;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{
    load_tensors, optimizer_tensors, restore_optimizer, store_tensors, Checkpoint, CheckpointKind, EpochRecord,
    NamedTensor, Progress, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use export::{export_embeddings, read_embeddings, EMBEDDING_MODALITY};
pub use init_gen::{init_generator, train_generator, InitGeneratorOptions, InitGeneratorReport};
pub use optim::{lr_schedule, AdamW, OptimConfig};
pub use pretrain::{
    epoch_checkpoint_name, pretrain, PretrainOptions, TeacherSource, LAST_CHECKPOINT, METRICS_FILE, TEACHER_FILE,
};
pub use probe::{linear_probe, probe_on_features, standardize, ProbeEpoch, ProbeOptions, ProbeResult, SweepPoint};

/// Independent random streams hanging off one seed.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Shuffle = 1,
    Step = 2,
    Probe = 3,
}

/// Generator for item `index` of `stream`, a pure function of its arguments.
pub fn derived_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 56) ^ index);
    rng
}
