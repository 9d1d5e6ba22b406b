//! Binary checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! b"DOFC" | version u16 | u32 len + UTF-8 TOML metadata
//! | u32 count | count x (u32 len + name, u8 rank, rank x u32 dims, f32 payload)
//! | optimizer table, same layout, names "m/<param>" and "v/<param>"
//! | CRC32 of every preceding byte
//! ```
//!
//! The metadata holds the checkpoint kind, model and optimizer configs, the
//! step/epoch/seed counters and the per-epoch loss history. Per-step random
//! streams are derived from `(seed, step)`, so no generator state is stored.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{AdamW, OptimConfig};
use crate::error::{Error, Result};
use crate::losses::TeacherModel;
use crate::model::{DofaModel, ModelConfig};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DOFC";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    /// Full student network.
    Model,
    /// Embedding generator only, from the warm-start phase.
    Generator,
    Teacher,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Progress {
    pub step: u64,
    pub epoch: usize,
    pub seed: u64,
}

/// Mean losses over one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRecord {
    pub epoch: usize,
    pub recon: f64,
    pub distill: f64,
    pub total: f64,
}

pub type NamedTensor = (String, Tensor<f32>);

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub model: ModelConfig,
    pub optim: Option<OptimConfig>,
    pub progress: Progress,
    pub history: Vec<EpochRecord>,
    pub params: Vec<NamedTensor>,
    pub optimizer: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    kind: CheckpointKind,
    progress: Progress,
    model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    optim: Option<OptimConfig>,
    #[serde(default)]
    history: Vec<EpochRecord>,
}

pub fn store_tensors(store: &ParamStore<f32>) -> Vec<NamedTensor> {
    store.iter().map(|p| (p.name.clone(), (*p.value).clone())).collect()
}

/// Copies tensors into same-named parameters. With `strict`, the two sets of
/// names must coincide.
pub fn load_tensors(store: &mut ParamStore<f32>, tensors: &[NamedTensor], strict: bool) -> Result<()> {
    if strict && tensors.len() != store.len() {
        return Err(Error::Malformed(format!("checkpoint has {} tensors, model has {}", tensors.len(), store.len())));
    }
    for (name, t) in tensors {
        let id = store
            .find(name)
            .ok_or_else(|| Error::Malformed(format!("checkpoint tensor {name} has no matching parameter")))?;
        if store.value(id).shape() != t.shape() {
            return Err(Error::Shape(format!(
                "parameter {name}: checkpoint {:?} vs model {:?}",
                t.shape(),
                store.value(id).shape()
            )));
        }
        store.set(id, t.clone())?;
    }
    Ok(())
}

pub fn optimizer_tensors(store: &ParamStore<f32>, opt: &AdamW<f32>) -> Vec<NamedTensor> {
    let m = store.iter().zip(&opt.m).map(|(p, t)| (format!("m/{}", p.name), t.clone()));
    let v = store.iter().zip(&opt.v).map(|(p, t)| (format!("v/{}", p.name), t.clone()));
    m.chain(v).collect()
}

/// Rebuilds optimizer moments for `store` from a checkpoint table.
pub fn restore_optimizer(store: &ParamStore<f32>, tensors: &[NamedTensor], step: u64) -> Result<AdamW<f32>> {
    let mut opt = AdamW::new(store);
    opt.step = step;
    let find = |key: String| {
        tensors
            .iter()
            .find(|(n, _)| *n == key)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| Error::Malformed(format!("optimizer state {key} missing")))
    };
    for (i, p) in store.iter().enumerate() {
        let (m, v) = (find(format!("m/{}", p.name))?, find(format!("v/{}", p.name))?);
        if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
            return Err(Error::Shape(format!("optimizer state for {} has the wrong shape", p.name)));
        }
        opt.m[i] = m;
        opt.v[i] = v;
    }
    Ok(opt)
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Malformed(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_table(out: &mut Vec<u8>, table: &[NamedTensor]) -> Result<()> {
    put_u32(out, table.len())?;
    for (name, t) in table {
        put_u32(out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Malformed(format!("rank of {name} exceeds 255")))?;
        out.push(rank);
        for &d in t.shape() {
            put_u32(out, d)?;
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated {
            needed: self.pos.saturating_add(n),
            available: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Malformed("string is not UTF-8".into()))
    }

    fn table(&mut self) -> Result<Vec<NamedTensor>> {
        let count = self.u32()?;
        let mut out = Vec::new();
        for _ in 0..count {
            let name = self.string()?;
            let rank = self.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::Malformed(format!("tensor {name} is too large")))?;
            let data = self.take(n)?.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
            out.push((name, Tensor::new(shape, data)?));
        }
        Ok(out)
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let meta = Meta {
            kind: self.kind,
            progress: self.progress.clone(),
            model: self.model.clone(),
            optim: self.optim.clone(),
            history: self.history.clone(),
        };
        let text = toml::to_string(&meta).map_err(|e| Error::Malformed(format!("checkpoint metadata: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_u32(&mut out, text.len())?;
        out.extend_from_slice(text.as_bytes());
        put_table(&mut out, &self.params)?;
        put_table(&mut out, &self.optimizer)?;
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic { expected: CHECKPOINT_MAGIC, found: magic.to_vec() });
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let text = r.string()?;
        let params = r.table()?;
        let optimizer = r.table()?;
        let body_end = r.pos;
        let stored = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if r.pos != bytes.len() {
            return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(Error::BadChecksum { stored, computed });
        }
        let meta: Meta = toml::from_str(&text).map_err(|e| Error::Malformed(format!("checkpoint metadata: {e}")))?;
        Ok(Self {
            kind: meta.kind,
            model: meta.model,
            optim: meta.optim,
            progress: meta.progress,
            history: meta.history,
            params,
            optimizer,
        })
    }

    /// Writes through a temporary file so a crash never leaves a partial checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Malformed(format!("expected a {kind:?} checkpoint, found {:?}", self.kind)));
        }
        Ok(())
    }

    pub fn from_model(model: &DofaModel<f32>) -> Self {
        Self {
            kind: CheckpointKind::Model,
            model: model.config().clone(),
            optim: None,
            progress: Progress::default(),
            history: Vec::new(),
            params: store_tensors(&model.store),
            optimizer: Vec::new(),
        }
    }

    pub fn from_teacher(cfg: &ModelConfig, teacher: &TeacherModel<f32>) -> Self {
        Self {
            kind: CheckpointKind::Teacher,
            params: store_tensors(&teacher.store),
            ..Self::from_model_config(cfg)
        }
    }

    fn from_model_config(cfg: &ModelConfig) -> Self {
        Self {
            kind: CheckpointKind::Model,
            model: cfg.clone(),
            optim: None,
            progress: Progress::default(),
            history: Vec::new(),
            params: Vec::new(),
            optimizer: Vec::new(),
        }
    }

    /// Student network with every parameter taken from this checkpoint.
    pub fn to_model(&self) -> Result<DofaModel<f32>> {
        self.expect_kind(CheckpointKind::Model)?;
        let mut model = DofaModel::new(&self.model, 0)?;
        load_tensors(&mut model.store, &self.params, true)?;
        Ok(model)
    }

    pub fn to_teacher(&self) -> Result<TeacherModel<f32>> {
        self.expect_kind(CheckpointKind::Teacher)?;
        let mut teacher = TeacherModel::new(&self.model, 0)?;
        load_tensors(&mut teacher.store, &self.params, true)?;
        Ok(teacher)
    }

    /// Overwrites the embedding generator of `model` with the one stored here.
    pub fn apply_generator(&self, model: &mut DofaModel<f32>) -> Result<()> {
        self.expect_kind(CheckpointKind::Generator)?;
        load_tensors(&mut model.store, &self.params, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let model = DofaModel::<f32>::new(&ModelConfig::desk(), 3).unwrap();
        let opt = AdamW::new(&model.store);
        Checkpoint {
            optim: Some(OptimConfig::default()),
            progress: Progress { step: 12, epoch: 2, seed: 9 },
            history: vec![EpochRecord { epoch: 1, recon: 0.25, distill: 0.1, total: 0.15 }],
            optimizer: optimizer_tensors(&model.store, &opt),
            ..Checkpoint::from_model(&model)
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.encode().unwrap();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode().unwrap(), bytes);
        let model = back.to_model().unwrap();
        assert_eq!(store_tensors(&model.store), ck.params);
    }

    #[test]
    fn corruption_gives_distinct_errors() {
        let bytes = sample().encode().unwrap();

        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(Checkpoint::decode(&bad), Err(Error::BadMagic { .. })));

        assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() / 2]), Err(Error::Truncated { .. })));
        assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() - 2]), Err(Error::Truncated { .. })));

        let mut bad = bytes.clone();
        let mid = bytes.len() - 100;
        bad[mid] ^= 0x40;
        assert!(matches!(Checkpoint::decode(&bad), Err(Error::BadChecksum { .. })));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(Checkpoint::decode(&bad), Err(Error::UnsupportedVersion(2))));
    }

    #[test]
    fn kinds_are_checked() {
        let ck = sample();
        assert!(ck.to_teacher().is_err());
        let mut model = ck.to_model().unwrap();
        assert!(ck.apply_generator(&mut model).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut ck = sample();
        ck.params[0].1 = Tensor::zeros(&[1]);
        assert!(matches!(ck.to_model(), Err(Error::Shape(_))));
    }
}
