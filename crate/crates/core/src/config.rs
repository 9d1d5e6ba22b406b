//! Run configuration files.
//!
//! A TOML document with sections `[model]`, `[optim]`, `[data]`, `[probe]`
//! and `[paths]`. Keys left out take their value from the chosen preset;
//! unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SynthOptions;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{OptimConfig, ProbeOptions};

/// Name of the resolved configuration written into output directories.
pub const EFFECTIVE_CONFIG: &str = "config.toml";

pub const PRESETS: [&str; 3] = ["desk", "smoke", "base"];

/// Synthetic data settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub per_modality: usize,
    pub classes: usize,
    pub seed: u64,
    pub modalities: Vec<String>,
    pub synth: SynthOptions,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            per_modality: 100,
            classes: 10,
            seed: 0,
            modalities: ["sentinel1", "sentinel2", "gaofen", "naip", "enmap"].map(String::from).to_vec(),
            synth: SynthOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub teacher: Option<PathBuf>,
    pub init_generator: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub data: DataConfig,
    pub probe: ProbeOptions,
    pub paths: PathsConfig,
}

impl RunConfig {
    /// `desk` is the default; `smoke` is a few epochs on a 50-file set;
    /// `base` is the ViT-Base recipe at 224 pixels.
    pub fn preset(name: &str) -> Result<Self> {
        let desk = Self {
            model: ModelConfig::desk(),
            optim: OptimConfig::default(),
            data: DataConfig::default(),
            probe: ProbeOptions::default(),
            paths: PathsConfig::default(),
        };
        match name {
            "desk" => Ok(desk),
            "smoke" => Ok(Self {
                optim: OptimConfig { total_epochs: 4, warmup_epochs: 1, batch_size: 8, ..desk.optim },
                data: DataConfig { per_modality: 10, ..desk.data },
                probe: ProbeOptions { epochs: 10, ..desk.probe },
                ..desk
            }),
            "base" => Ok(Self {
                model: ModelConfig::base(),
                optim: OptimConfig { total_epochs: 100, warmup_epochs: 20, batch_size: 128, ..desk.optim },
                probe: ProbeOptions { lrs: vec![0.5, 1.0, 10.0, 20.0], ..desk.probe },
                ..desk
            }),
            other => Err(Error::Config(format!("unknown preset {other:?}; expected one of {PRESETS:?}"))),
        }
    }

    /// Layers `text` over the preset. Unknown sections or keys are errors.
    pub fn from_toml_str(text: &str, preset: &str) -> Result<Self> {
        let overlay: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let base = toml::Table::try_from(Self::preset(preset)?).map_err(|e| Error::Config(e.to_string()))?;
        let merged = merge(base, overlay);
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, preset: &str) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, preset).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate()?;
        if self.data.classes == 0 {
            return Err(Error::Config("data.classes must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Writes the resolved configuration to `dir/config.toml`.
    pub fn echo(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join(EFFECTIVE_CONFIG);
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn merge(mut base: toml::Table, overlay: toml::Table) -> toml::Table {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                let merged = merge(std::mem::take(b), o);
                *b = merged;
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}
