//! Python bindings. Build with `--features extension-module` to produce an
//! importable `dofa` module; images cross the boundary as flat lists in
//! `[C, H, W]` order.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dofa_core::config::RunConfig;
use dofa_core::data::{read_raster, synth_dataset, write_manifest, write_raster, Dataset, ManifestEntry, SpectralImage};
use dofa_core::train::{linear_probe, pretrain as core_pretrain, Checkpoint, PretrainOptions};
use dofa_core::verify::{run_checks, VerifyLevel, VerifyOptions};
use dofa_core::{DofaModel, ModelConfig, Tensor, WavelengthList};

create_exception!(dofa, DofaError, PyException);

fn err(e: dofa_core::Error) -> PyErr {
    DofaError::new_err(e.to_string())
}

fn image(data: Vec<f32>, shape: (usize, usize, usize), wavelengths: Vec<f64>) -> PyResult<SpectralImage> {
    let (c, h, w) = shape;
    let t = Tensor::new(vec![c, h, w], data).map_err(err)?;
    SpectralImage::new(t, WavelengthList::new(wavelengths).map_err(err)?, "python", None).map_err(err)
}

fn model_config(preset: &str) -> PyResult<ModelConfig> {
    Ok(RunConfig::preset(preset).map_err(err)?.model)
}

/// Encoder with a wavelength-conditioned patch embedding.
#[pyclass(name = "Model", module = "dofa")]
pub struct PyModel {
    inner: DofaModel<f32>,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (preset = "desk", seed = 0))]
    fn new(preset: &str, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: DofaModel::new(&model_config(preset)?, seed).map_err(err)? })
    }

    /// Loads a pretraining checkpoint.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = Checkpoint::load(&path).and_then(|c| c.to_model()).map_err(err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        Checkpoint::from_model(&self.inner).save(path).map_err(err)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.num_parameters()
    }

    #[getter]
    fn embed_dim(&self) -> usize {
        self.inner.config().embed_dim
    }

    #[getter]
    fn image_size(&self) -> usize {
        self.inner.config().image_size
    }

    /// Patch-embedding kernel for the given wavelengths, flattened `[D, C, P, P]`,
    /// and its bias.
    fn dynamic_kernel(&self, wavelengths: Vec<f64>) -> PyResult<(Vec<f32>, Vec<usize>, Vec<f32>)> {
        let l = WavelengthList::new(wavelengths).map_err(err)?;
        let k = self.inner.dynamic_kernel(&l).map_err(err)?;
        Ok((k.kernel.data().to_vec(), k.kernel.shape().to_vec(), k.bias.data().to_vec()))
    }

    /// Unmasked encoder tokens, flattened `[N + 1, D]`.
    fn encode(&self, data: Vec<f32>, shape: (usize, usize, usize), wavelengths: Vec<f64>) -> PyResult<Vec<f32>> {
        let x = image(data, shape, wavelengths)?;
        Ok(self.inner.encode(&x, &x.wavelengths, None).map_err(err)?.data().to_vec())
    }

    /// Mean-pooled encoder features.
    fn features(&self, data: Vec<f32>, shape: (usize, usize, usize), wavelengths: Vec<f64>) -> PyResult<Vec<f32>> {
        let x = image(data, shape, wavelengths)?;
        self.inner.features(&x).map_err(err)
    }

    fn __repr__(&self) -> String {
        let c = self.inner.config();
        format!("Model(embed_dim={}, depth={}, image_size={}, parameters={})", c.embed_dim, c.depth, c.image_size, self.inner.num_parameters())
    }
}

/// Writes a synthetic dataset and its manifest; returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out, per_modality = 10, classes = 10, size = 32, seed = 0))]
fn synth(out: PathBuf, per_modality: usize, classes: usize, size: usize, seed: u64) -> PyResult<PathBuf> {
    let cfg = RunConfig::preset("desk").map_err(err)?;
    let names: Vec<&str> = cfg.data.modalities.iter().map(String::as_str).collect();
    let data = synth_dataset(&names, per_modality, classes, size, seed, &cfg.data.synth).map_err(err)?;
    std::fs::create_dir_all(&out).map_err(|e| DofaError::new_err(format!("{}: {e}", out.display())))?;
    let mut entries = Vec::with_capacity(data.len());
    for s in &data.samples {
        write_raster(out.join(&s.id), &s.image).map_err(err)?;
        entries.push(ManifestEntry { path: s.id.clone(), modality: s.image.modality.clone(), label: s.image.label });
    }
    let manifest = out.join("manifest.tsv");
    write_manifest(&manifest, &entries).map_err(err)?;
    Ok(manifest)
}

/// Reads a raster as `(data, (C, H, W), wavelengths, label)`.
#[pyfunction]
fn load_raster(path: PathBuf, modality: &str) -> PyResult<(Vec<f32>, (usize, usize, usize), Vec<f64>, Option<u32>)> {
    let r = read_raster(path, modality).map_err(err)?;
    let shape = (r.channels(), r.height(), r.width());
    Ok((r.data.data().to_vec(), shape, r.wavelengths.as_slice().to_vec(), r.label))
}

/// Pretrains on a manifest and returns the per-epoch history.
#[pyfunction]
#[pyo3(signature = (data, out, preset = "smoke", epochs = None, seed = None))]
fn pretrain<'py>(py: Python<'py>, data: PathBuf, out: PathBuf, preset: &str, epochs: Option<usize>, seed: Option<u64>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut cfg = RunConfig::preset(preset).map_err(err)?;
    if let Some(e) = epochs {
        cfg.optim.total_epochs = e;
        cfg.optim.warmup_epochs = cfg.optim.warmup_epochs.min(e);
    }
    if let Some(s) = seed {
        cfg.optim.seed = s;
    }
    let dataset = Dataset::load(&data).map_err(err)?;
    let ck = core_pretrain(&dataset, &PretrainOptions::new(cfg.model, cfg.optim, out)).map_err(err)?;
    ck.history
        .iter()
        .map(|h| {
            let d = PyDict::new(py);
            d.set_item("epoch", h.epoch)?;
            d.set_item("recon", h.recon)?;
            d.set_item("distill", h.distill)?;
            d.set_item("total", h.total)?;
            Ok(d)
        })
        .collect()
}

/// Linear-probe top-1 accuracy of `model` on a labeled train/val pair.
#[pyfunction]
#[pyo3(signature = (model, train, val, epochs = None))]
fn probe(model: &PyModel, train: PathBuf, val: PathBuf, epochs: Option<usize>) -> PyResult<f64> {
    let mut opts = RunConfig::preset("desk").map_err(err)?.probe;
    opts.epochs = epochs.unwrap_or(opts.epochs);
    let train = Dataset::load(&train).map_err(err)?;
    let val = Dataset::load(&val).map_err(err)?;
    Ok(linear_probe(&model.inner, &train, &val, &opts).map_err(err)?.val_accuracy)
}

/// Runs the invariant suite; returns `(name, passed, detail)` per check.
#[pyfunction]
#[pyo3(signature = (level = "fast"))]
fn verify(level: &str) -> PyResult<Vec<(String, bool, String)>> {
    let level = match level {
        "fast" => VerifyLevel::Fast,
        "full" => VerifyLevel::Full,
        other => return Err(DofaError::new_err(format!("unknown level {other:?}"))),
    };
    let outcomes = run_checks(&VerifyOptions { level, ..VerifyOptions::default() });
    Ok(outcomes.into_iter().map(|o| (o.name.to_string(), o.passed, o.detail)).collect())
}

#[pymodule]
pub fn dofa(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add("DofaError", m.py().get_type::<DofaError>())?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(load_raster, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(probe, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
