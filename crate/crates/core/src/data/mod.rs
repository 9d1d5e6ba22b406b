//! Modality tables, synthetic samples, the raster file format and batching.

mod batch;
mod manifest;
mod modality;
mod raster;
mod synth;

pub use batch::{batch_iter, batch_schedule, Batch};
pub use manifest::{read_manifest, write_manifest, Dataset, ManifestEntry, Sample};
pub use modality::{builtin_modalities, modality, ModalitySpec};
pub use raster::{decode_raster, encode_raster, read_raster, write_raster, RASTER_MAGIC, RASTER_VERSION};
pub use synth::{class_signature, modality_signature, synth_dataset, synth_sample, synth_sample_with, SynthOptions};

use crate::error::{Error, Result};
use crate::hypernet::WavelengthList;
use crate::tensor::Tensor;

/// A `[C, H, W]` raster with the center wavelength of every channel.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralImage {
    pub data: Tensor<f32>,
    pub wavelengths: WavelengthList,
    pub modality: String,
    pub label: Option<u32>,
}

impl SpectralImage {
    pub fn new(data: Tensor<f32>, wavelengths: WavelengthList, modality: impl Into<String>, label: Option<u32>) -> Result<Self> {
        if data.rank() != 3 {
            return Err(Error::Shape(format!("image must be [C, H, W], got {:?}", data.shape())));
        }
        if data.shape()[0] != wavelengths.len() {
            return Err(Error::Wavelength(format!(
                "{} wavelengths for {} channels",
                wavelengths.len(),
                data.shape()[0]
            )));
        }
        if !data.is_finite() {
            return Err(Error::NonFinite("image contains non-finite pixels".into()));
        }
        Ok(Self { data, wavelengths, modality: modality.into(), label })
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    /// One channel as a flat `H*W` slice.
    pub fn channel(&self, c: usize) -> &[f32] {
        let hw = self.height() * self.width();
        &self.data.data()[c * hw..(c + 1) * hw]
    }

    /// Channels reordered so that output channel `i` is input channel `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.numel());
        for &c in perm {
            data.extend_from_slice(self.channel(c));
        }
        Self {
            data: Tensor::new(vec![perm.len(), self.height(), self.width()], data).expect("permuted shape"),
            wavelengths: self.wavelengths.permuted(perm),
            modality: self.modality.clone(),
            label: self.label,
        }
    }

    /// Mean of every channel.
    pub fn channel_means(&self) -> Vec<f64> {
        (0..self.channels())
            .map(|c| {
                let ch = self.channel(c);
                ch.iter().map(|&v| v as f64).sum::<f64>() / ch.len() as f64
            })
            .collect()
    }
}
