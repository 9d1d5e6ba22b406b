use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypernet::{WavelengthList, SAR_WAVELENGTH};

/// Sensor description: channel wavelengths, RGB band positions and the
/// per-channel normalization constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalitySpec {
    pub name: String,
    pub channels: usize,
    pub wavelengths: WavelengthList,
    /// Positions of the red, green and blue bands, in that order.
    pub rgb_indices: Option<[usize; 3]>,
    pub is_sar: bool,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ModalitySpec {
    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        if self.wavelengths.len() != c || self.mean.len() != c || self.std.len() != c {
            return Err(Error::Config(format!("modality {} tables disagree with {c} channels", self.name)));
        }
        if let Some(idx) = self.rgb_indices {
            if idx.iter().any(|&i| i >= c) {
                return Err(Error::Config(format!("modality {} rgb indices {idx:?} out of range", self.name)));
            }
        }
        if c != 3 && self.rgb_indices.is_some() == self.is_sar {
            return Err(Error::Config(format!(
                "modality {} must declare exactly one of rgb_indices or is_sar",
                self.name
            )));
        }
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config(format!("modality {} has a non-positive std", self.name)));
        }
        Ok(())
    }

    /// `(raw - mean) / std` per channel, in place on a `[C, H, W]` buffer.
    pub fn normalize(&self, data: &mut [f32]) {
        let hw = data.len() / self.channels;
        for (c, chunk) in data.chunks_mut(hw).enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            for v in chunk {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
    }
}

fn uniform(name: &str, wavelengths: Vec<f64>, rgb: Option<[usize; 3]>, is_sar: bool, mean: f64, std: f64) -> ModalitySpec {
    let c = wavelengths.len();
    ModalitySpec {
        name: name.to_string(),
        channels: c,
        wavelengths: WavelengthList::new(wavelengths).expect("builtin wavelengths"),
        rgb_indices: rgb,
        is_sar,
        mean: vec![mean; c],
        std: vec![std; c],
    }
}

fn nearest(wavelengths: &[f64], target: f64) -> usize {
    wavelengths
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
        .map(|(i, _)| i)
        .expect("non-empty")
}

/// EnMAP stand-in: 202 bands evenly spaced over 0.42-2.45 µm, rounded to 0.1 nm.
fn enmap_wavelengths() -> Vec<f64> {
    let (lo, hi, n) = (0.42, 2.45, 202);
    (0..n)
        .map(|i| {
            let l = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            (l * 1e4).round() / 1e4
        })
        .collect()
}

/// The five pretraining modalities. Normalization constants are the fixed
/// values the synthetic generator is calibrated against.
pub fn builtin_modalities() -> Vec<ModalitySpec> {
    let enmap = enmap_wavelengths();
    let enmap_rgb = [nearest(&enmap, 0.64), nearest(&enmap, 0.56), nearest(&enmap, 0.48)];
    vec![
        // backscatter in dB
        uniform("sentinel1", vec![SAR_WAVELENGTH, SAR_WAVELENGTH], None, true, -12.0, 5.0),
        // nine bands, 0.49-2.15 µm
        uniform(
            "sentinel2",
            vec![0.49, 0.56, 0.665, 0.705, 0.74, 0.783, 0.842, 1.61, 2.15],
            Some([2, 1, 0]),
            false,
            0.25,
            0.1,
        ),
        uniform("gaofen", vec![0.485, 0.555, 0.66, 0.83], Some([2, 1, 0]), false, 0.2, 0.08),
        uniform("naip", vec![0.64, 0.56, 0.48], Some([0, 1, 2]), false, 110.0, 40.0),
        uniform("enmap", enmap, Some(enmap_rgb), false, 0.18, 0.07),
    ]
}

/// Built-in modality by name.
pub fn modality(name: &str) -> Result<ModalitySpec> {
    builtin_modalities()
        .into_iter()
        .find(|m| m.name == name)
        .ok_or_else(|| Error::UnknownModality(name.to_string()))
}
