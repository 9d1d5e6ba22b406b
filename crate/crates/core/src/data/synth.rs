//! Synthetic multispectral samples.
//!
//! A sample in normalized units is
//! `b * signature(class, lambda_c) + field(x, y) + noise`, where the field is a
//! smooth random sum of low-frequency cosines shared by all channels and `b`
//! is a per-sample brightness in `[0.8, 1.2]`. By default the signature is
//! centered over the modality's bands. The raw image is
//! `mean_c + std_c * that`, then normalized with the modality constants.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{modality, Dataset, ModalitySpec, Sample, SpectralImage};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthOptions {
    pub signature_amplitude: f64,
    pub field_std: f64,
    pub noise_std: f64,
    pub brightness_jitter: f64,
    /// Subtract the signature's mean over the modality's bands, so classes
    /// differ only in spectral shape. Single-wavelength modalities (SAR) then
    /// carry no class signal.
    pub centered: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { signature_amplitude: 1.0, field_std: 0.1, noise_std: 0.1, brightness_jitter: 0.2, centered: true }
    }
}

/// Class-dependent spectral response at wavelength `lambda` (µm), before
/// amplitude scaling. Smooth in `lambda` with values in `[-1, 1]`.
pub fn class_signature(class_id: usize, num_classes: usize, lambda: f64) -> f64 {
    let k = num_classes.max(1) as f64;
    let phase = TAU * class_id as f64 / k;
    let phase2 = TAU * ((3 * class_id) % num_classes.max(1)) as f64 / k + 0.7;
    ((TAU * 0.8 * lambda + phase).cos() + 0.5 * (TAU * 1.7 * lambda + phase2).cos()) / 1.5
}

/// Per-channel signature of `class_id` for the bands of `spec`.
pub fn modality_signature(spec: &ModalitySpec, class_id: usize, num_classes: usize, centered: bool) -> Vec<f64> {
    let mut sig: Vec<f64> = spec.wavelengths.as_slice().iter().map(|&l| class_signature(class_id, num_classes, l)).collect();
    if centered {
        let mean = sig.iter().sum::<f64>() / sig.len() as f64;
        sig.iter_mut().for_each(|v| *v -= mean);
    }
    sig
}

fn smooth_field(h: usize, w: usize, std: f64, rng: &mut impl Rng) -> Vec<f64> {
    const TERMS: usize = 4;
    // each term a*cos(.) has variance E[a^2]/2
    let amp = Normal::new(0.0, std * (2.0 / TERMS as f64).sqrt()).expect("field amplitude");
    let terms: Vec<(f64, f64, f64, f64)> = (0..TERMS)
        .map(|_| {
            let (u, v) = loop {
                let u = rng.random_range(0..=2) as f64;
                let v = rng.random_range(0..=2) as f64;
                if u != 0.0 || v != 0.0 {
                    break (u, v);
                }
            };
            (amp.sample(rng), u, v, rng.random_range(0.0..TAU))
        })
        .collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let val: f64 = terms
                .iter()
                .map(|&(a, u, v, t)| a * (TAU * (u * x as f64 / w as f64 + v * y as f64 / h as f64) + t).cos())
                .sum();
            out.push(val);
        }
    }
    out
}

/// Draws one labeled sample of `spec` using the default [`SynthOptions`].
pub fn synth_sample(
    spec: &ModalitySpec,
    height: usize,
    width: usize,
    class_id: usize,
    num_classes: usize,
    rng: &mut impl Rng,
) -> Result<SpectralImage> {
    synth_sample_with(spec, height, width, class_id, num_classes, &SynthOptions::default(), rng)
}

pub fn synth_sample_with(
    spec: &ModalitySpec,
    height: usize,
    width: usize,
    class_id: usize,
    num_classes: usize,
    opts: &SynthOptions,
    rng: &mut impl Rng,
) -> Result<SpectralImage> {
    if class_id >= num_classes {
        return Err(Error::Config(format!("class {class_id} out of range for {num_classes} classes")));
    }
    if height == 0 || width == 0 {
        return Err(Error::Config("image size must be positive".into()));
    }
    let noise = Normal::new(0.0, opts.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let brightness = 1.0 + rng.random_range(-opts.brightness_jitter..=opts.brightness_jitter);
    let field = smooth_field(height, width, opts.field_std, rng);
    let hw = height * width;
    let mut raw = Vec::with_capacity(spec.channels * hw);
    let sigs = modality_signature(spec, class_id, num_classes, opts.centered);
    for (c, &s) in sigs.iter().enumerate() {
        let sig = brightness * opts.signature_amplitude * s;
        for &f in &field {
            let z = sig + f + noise.sample(rng);
            raw.push((spec.mean[c] + spec.std[c] * z) as f32);
        }
    }
    spec.normalize(&mut raw);
    let data = Tensor::new(vec![spec.channels, height, width], raw)?;
    SpectralImage::new(data, spec.wavelengths.clone(), spec.name.clone(), Some(class_id as u32))
}

/// `per_modality` labeled samples of each named modality, label `i % num_classes`
/// for the `i`-th sample. One generator seeded with `seed` is consumed in order,
/// so the set is a pure function of the arguments. Sample ids are
/// `<modality>_<i:04>.dofa`.
pub fn synth_dataset(
    modalities: &[&str],
    per_modality: usize,
    num_classes: usize,
    size: usize,
    seed: u64,
    opts: &SynthOptions,
) -> Result<Dataset> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(modalities.len() * per_modality);
    for name in modalities {
        let spec = modality(name)?;
        for i in 0..per_modality {
            let image = synth_sample_with(&spec, size, size, i % num_classes, num_classes, opts, &mut rng)?;
            samples.push(Sample { id: format!("{}_{i:04}.dofa", spec.name), image });
        }
    }
    Ok(Dataset::new(samples))
}
