use dofa_core::data::{
    batch_iter, builtin_modalities, decode_raster, encode_raster, modality, modality_signature, synth_dataset, synth_sample,
    SpectralImage, SynthOptions,
};
use dofa_core::train::{probe_on_features, ProbeOptions};
use dofa_core::{Tensor, WavelengthList};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn builtin_tables() {
    let mods = builtin_modalities();
    let names: Vec<&str> = mods.iter().map(|m| m.name.as_str()).collect();
    assert_eq!(names, ["sentinel1", "sentinel2", "gaofen", "naip", "enmap"]);
    for m in &mods {
        assert_eq!(m.wavelengths.len(), m.channels);
        assert!(m.validate().is_ok());
    }
    assert_eq!(modality("sentinel1").unwrap().wavelengths.as_slice(), &[3.75, 3.75]);
    let naip = modality("naip").unwrap();
    assert_eq!(naip.wavelengths.as_slice(), &[0.64, 0.56, 0.48]);
    assert_eq!(naip.rgb_indices, Some([0, 1, 2]));
    let enmap = modality("enmap").unwrap();
    let l = enmap.wavelengths.as_slice();
    assert_eq!(l.len(), 202);
    assert!(l.windows(2).all(|w| w[0] < w[1]));
    assert!((l[0] - 0.42).abs() < 1e-9 && (l[201] - 2.45).abs() < 1e-9);
}

#[test]
fn batch_means_match_signature() {
    // per-channel mean over many samples against the expected signature,
    // with a 3-sigma band from the sample spread
    let spec = modality("sentinel2").unwrap();
    let opts = SynthOptions::default();
    let n = 1200;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let means: Vec<Vec<f64>> = (0..n).map(|_| synth_sample(&spec, 16, 16, 6, 10, &mut rng).unwrap().channel_means()).collect();
    let sig = modality_signature(&spec, 6, 10, opts.centered);
    for c in 0..spec.channels {
        let xs: Vec<f64> = means.iter().map(|m| m[c]).collect();
        let mu = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let want = opts.signature_amplitude * sig[c];
        assert!((mu - want).abs() < 3.0 * sd / (n as f64).sqrt(), "channel {c}: {mu} vs {want} (sd {sd})");
    }
}

#[test]
fn raw_channel_means_are_linearly_separable() {
    let train = synth_dataset(&["sentinel2"], 2000, 10, 32, 21, &SynthOptions::default()).unwrap();
    let val = synth_dataset(&["sentinel2"], 1000, 10, 32, 22, &SynthOptions::default()).unwrap();
    let f = |d: &dofa_core::data::Dataset| d.images().map(SpectralImage::channel_means).collect::<Vec<_>>();
    let r = probe_on_features(f(&train), &train.labels().unwrap(), f(&val), &val.labels().unwrap(), &ProbeOptions::default()).unwrap();
    assert!(r.val_accuracy > 0.8, "{}", r.val_accuracy);
}

#[test]
fn synth_dataset_is_deterministic_and_balanced() {
    let a = synth_dataset(&["gaofen", "naip"], 20, 10, 32, 5, &SynthOptions::default()).unwrap();
    let b = synth_dataset(&["gaofen", "naip"], 20, 10, 32, 5, &SynthOptions::default()).unwrap();
    assert_eq!(a.len(), 40);
    assert!(a.images().zip(b.images()).all(|(x, y)| x == y));
    let labels = a.labels().unwrap();
    for k in 0..10 {
        assert_eq!(labels.iter().filter(|&&l| l == k).count(), 4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn raster_round_trip_is_bit_exact(c in 1usize..6, h in 1usize..9, w in 1usize..9, label in proptest::option::of(0u32..100),
                                      bits in proptest::collection::vec(any::<u32>(), 1..400)) {
        let data: Vec<f32> = (0..c * h * w)
            .map(|i| f32::from_bits(bits[i % bits.len()]))
            .map(|v| if v.is_finite() { v } else { 0.5 })
            .collect();
        let lambdas = [0.49, 0.56, 0.665, 0.705, 3.75][..c].to_vec();
        let img = SpectralImage::new(Tensor::new(vec![c, h, w], data).unwrap(), WavelengthList::new(lambdas).unwrap(), "m", label).unwrap();
        let back = decode_raster(&encode_raster(&img), "m").unwrap();
        prop_assert_eq!(&back.wavelengths, &img.wavelengths);
        prop_assert_eq!(back.label, img.label);
        prop_assert!(back.data.data().iter().zip(img.data.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn batches_never_mix_channel_counts(per in proptest::collection::vec(0usize..7, 5), bs in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut images = Vec::new();
        for (spec, &n) in builtin_modalities().iter().zip(&per) {
            for i in 0..n {
                images.push(synth_sample(spec, 4, 4, i % 2, 2, &mut rng).unwrap());
            }
        }
        let mut seen = 0;
        for b in batch_iter(&images, bs, seed).unwrap() {
            prop_assert!(!b.indices.is_empty() && b.indices.len() <= bs);
            prop_assert!(b.indices.iter().all(|&i| images[i].modality == b.modality && images[i].channels() == images[b.indices[0]].channels()));
            seen += b.indices.len();
        }
        prop_assert_eq!(seen, images.len());
    }
}
