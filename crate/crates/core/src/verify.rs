//! In-process invariant suite behind `dofa verify`.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{decode_raster, encode_raster, modality, synth_sample, SpectralImage};
use crate::error::{Error, Result};
use crate::gradcheck::{grad_check, Coords, GradCheckOptions, GradCheckReport};
use crate::hypernet::WavelengthList;
use crate::losses::{composite_terms, make_proxy, TeacherModel};
use crate::model::{num_keep, random_mask, DofaModel, ModelConfig};
use crate::tensor::{Float, Tensor};
use crate::train::Checkpoint;

/// Tolerance for the permutation and dual-path checks.
pub const EQUIVALENCE_TOL: f64 = 1e-5;
/// Tolerance for the composite-loss gradient check.
pub const GRAD_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VerifyLevel {
    Fast,
    /// Adds the 202-channel cases and a denser gradient check.
    Full,
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub level: VerifyLevel,
    pub seed: u64,
    /// Passed to the gradient checker; anything but 1.0 must make it fail.
    pub analytic_scale: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { level: VerifyLevel::Fast, seed: 0, analytic_scale: 1.0 }
    }
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

/// Gradient check of the composite loss in 64-bit mode on one synthetic image
/// of `modality_name`, with a random frozen teacher.
pub fn composite_grad_check(
    cfg: &ModelConfig,
    modality_name: &str,
    seed: u64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let spec = modality(modality_name)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = synth_sample(&spec, cfg.image_size, cfg.image_size, 1, 10, &mut rng)?;
    let plan = random_mask(cfg.num_patches(), cfg.mask_ratio, seed)?;
    let proxy = make_proxy(&x, &spec, &mut rng)?;
    let mut model = DofaModel::<f64>::new(cfg, seed)?;
    let teacher = TeacherModel::<f64>::new(cfg, seed + 1)?;
    let net = model.net.clone();
    grad_check(&mut model.store, opts, |g, sp| {
        let tp = teacher.store.bind(g, false);
        let t = composite_terms(g, &net, sp, &teacher.net, &tp, &x, &plan, &proxy, false)?;
        g.sub(t.recon, t.cos)
    })
}

fn max_abs<T: Float>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).fold(0.0, f64::max)
}

/// Worst deviation from `kernel(perm(λ))[:, i] == kernel(λ)[:, perm[i]]`,
/// bias included.
pub fn kernel_equivariance_error<T: Float>(model: &DofaModel<T>, lambdas: &WavelengthList, perm: &[usize]) -> Result<f64> {
    let base = model.dynamic_kernel(lambdas)?;
    let moved = model.dynamic_kernel(&lambdas.permuted(perm))?;
    let s = base.kernel.shape().to_vec();
    let (d, c, pp) = (s[0], s[1], s[2] * s[3]);
    let mut worst = max_abs(base.bias.data(), moved.bias.data());
    for o in 0..d {
        for (i, &src) in perm.iter().enumerate() {
            let a = &moved.kernel.data()[(o * c + i) * pp..][..pp];
            let b = &base.kernel.data()[(o * c + src) * pp..][..pp];
            worst = worst.max(max_abs(a, b));
        }
    }
    Ok(worst)
}

/// Worst deviation of `encode(x∘σ, λ∘σ)` from `encode(x, λ)`.
pub fn encode_invariance_error<T: Float>(model: &DofaModel<T>, x: &SpectralImage, perm: &[usize]) -> Result<f64> {
    let a = model.encode(x, &x.wavelengths, None)?;
    let moved = x.permuted(perm);
    let b = model.encode(&moved, &moved.wavelengths, None)?;
    Ok(max_abs(a.data(), b.data()))
}

fn random_image(channels: usize, size: usize, rng: &mut ChaCha8Rng) -> Result<SpectralImage> {
    use rand::Rng;
    let data: Vec<f32> = (0..channels * size * size).map(|_| rng.random_range(-1.0..1.0)).collect();
    let lambdas: Vec<f64> = (0..channels).map(|_| rng.random_range(0.4..2.5)).collect();
    SpectralImage::new(Tensor::new(vec![channels, size, size], data)?, WavelengthList::new(lambdas)?, "random", None)
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    let t = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckOutcome { name, passed, detail, seconds: t.elapsed().as_secs_f64() }
}

/// Runs every check of `opts.level`.
pub fn run_checks(opts: &VerifyOptions) -> Vec<CheckOutcome> {
    let cfg = ModelConfig::desk();
    let full = opts.level == VerifyLevel::Full;
    let channels: &[usize] = if full { &[1, 2, 3, 4, 9, 202] } else { &[1, 2, 3, 4, 9] };
    let seed = opts.seed;
    let mut out = Vec::new();

    out.push(check("grad_check composite loss", || {
        let gc = GradCheckOptions {
            h: 1e-4,
            coords: Coords::PerTensor { n: if full { 4 } else { 1 }, seed },
            analytic_scale: opts.analytic_scale,
        };
        let r = composite_grad_check(&cfg, "sentinel1", seed, &gc)?;
        let at = r.worst.as_ref().map(|w| format!(" at {}[{}]", w.0, w.1)).unwrap_or_default();
        Ok((r.max_rel_error < GRAD_TOL, format!("max rel err {:.2e} over {} entries{at}", r.max_rel_error, r.checked)))
    }));

    let model = DofaModel::<f32>::new(&cfg, seed);
    out.push(check("channel universality", || {
        let model = model.as_ref().map_err(clone_err)?;
        let count = model.num_parameters();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.num_patches();
        let p2 = cfg.patch_size * cfg.patch_size;
        for &c in channels {
            let x = random_image(c, cfg.image_size, &mut rng)?;
            let k = model.dynamic_kernel(&x.wavelengths)?;
            let z = model.encode(&x, &x.wavelengths, None)?;
            let rec = model.decode_reconstruct(&z, None, &x.wavelengths)?;
            let ok = k.kernel.shape() == [cfg.embed_dim, c, cfg.patch_size, cfg.patch_size]
                && z.shape() == [n + 1, cfg.embed_dim]
                && rec.shape() == [n, c * p2]
                && model.num_parameters() == count;
            if !ok {
                return Ok((false, format!("C={c}: kernel {:?} latent {:?} recon {:?}", k.kernel.shape(), z.shape(), rec.shape())));
            }
        }
        Ok((true, format!("C in {channels:?}, {count} parameters")))
    }));

    out.push(check("permutation equivariance", || {
        let model = model.as_ref().map_err(clone_err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let (mut kernel, mut encode) = (0.0f64, 0.0f64);
        let mut trials = 0;
        for round in 0..if full { 5 } else { 4 } {
            for &c in channels.iter().filter(|&&c| c > 1) {
                let x = random_image(c, cfg.image_size, &mut rng)?;
                let mut perm: Vec<usize> = (0..c).collect();
                perm.shuffle(&mut rng);
                kernel = kernel.max(kernel_equivariance_error(model, &x.wavelengths, &perm)?);
                if c < 202 || round == 0 {
                    encode = encode.max(encode_invariance_error(model, &x, &perm)?);
                }
                trials += 1;
            }
        }
        let ok = kernel < EQUIVALENCE_TOL && encode < EQUIVALENCE_TOL;
        Ok((ok, format!("{trials} permutations, kernel {kernel:.1e}, encode {encode:.1e}")))
    }));

    // 64-bit: in f32 the two summation orders drift apart as C grows
    out.push(check("conv vs matmul embedding", || {
        let model = model.as_ref().map_err(clone_err)?.cast::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
        let mut worst = 0.0f64;
        for &c in channels {
            let x = random_image(c, cfg.image_size, &mut rng)?;
            let a = model.embed(&x, &x.wavelengths)?;
            let b = model.embed_by_conv(&x, &x.wavelengths)?;
            worst = worst.max(a.max_abs_diff(&b));
        }
        Ok((worst < EQUIVALENCE_TOL, format!("max abs diff {worst:.1e}")))
    }));

    out.push(check("mask accounting", || {
        let kept = num_keep(196, 0.75);
        let mut ok = kept == 49;
        for s in 0..20 {
            let plan = random_mask(196, 0.75, seed + s)?;
            ok &= plan.keep_indices.len() == 49 && plan.mask_indices.len() == 147;
            let order: Vec<usize> = plan.keep_indices.iter().chain(&plan.mask_indices).copied().collect();
            ok &= plan.restore_permutation.iter().enumerate().all(|(i, &j)| order[j] == i);
        }
        Ok((ok, format!("N=196: {kept} kept, {} masked", 196 - kept)))
    }));

    out.push(check("raster round trip", || {
        let spec = modality("sentinel2")?;
        let img = synth_sample(&spec, 32, 32, 2, 10, &mut ChaCha8Rng::seed_from_u64(seed))?;
        let bytes = encode_raster(&img);
        let back = decode_raster(&bytes, "sentinel2")?;
        let mut bad = bytes.clone();
        bad[0] = b'X';
        let magic = matches!(decode_raster(&bad, "sentinel2"), Err(Error::BadMagic { .. }));
        let trunc = matches!(decode_raster(&bytes[..bytes.len() - 3], "sentinel2"), Err(Error::Truncated { .. }));
        let ok = back == img && magic && trunc;
        Ok((ok, format!("{} bytes, corruption detected: magic {magic}, truncation {trunc}", bytes.len())))
    }));

    out.push(check("checkpoint round trip", || {
        let model = model.as_ref().map_err(clone_err)?;
        let bytes = Checkpoint::from_model(model).encode()?;
        let back = Checkpoint::decode(&bytes)?.to_model()?;
        let same = model.store.iter().zip(back.store.iter()).all(|(a, b)| {
            a.name == b.name && a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        });
        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x40;
        let crc = matches!(Checkpoint::decode(&flipped), Err(Error::BadChecksum { .. }));
        let trunc = matches!(Checkpoint::decode(&bytes[..bytes.len() - 7]), Err(Error::Truncated { .. }));
        Ok((same && crc && trunc, format!("{} bytes, bit-exact {same}, crc {crc}, truncation {trunc}", bytes.len())))
    }));

    out
}

fn clone_err(e: &Error) -> Error {
    Error::Config(e.to_string())
}

/// Fixed-width table of outcomes.
pub fn format_table(outcomes: &[CheckOutcome]) -> String {
    let w = outcomes.iter().map(|o| o.name.len()).max().unwrap_or(0);
    let mut s = String::new();
    for o in outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        s.push_str(&format!("{status}  {:<w$}  {:>7.2}s  {}\n", o.name, o.seconds, o.detail));
    }
    s
}
