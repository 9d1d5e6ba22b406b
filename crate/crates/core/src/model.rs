//! The masked autoencoder built around wavelength-conditioned patch
//! embedding and reconstruction.
//!
//! Patches are numbered row-major over the `H/P x W/P` grid. Inside a patch the
//! flattened layout is channel-major: index `c*P*P + row*P + col`.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::data::SpectralImage;
use crate::error::{Error, Result};
use crate::hypernet::{DynamicKernel, GeneratedWeights, GeneratorConfig, GeneratorRole, WavelengthList, WeightGenerator};
use crate::nn::{trunc_normal, Bound, Init, LayerNorm, Linear, ParamId, ParamStore, TransformerBlock, TransformerBlockConfig};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub image_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
    pub decoder_dim: usize,
    pub decoder_depth: usize,
    pub decoder_heads: usize,
    pub wave_dim: usize,
    pub num_queries: usize,
    pub generator_heads: usize,
    pub mask_ratio: f64,
    pub teacher_dim: usize,
    pub teacher_depth: usize,
    pub teacher_heads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small configuration used by tests and the default CLI preset.
    pub fn desk() -> Self {
        Self {
            patch_size: 16,
            image_size: 32,
            embed_dim: 64,
            depth: 2,
            num_heads: 4,
            mlp_ratio: 4.0,
            decoder_dim: 48,
            decoder_depth: 1,
            decoder_heads: 4,
            wave_dim: 128,
            num_queries: 16,
            generator_heads: 4,
            mask_ratio: 0.75,
            teacher_dim: 64,
            teacher_depth: 2,
            teacher_heads: 4,
        }
    }

    /// ViT-Base sized configuration at 224 pixels.
    pub fn base() -> Self {
        Self {
            image_size: 224,
            embed_dim: 768,
            depth: 12,
            num_heads: 12,
            decoder_dim: 512,
            decoder_depth: 8,
            decoder_heads: 16,
            teacher_dim: 768,
            teacher_depth: 12,
            teacher_heads: 12,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image size {} is not a multiple of patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::Config(format!("mask_ratio {} must lie in (0, 1)", self.mask_ratio)));
        }
        for (name, d) in [("embed_dim", self.embed_dim), ("decoder_dim", self.decoder_dim), ("teacher_dim", self.teacher_dim)] {
            if d == 0 || d % 4 != 0 {
                return Err(Error::Config(format!("{name} {d} must be a positive multiple of 4")));
            }
        }
        self.encoder_block().validate()?;
        self.decoder_block().validate()?;
        self.teacher_block().validate()?;
        self.generator(self.embed_dim, GeneratorRole::Embedding).validate()
    }

    pub fn num_patches(&self) -> usize {
        let g = self.image_size / self.patch_size;
        g * g
    }

    pub fn encoder_block(&self) -> TransformerBlockConfig {
        TransformerBlockConfig { embed_dim: self.embed_dim, num_heads: self.num_heads, mlp_ratio: self.mlp_ratio, depth: self.depth }
    }

    pub fn decoder_block(&self) -> TransformerBlockConfig {
        TransformerBlockConfig {
            embed_dim: self.decoder_dim,
            num_heads: self.decoder_heads,
            mlp_ratio: self.mlp_ratio,
            depth: self.decoder_depth,
        }
    }

    pub fn teacher_block(&self) -> TransformerBlockConfig {
        TransformerBlockConfig {
            embed_dim: self.teacher_dim,
            num_heads: self.teacher_heads,
            mlp_ratio: self.mlp_ratio,
            depth: self.teacher_depth,
        }
    }

    pub fn generator(&self, out_dim: usize, role: GeneratorRole) -> GeneratorConfig {
        GeneratorConfig {
            wave_dim: self.wave_dim,
            num_queries: self.num_queries,
            num_heads: self.generator_heads,
            mlp_ratio: self.mlp_ratio,
            patch_size: self.patch_size,
            out_dim,
            role,
        }
    }
}

// ----- patches --------------------------------------------------------------

/// `[C, H, W] -> [N, C*P*P]`.
pub fn patchify<T: Float>(x: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let (c, h, w) = match x.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::Shape(format!("patchify expects [C, H, W], got {s:?}"))),
    };
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Shape(format!("{h}x{w} image is not divisible into {patch}x{patch} patches")));
    }
    let (gh, gw) = (h / patch, w / patch);
    let area = patch * patch;
    let mut out = Vec::with_capacity(c * h * w);
    let src = x.data();
    for py in 0..gh {
        for px in 0..gw {
            for ch in 0..c {
                for r in 0..patch {
                    let start = ch * h * w + (py * patch + r) * w + px * patch;
                    out.extend_from_slice(&src[start..start + patch]);
                }
            }
        }
    }
    Tensor::new(vec![gh * gw, c * area], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Float>(patches: &Tensor<T>, channels: usize, height: usize, width: usize, patch: usize) -> Result<Tensor<T>> {
    let (n, len) = patches.dims2()?;
    if patch == 0 || height % patch != 0 || width % patch != 0 {
        return Err(Error::Shape(format!("{height}x{width} image is not divisible into {patch}x{patch} patches")));
    }
    let (gh, gw) = (height / patch, width / patch);
    if n != gh * gw || len != channels * patch * patch {
        return Err(Error::Shape(format!(
            "{n} patches of {len} values do not tile a {channels}x{height}x{width} image"
        )));
    }
    let mut out = Tensor::zeros(&[channels, height, width]);
    let src = patches.data();
    let dst = out.data_mut();
    let mut i = 0;
    for py in 0..gh {
        for px in 0..gw {
            for ch in 0..channels {
                for r in 0..patch {
                    let start = ch * height * width + (py * patch + r) * width + px * patch;
                    dst[start..start + patch].copy_from_slice(&src[i..i + patch]);
                    i += patch;
                }
            }
        }
    }
    Ok(out)
}

/// Direct stride-`P` convolution of `x [C, H, W]` with `kernel`; one output
/// row per patch, `[N, D]`.
pub fn conv_patch_embed<T: Float>(x: &Tensor<T>, kernel: &DynamicKernel<T>) -> Result<Tensor<T>> {
    let ks = kernel.kernel.shape();
    let (d, c, p) = (ks[0], ks[1], ks[2]);
    let (xc, h, w) = match x.shape() {
        [a, b, cc] => (*a, *b, *cc),
        s => return Err(Error::Shape(format!("conv expects [C, H, W], got {s:?}"))),
    };
    if xc != c {
        return Err(Error::Shape(format!("kernel has {c} channels, image has {xc}")));
    }
    if h % p != 0 || w % p != 0 {
        return Err(Error::Shape(format!("{h}x{w} image vs stride {p}")));
    }
    let (gh, gw) = (h / p, w / p);
    let mut out = Tensor::zeros(&[gh * gw, d]);
    for py in 0..gh {
        for px in 0..gw {
            for o in 0..d {
                let mut acc = kernel.bias.data()[o];
                for ch in 0..c {
                    for r in 0..p {
                        for q in 0..p {
                            acc += kernel.kernel.get(&[o, ch, r, q]) * x.get(&[ch, py * p + r, px * p + q]);
                        }
                    }
                }
                out.set(&[py * gw + px, o], acc);
            }
        }
    }
    Ok(out)
}

/// Fixed 2D sine-cosine position table for a `grid x grid` layout with a
/// leading all-zero row for the class token: `[grid*grid + 1, dim]`.
pub fn sincos_pos_embed(dim: usize, grid: usize) -> Tensor<f64> {
    assert!(dim % 4 == 0, "position embedding width must be a multiple of 4");
    let half = dim / 2;
    let quarter = half / 2;
    let axis = |pos: f64, out: &mut Vec<f64>| {
        let args: Vec<f64> = (0..quarter).map(|i| pos / 10000f64.powf(i as f64 / quarter as f64)).collect();
        out.extend(args.iter().map(|a| a.sin()));
        out.extend(args.iter().map(|a| a.cos()));
    };
    let mut data = vec![0.0; dim];
    for gy in 0..grid {
        for gx in 0..grid {
            axis(gx as f64, &mut data);
            axis(gy as f64, &mut data);
        }
    }
    Tensor::new(vec![grid * grid + 1, dim], data).expect("pos embed shape")
}

// ----- masking --------------------------------------------------------------

/// Which patches the encoder sees.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPlan {
    /// Visible patches, ascending.
    pub keep_indices: Vec<usize>,
    /// Hidden patches, ascending.
    pub mask_indices: Vec<usize>,
    /// For patch `i`, its position in the sequence `keep_indices ++ mask_indices`.
    pub restore_permutation: Vec<usize>,
}

impl MaskPlan {
    pub fn num_patches(&self) -> usize {
        self.restore_permutation.len()
    }

    /// Builds a plan from the visible set, checking that it is a valid subset.
    pub fn from_keep(num_patches: usize, mut keep: Vec<usize>) -> Result<Self> {
        keep.sort_unstable();
        keep.dedup();
        if keep.is_empty() || keep.last().is_some_and(|&k| k >= num_patches) {
            return Err(Error::Mask(format!("keep set {keep:?} invalid for {num_patches} patches")));
        }
        let mut visible = vec![false; num_patches];
        for &k in &keep {
            visible[k] = true;
        }
        let mask: Vec<usize> = (0..num_patches).filter(|&i| !visible[i]).collect();
        let mut restore = vec![0; num_patches];
        for (pos, &i) in keep.iter().chain(&mask).enumerate() {
            restore[i] = pos;
        }
        Ok(Self { keep_indices: keep, mask_indices: mask, restore_permutation: restore })
    }

    /// Checks the partition and inverse-permutation invariants.
    pub fn validate(&self, num_patches: usize) -> Result<()> {
        let rebuilt = Self::from_keep(num_patches, self.keep_indices.clone())?;
        if &rebuilt != self {
            return Err(Error::Mask("plan is not a consistent partition".into()));
        }
        Ok(())
    }
}

/// Number of visible patches for `n` patches at `mask_ratio`; at least one
/// patch stays hidden whenever `n >= 2`.
pub fn num_keep(n: usize, mask_ratio: f64) -> usize {
    let keep = (n as f64 * (1.0 - mask_ratio)).round() as usize;
    if n >= 2 {
        keep.min(n - 1)
    } else {
        keep
    }
}

/// Uniform random masking from a seed.
pub fn random_mask(num_patches: usize, mask_ratio: f64, seed: u64) -> Result<MaskPlan> {
    random_mask_with(num_patches, mask_ratio, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn random_mask_with(num_patches: usize, mask_ratio: f64, rng: &mut impl Rng) -> Result<MaskPlan> {
    if num_patches == 0 {
        return Err(Error::Mask("no patches to mask".into()));
    }
    if !(mask_ratio > 0.0 && mask_ratio < 1.0) {
        return Err(Error::Mask(format!("mask ratio {mask_ratio} outside (0, 1)")));
    }
    let keep = num_keep(num_patches, mask_ratio);
    if keep == 0 {
        return Err(Error::Mask(format!("ratio {mask_ratio} leaves no visible patch out of {num_patches}")));
    }
    let mut order: Vec<usize> = (0..num_patches).collect();
    order.shuffle(rng);
    order.truncate(keep);
    MaskPlan::from_keep(num_patches, order)
}

// ----- network --------------------------------------------------------------

/// Architecture of the student network: parameter handles plus the fixed
/// position tables. Parameter values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct DofaNet {
    pub cfg: ModelConfig,
    pub enc_generator: WeightGenerator,
    pub dec_generator: WeightGenerator,
    pub cls_token: ParamId,
    pub mask_token: ParamId,
    pub pos_embed: Tensor<f64>,
    pub dec_pos_embed: Tensor<f64>,
    pub encoder_blocks: Vec<TransformerBlock>,
    pub encoder_norm: LayerNorm,
    pub enc_to_dec: Linear,
    pub decoder_blocks: Vec<TransformerBlock>,
    pub decoder_norm: LayerNorm,
    /// Student-to-teacher feature projection used by the distillation term.
    pub distill_proj: Linear,
}

/// Generated weights for one wavelength list.
#[derive(Clone, Copy, Debug)]
pub struct DynamicWeights {
    pub embed: GeneratedWeights,
    pub head: GeneratedWeights,
}

impl DofaNet {
    pub fn new<T: Float>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let dd = cfg.decoder_dim;
        let grid = cfg.image_size / cfg.patch_size;
        let enc_generator = WeightGenerator::new(store, "enc_generator", cfg.generator(d, GeneratorRole::Embedding), rng)?;
        let dec_generator =
            WeightGenerator::new(store, "dec_generator", cfg.generator(dd, GeneratorRole::Reconstruction), rng)?;
        let cls_token = store.add("cls_token", trunc_normal(&[1, d], 0.02, rng), false);
        let mask_token = store.add("mask_token", trunc_normal(&[1, dd], 0.02, rng), false);
        let encoder_blocks = (0..cfg.depth)
            .map(|i| TransformerBlock::new(store, &format!("blocks.{i}"), &cfg.encoder_block(), Init::Xavier, rng))
            .collect();
        let encoder_norm = LayerNorm::new(store, "norm", d);
        let enc_to_dec = Linear::new(store, "decoder_embed", d, dd, Init::Xavier, rng);
        let decoder_blocks = (0..cfg.decoder_depth)
            .map(|i| TransformerBlock::new(store, &format!("decoder_blocks.{i}"), &cfg.decoder_block(), Init::Xavier, rng))
            .collect();
        let decoder_norm = LayerNorm::new(store, "decoder_norm", dd);
        let distill_proj = Linear::new(store, "distill_proj", d, cfg.teacher_dim, Init::Xavier, rng);
        Ok(Self {
            cfg: cfg.clone(),
            enc_generator,
            dec_generator,
            cls_token,
            mask_token,
            pos_embed: sincos_pos_embed(d, grid),
            dec_pos_embed: sincos_pos_embed(dd, grid),
            encoder_blocks,
            encoder_norm,
            enc_to_dec,
            decoder_blocks,
            decoder_norm,
            distill_proj,
        })
    }

    pub fn generate<T: Float>(&self, g: &mut Graph<T>, p: &Bound, lambdas: &WavelengthList) -> Result<DynamicWeights> {
        Ok(DynamicWeights {
            embed: self.enc_generator.forward(g, p, lambdas)?,
            head: self.dec_generator.forward(g, p, lambdas)?,
        })
    }

    /// `[cls; patches E] + pos`, `[N+1, D]`.
    pub fn embed<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: &Tensor<T>, embed: &GeneratedWeights) -> Result<Var> {
        let patches = patchify(x, self.cfg.patch_size)?;
        if patches.shape()[0] != self.cfg.num_patches() {
            return Err(Error::Shape(format!(
                "image {:?} does not match configured size {}",
                x.shape(),
                self.cfg.image_size
            )));
        }
        let rows = g.shape(embed.weight_rows)[0];
        if patches.shape()[1] != rows {
            return Err(Error::Shape(format!(
                "image has {} values per patch but weights were generated for {}",
                patches.shape()[1],
                rows
            )));
        }
        let patches = g.constant(patches);
        let z0 = g.linear(patches, embed.weight_rows, embed.bias)?;
        let tokens = g.concat_rows(&[p.get(self.cls_token), z0])?;
        let pos = g.constant(self.pos_embed.cast());
        g.add(tokens, pos)
    }

    /// Runs the encoder on the visible tokens (all tokens without a plan).
    pub fn encode_tokens<T: Float>(&self, g: &mut Graph<T>, p: &Bound, tokens: Var, plan: Option<&MaskPlan>) -> Result<Var> {
        let mut x = match plan {
            Some(plan) => {
                plan.validate(self.cfg.num_patches())?;
                let index: Vec<usize> = std::iter::once(0).chain(plan.keep_indices.iter().map(|&i| i + 1)).collect();
                g.gather_rows(tokens, &index)?
            }
            None => tokens,
        };
        for block in &self.encoder_blocks {
            x = block.forward(g, p, x)?;
        }
        self.encoder_norm.forward(g, p, x)
    }

    /// Decoder plus dynamic reconstruction head: `[N, C*P*P]` pixel predictions.
    pub fn decode<T: Float>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        latent: Var,
        plan: Option<&MaskPlan>,
        head: &GeneratedWeights,
    ) -> Result<Var> {
        let n = self.cfg.num_patches();
        let rows = g.shape(latent)[0];
        let expected = plan.map_or(n + 1, |pl| pl.keep_indices.len() + 1);
        if rows != expected {
            return Err(Error::Mask(format!("latent has {rows} tokens, plan expects {expected}")));
        }
        let x = self.enc_to_dec.forward(g, p, latent)?;
        let mut x = match plan {
            Some(plan) => {
                plan.validate(n)?;
                let cls = g.slice_rows(x, 0, 1)?;
                let visible = g.slice_rows(x, 1, rows)?;
                let masked = g.repeat_row(p.get(self.mask_token), plan.mask_indices.len())?;
                let seq = g.concat_rows(&[visible, masked])?;
                let seq = g.gather_rows(seq, &plan.restore_permutation)?;
                g.concat_rows(&[cls, seq])?
            }
            None => x,
        };
        let pos = g.constant(self.dec_pos_embed.cast());
        x = g.add(x, pos)?;
        for block in &self.decoder_blocks {
            x = block.forward(g, p, x)?;
        }
        let x = self.decoder_norm.forward(g, p, x)?;
        let patches = g.slice_rows(x, 1, n + 1)?;
        let pred = g.matmul_t(patches, head.weight_rows)?;
        g.add_row(pred, head.bias)
    }

    /// Mean of the patch tokens of an encoder output (class token excluded).
    pub fn pool<T: Float>(&self, g: &mut Graph<T>, latent: Var) -> Result<Var> {
        let rows = g.shape(latent)[0];
        let patches = g.slice_rows(latent, 1, rows)?;
        g.mean_rows(patches)
    }
}

/// Student network together with its parameter values.
#[derive(Clone, Debug)]
pub struct DofaModel<T: Float = f32> {
    pub net: DofaNet,
    pub store: ParamStore<T>,
}

fn check_channels(x: &SpectralImage, lambdas: &WavelengthList) -> Result<()> {
    if x.channels() != lambdas.len() {
        return Err(Error::Wavelength(format!(
            "{} wavelengths for a {}-channel image",
            lambdas.len(),
            x.channels()
        )));
    }
    Ok(())
}

impl<T: Float> DofaModel<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = DofaNet::new(cfg, &mut store, &mut rng)?;
        Ok(Self { net, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.cfg
    }

    pub fn num_parameters(&self) -> usize {
        self.store.numel()
    }

    pub fn cast<U: Float>(&self) -> DofaModel<U> {
        DofaModel { net: self.net.clone(), store: self.store.cast() }
    }

    /// Patch-embedding kernel for `lambdas`.
    pub fn dynamic_kernel(&self, lambdas: &WavelengthList) -> Result<DynamicKernel<T>> {
        crate::hypernet::generate_weights(lambdas, &self.net.enc_generator, &self.store)
    }

    /// Token sequence `[N+1, D]` via patchify and a matrix product.
    pub fn embed(&self, x: &SpectralImage, lambdas: &WavelengthList) -> Result<Tensor<T>> {
        check_channels(x, lambdas)?;
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let w = self.net.enc_generator.forward(&mut g, &p, lambdas)?;
        let out = self.net.embed(&mut g, &p, &x.data.cast(), &w)?;
        Ok(g.value(out).clone())
    }

    /// Same as [`Self::embed`] but through a direct stride-`P` convolution.
    pub fn embed_by_conv(&self, x: &SpectralImage, lambdas: &WavelengthList) -> Result<Tensor<T>> {
        check_channels(x, lambdas)?;
        let kernel = self.dynamic_kernel(lambdas)?;
        let z0 = conv_patch_embed(&x.data.cast(), &kernel)?;
        let (n, d) = z0.dims2()?;
        let cls = self.store.value(self.net.cls_token);
        let pos: Tensor<T> = self.net.pos_embed.cast();
        let mut data = Vec::with_capacity((n + 1) * d);
        data.extend_from_slice(cls.data());
        data.extend_from_slice(z0.data());
        for (v, &pe) in data.iter_mut().zip(pos.data()) {
            *v += pe;
        }
        Tensor::new(vec![n + 1, d], data)
    }

    /// Encoder output for the visible tokens, `[N_keep + 1, D]`.
    pub fn encode(&self, x: &SpectralImage, lambdas: &WavelengthList, plan: Option<&MaskPlan>) -> Result<Tensor<T>> {
        check_channels(x, lambdas)?;
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let w = self.net.enc_generator.forward(&mut g, &p, lambdas)?;
        let tokens = self.net.embed(&mut g, &p, &x.data.cast(), &w)?;
        let out = self.net.encode_tokens(&mut g, &p, tokens, plan)?;
        Ok(g.value(out).clone())
    }

    /// Per-patch pixel predictions `[N, C*P*P]` from an encoder output.
    pub fn decode_reconstruct(&self, latent: &Tensor<T>, plan: Option<&MaskPlan>, lambdas: &WavelengthList) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let head = self.net.dec_generator.forward(&mut g, &p, lambdas)?;
        let latent = g.constant(latent.clone());
        let out = self.net.decode(&mut g, &p, latent, plan, &head)?;
        Ok(g.value(out).clone())
    }

    /// Mean-pooled patch features of the unmasked encoder, `[D]`.
    pub fn features(&self, x: &SpectralImage) -> Result<Vec<T>> {
        Ok(self.features_batch(&[x])?.remove(0))
    }

    /// Features for many images. Weights are generated once per distinct
    /// wavelength list.
    pub fn features_batch(&self, xs: &[&SpectralImage]) -> Result<Vec<Vec<T>>> {
        let mut cache: Vec<(&WavelengthList, Arc<Tensor<T>>, Arc<Tensor<T>>)> = Vec::new();
        let mut out = Vec::with_capacity(xs.len());
        for x in xs {
            let k = match cache.iter().position(|(l, _, _)| *l == &x.wavelengths) {
                Some(k) => k,
                None => {
                    let mut g = Graph::new();
                    let p = self.store.bind(&mut g, false);
                    let w = self.net.enc_generator.forward(&mut g, &p, &x.wavelengths)?;
                    cache.push((&x.wavelengths, Arc::new(g.value(w.weight_rows).clone()), Arc::new(g.value(w.bias).clone())));
                    cache.len() - 1
                }
            };
            let mut g = Graph::new();
            let p = self.store.bind(&mut g, false);
            let w = GeneratedWeights { weight_rows: g.leaf(cache[k].1.clone(), false), bias: g.leaf(cache[k].2.clone(), false) };
            let tokens = self.net.embed(&mut g, &p, &x.data.cast(), &w)?;
            let latent = self.net.encode_tokens(&mut g, &p, tokens, None)?;
            let pooled = self.net.pool(&mut g, latent)?;
            out.push(g.value(pooled).data().to_vec());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn patchify_shapes() {
        let x = Tensor::<f32>::zeros(&[2, 32, 32]);
        assert_eq!(patchify(&x, 16).unwrap().shape(), &[4, 512]);
        let x = Tensor::<f32>::zeros(&[3, 224, 224]);
        assert_eq!(patchify(&x, 16).unwrap().shape()[0], 196);
        let x = Tensor::<f32>::zeros(&[3, 30, 32]);
        assert!(patchify(&x, 16).is_err());
    }

    #[test]
    fn patch_layout_is_channel_major() {
        let data: Vec<f64> = (0..2 * 4 * 4).map(|v| v as f64).collect();
        let x = Tensor::<f64>::new(vec![2, 4, 4], data).unwrap();
        let p = patchify(&x, 2).unwrap();
        // patch 1 = grid (0, 1); channel 0 rows 0..2, cols 2..4, then channel 1
        assert_eq!(&p.data()[8..16], &[2.0, 3.0, 6.0, 7.0, 18.0, 19.0, 22.0, 23.0]);
    }

    proptest! {
        #[test]
        fn unpatchify_inverts_patchify(c in 1usize..5, grid in 1usize..4, patch in 1usize..5, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = grid * patch;
            let data: Vec<f32> = (0..c * h * h).map(|_| rng.random::<f32>()).collect();
            let x = Tensor::new(vec![c, h, h], data).unwrap();
            let back = unpatchify(&patchify(&x, patch).unwrap(), c, h, h, patch).unwrap();
            prop_assert_eq!(back, x);
        }

        #[test]
        fn mask_plan_partitions(n in 1usize..300, ratio in 0.05f64..0.95, seed in any::<u64>()) {
            match random_mask(n, ratio, seed) {
                Ok(plan) => {
                    prop_assert_eq!(plan.keep_indices.len() + plan.mask_indices.len(), n);
                    prop_assert_eq!(plan.keep_indices.len(), num_keep(n, ratio));
                    let seq: Vec<usize> = plan.keep_indices.iter().chain(&plan.mask_indices).copied().collect();
                    for i in 0..n {
                        prop_assert_eq!(seq[plan.restore_permutation[i]], i);
                    }
                    if n >= 2 {
                        prop_assert!(!plan.mask_indices.is_empty());
                    }
                }
                Err(Error::Mask(_)) => prop_assert_eq!(num_keep(n, ratio), 0),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }
    }

    #[test]
    fn mask_counts_at_base_scale() {
        let plan = random_mask(196, 0.75, 3).unwrap();
        assert_eq!(plan.keep_indices.len(), 49);
        assert_eq!(plan.mask_indices.len(), 147);
        assert_eq!(plan, random_mask(196, 0.75, 3).unwrap());
    }

    #[test]
    fn single_patch_cannot_be_masked() {
        assert!(matches!(random_mask(1, 0.75, 0), Err(Error::Mask(_))));
    }

    #[test]
    fn inconsistent_plans_are_rejected() {
        let mut plan = random_mask(4, 0.75, 1).unwrap();
        plan.restore_permutation.swap(0, 1);
        assert!(plan.validate(4).is_err());
        assert!(random_mask(4, 0.75, 1).unwrap().validate(5).is_err());
    }

    #[test]
    fn pos_embed_class_row_is_zero() {
        let pe = sincos_pos_embed(16, 2);
        assert_eq!(pe.shape(), &[5, 16]);
        assert!(pe.data()[..16].iter().all(|&v| v == 0.0));
        // patch (0,0): sin(0)=0 then cos(0)=1 on both axes
        assert_eq!(pe.get(&[1, 0]), 0.0);
        assert_eq!(pe.get(&[1, 4]), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::desk().validate().is_ok());
        assert!(ModelConfig::base().validate().is_ok());
        assert!(ModelConfig { image_size: 40, ..ModelConfig::desk() }.validate().is_err());
        assert!(ModelConfig { mask_ratio: 1.0, ..ModelConfig::desk() }.validate().is_err());
        assert!(ModelConfig { num_heads: 3, ..ModelConfig::desk() }.validate().is_err());
    }
}
