//! Pretraining objectives: masked reconstruction, cosine distillation against a
//! frozen 3-channel teacher, and the generator warm-start loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::data::{modality, ModalitySpec, SpectralImage};
use crate::error::{Error, Result};
use crate::hypernet::{DynamicKernel, GeneratedWeights, WavelengthList, WeightGenerator};
use crate::model::{patchify, random_mask_with, sincos_pos_embed, DofaModel, DofaNet, MaskPlan, ModelConfig};
use crate::nn::{trunc_normal, xavier_uniform, Bound, Init, LayerNorm, ParamId, ParamStore, TransformerBlock};
use crate::tensor::{Float, Tensor};

/// Added to the product of norms in every cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub recon_mse: f64,
    pub distill_cos: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(recon_mse: f64, distill_cos: f64) -> Self {
        Self { recon_mse, distill_cos, total: recon_mse - distill_cos }
    }
}

// ----- teacher --------------------------------------------------------------

/// A plain ViT over 3-channel input with a fixed patch embedding.
#[derive(Clone, Debug)]
pub struct TeacherNet {
    pub patch_size: usize,
    pub image_size: usize,
    pub dim: usize,
    /// `[3*P*P, D_t]`, the same row layout as generated weights.
    pub patch_weight: ParamId,
    pub patch_bias: ParamId,
    pub cls_token: ParamId,
    pub pos_embed: Tensor<f64>,
    pub blocks: Vec<TransformerBlock>,
    pub norm: LayerNorm,
}

impl TeacherNet {
    pub fn new<T: Float>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.teacher_dim;
        let p = cfg.patch_size;
        let patch_weight = store.add("patch_embed.weight", xavier_uniform(3 * p * p, d, rng), true);
        let patch_bias = store.add("patch_embed.bias", trunc_normal(&[d], 0.02, rng), false);
        let cls_token = store.add("cls_token", trunc_normal(&[1, d], 0.02, rng), false);
        let blocks = (0..cfg.teacher_depth)
            .map(|i| TransformerBlock::new(store, &format!("blocks.{i}"), &cfg.teacher_block(), Init::Xavier, rng))
            .collect();
        let norm = LayerNorm::new(store, "norm", d);
        Ok(Self {
            patch_size: p,
            image_size: cfg.image_size,
            dim: d,
            patch_weight,
            patch_bias,
            cls_token,
            pos_embed: sincos_pos_embed(d, cfg.image_size / p),
            blocks,
            norm,
        })
    }

    /// Mean-pooled patch tokens after the final norm, `[D_t]`.
    pub fn features<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: &Tensor<T>) -> Result<Var> {
        if x.shape().len() != 3 || x.shape()[0] != 3 || x.shape()[1] != self.image_size || x.shape()[2] != self.image_size {
            return Err(Error::Shape(format!(
                "teacher expects [3, {s}, {s}], got {:?}",
                x.shape(),
                s = self.image_size
            )));
        }
        let patches = g.constant(patchify(x, self.patch_size)?);
        let z0 = g.linear(patches, p.get(self.patch_weight), p.get(self.patch_bias))?;
        let tokens = g.concat_rows(&[p.get(self.cls_token), z0])?;
        let pos = g.constant(self.pos_embed.cast());
        let mut h = g.add(tokens, pos)?;
        for b in &self.blocks {
            h = b.forward(g, p, h)?;
        }
        let h = self.norm.forward(g, p, h)?;
        let rows = g.shape(h)[0];
        let patch_tokens = g.slice_rows(h, 1, rows)?;
        let pooled = g.mean_rows(patch_tokens)?;
        g.reshape(pooled, &[self.dim])
    }
}

/// Frozen teacher: architecture plus parameter values.
#[derive(Clone, Debug)]
pub struct TeacherModel<T: Float = f32> {
    pub net: TeacherNet,
    pub store: ParamStore<T>,
}

impl<T: Float> TeacherModel<T> {
    /// Randomly initialized teacher.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = TeacherNet::new(cfg, &mut store, &mut rng)?;
        Ok(Self { net, store })
    }

    pub fn cast<U: Float>(&self) -> TeacherModel<U> {
        TeacherModel { net: self.net.clone(), store: self.store.cast() }
    }

    /// Patch-embedding kernel `[D_t, 3, P, P]` and bias.
    pub fn kernel(&self) -> Result<DynamicKernel<T>> {
        DynamicKernel::from_rows(
            self.store.value(self.net.patch_weight),
            self.store.value(self.net.patch_bias).clone(),
            3,
            self.net.patch_size,
        )
    }

    /// Replaces the patch embedding, e.g. to match a given generator.
    pub fn set_kernel(&mut self, kernel: &DynamicKernel<T>) -> Result<()> {
        self.store.set(self.net.patch_weight, kernel.to_rows())?;
        self.store.set(self.net.patch_bias, kernel.bias.clone())
    }

    pub fn features(&self, x: &SpectralImage) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let f = self.net.features(&mut g, &p, &x.data.cast())?;
        Ok(g.value(f).data().to_vec())
    }
}

// ----- proxy ----------------------------------------------------------------

/// Three-channel view of `x` for the teacher. Declared RGB bands are taken in
/// R, G, B order; SAR input repeats one randomly chosen channel. The result
/// carries the RGB wavelengths.
pub fn make_proxy(x: &SpectralImage, spec: &ModalitySpec, rng: &mut impl Rng) -> Result<SpectralImage> {
    let chans: [usize; 3] = if spec.is_sar {
        let c = rng.random_range(0..x.channels());
        [c; 3]
    } else if let Some(idx) = spec.rgb_indices {
        idx
    } else if x.channels() == 3 {
        [0, 1, 2]
    } else {
        return Err(Error::Config(format!(
            "modality {} has {} channels, no RGB bands and is not SAR",
            spec.name,
            x.channels()
        )));
    };
    if chans.iter().any(|&c| c >= x.channels()) {
        return Err(Error::Shape(format!("RGB indices {chans:?} out of range for {} channels", x.channels())));
    }
    let hw = x.height() * x.width();
    let mut data = Vec::with_capacity(3 * hw);
    for c in chans {
        data.extend_from_slice(x.channel(c));
    }
    let data = Tensor::new(vec![3, x.height(), x.width()], data)?;
    SpectralImage::new(data, WavelengthList::rgb(), x.modality.clone(), x.label)
}

// ----- loss terms -----------------------------------------------------------

/// Mean squared error over the masked patches of `plan`, averaged over
/// patches and elements.
pub fn reconstruction_loss<T: Float>(pred: &Tensor<T>, target: &Tensor<T>, plan: &MaskPlan) -> Result<f64> {
    if plan.mask_indices.is_empty() {
        return Err(Error::Mask("reconstruction loss over an empty mask set".into()));
    }
    squared_error_rows(pred, target, &plan.mask_indices)
}

/// Mean squared error over every patch.
pub fn reconstruction_loss_all<T: Float>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    let n = pred.shape().first().copied().unwrap_or(0);
    squared_error_rows(pred, target, &(0..n).collect::<Vec<_>>())
}

fn squared_error_rows<T: Float>(pred: &Tensor<T>, target: &Tensor<T>, rows: &[usize]) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    let (n, k) = pred.dims2()?;
    let mut acc = 0.0;
    for &r in rows {
        if r >= n {
            return Err(Error::Mask(format!("patch {r} out of range for {n}")));
        }
        for j in 0..k {
            let d = pred.data()[r * k + j].as_f64() - target.data()[r * k + j].as_f64();
            acc += d * d;
        }
    }
    Ok(acc / (rows.len() * k) as f64)
}

/// Graph form of the reconstruction term; `plan = None` averages over all patches.
pub fn reconstruction_term<T: Float>(g: &mut Graph<T>, pred: Var, target: &Tensor<T>, plan: Option<&MaskPlan>) -> Result<Var> {
    if g.shape(pred) != target.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", g.shape(pred), target.shape())));
    }
    let (pred, target) = match plan {
        Some(plan) => {
            if plan.mask_indices.is_empty() {
                return Err(Error::Mask("reconstruction loss over an empty mask set".into()));
            }
            let k = target.shape()[1];
            let mut rows = Vec::with_capacity(plan.mask_indices.len() * k);
            for &r in &plan.mask_indices {
                rows.extend_from_slice(&target.data()[r * k..(r + 1) * k]);
            }
            let t = Tensor::new(vec![plan.mask_indices.len(), k], rows)?;
            (g.gather_rows(pred, &plan.mask_indices)?, t)
        }
        None => (pred, target.clone()),
    };
    let t = g.constant(target);
    let diff = g.sub(pred, t)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean(sq))
}

pub fn cosine_similarity<T: Float>(a: &[T], b: &[T]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x.as_f64() * y.as_f64()).sum();
    let na = a.iter().map(|&x| x.as_f64().powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|&x| x.as_f64().powi(2)).sum::<f64>().sqrt();
    dot / (na * nb + COSINE_EPS)
}

/// `-cos(F_s W + b, F_t)` with `W: [D, D_t]`.
pub fn distillation_loss<T: Float>(student: &[T], teacher: &[T], weight: &Tensor<T>, bias: &Tensor<T>) -> Result<f64> {
    let (d, dt) = weight.dims2()?;
    if student.len() != d || teacher.len() != dt || bias.numel() != dt {
        return Err(Error::Shape(format!(
            "projection [{d}, {dt}] for student {} / teacher {} features",
            student.len(),
            teacher.len()
        )));
    }
    let s = Tensor::new(vec![1, d], student.to_vec())?;
    let mut proj = s.matmul(weight)?;
    for (o, &b) in proj.data_mut().iter_mut().zip(bias.data()) {
        *o += b;
    }
    Ok(-cosine_similarity(proj.data(), teacher))
}

// ----- composite ------------------------------------------------------------

/// Per-sample inputs of the composite objective.
pub struct SampleInputs<'a, T: Float> {
    pub image: &'a Tensor<T>,
    pub plan: &'a MaskPlan,
    pub proxy: &'a Tensor<T>,
}

/// Graph nodes of one sample's loss terms.
#[derive(Clone, Copy, Debug)]
pub struct SampleTerms {
    pub recon: Var,
    pub cos: Var,
}

/// Records both loss terms for one sample. `weights` must have been generated
/// for the image's wavelengths and `rgb` for the proxy's.
#[allow(clippy::too_many_arguments)]
pub fn sample_terms<T: Float>(
    g: &mut Graph<T>,
    student: &DofaNet,
    sp: &Bound,
    teacher: &TeacherNet,
    tp: &Bound,
    weights: &crate::model::DynamicWeights,
    rgb: &GeneratedWeights,
    input: &SampleInputs<'_, T>,
    recon_on_all_patches: bool,
) -> Result<SampleTerms> {
    let tokens = student.embed(g, sp, input.image, &weights.embed)?;
    let latent = student.encode_tokens(g, sp, tokens, Some(input.plan))?;
    let pred = student.decode(g, sp, latent, Some(input.plan), &weights.head)?;
    let target = patchify(input.image, student.cfg.patch_size)?;
    let recon = reconstruction_term(g, pred, &target, (!recon_on_all_patches).then_some(input.plan))?;

    let ptokens = student.embed(g, sp, input.proxy, rgb)?;
    let platent = student.encode_tokens(g, sp, ptokens, None)?;
    let fs = student.pool(g, platent)?;
    let fs = student.distill_proj.forward(g, sp, fs)?;
    let ft = teacher.features(g, tp, input.proxy)?;
    let cos = g.cosine(fs, ft, COSINE_EPS)?;
    Ok(SampleTerms { recon, cos })
}

/// `mean(recon) - mean(cos)` over samples, returning `(total, recon, cos)` nodes.
pub fn combine_terms<T: Float>(g: &mut Graph<T>, terms: &[SampleTerms]) -> Result<(Var, Var, Var)> {
    if terms.is_empty() {
        return Err(Error::Shape("no samples".into()));
    }
    let inv = T::one() / T::from_usize(terms.len()).unwrap();
    let mut recon = terms[0].recon;
    let mut cos = terms[0].cos;
    for t in &terms[1..] {
        recon = g.add(recon, t.recon)?;
        cos = g.add(cos, t.cos)?;
    }
    let recon = g.scale(recon, inv);
    let cos = g.scale(cos, inv);
    let total = g.sub(recon, cos)?;
    Ok((total, recon, cos))
}

/// Draws the mask plan and then the proxy for `x` from `rng`, in that order.
pub fn draw_sample<R: Rng>(x: &SpectralImage, cfg: &ModelConfig, rng: &mut R) -> Result<(MaskPlan, SpectralImage)> {
    let spec = modality(&x.modality)?;
    let plan = random_mask_with(cfg.num_patches(), cfg.mask_ratio, rng)?;
    let proxy = make_proxy(x, &spec, rng)?;
    Ok((plan, proxy))
}

/// Composite objective on one image: masked reconstruction of the full-channel
/// input minus the cosine between projected student and teacher features of
/// the unmasked RGB proxy. The image's modality must be built in.
pub fn composite_loss<T: Float>(
    x: &SpectralImage,
    model: &DofaModel<T>,
    teacher: &TeacherModel<T>,
    rng: &mut impl Rng,
) -> Result<LossBreakdown> {
    let (plan, proxy) = draw_sample(x, model.config(), rng)?;
    composite_loss_with(x, &plan, &proxy, model, teacher, false)
}

/// [`composite_loss`] with an explicit plan and proxy.
pub fn composite_loss_with<T: Float>(
    x: &SpectralImage,
    plan: &MaskPlan,
    proxy: &SpectralImage,
    model: &DofaModel<T>,
    teacher: &TeacherModel<T>,
    recon_on_all_patches: bool,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let sp = model.store.bind(&mut g, false);
    let tp = teacher.store.bind(&mut g, false);
    let t = composite_terms(&mut g, &model.net, &sp, &teacher.net, &tp, x, plan, proxy, recon_on_all_patches)?;
    Ok(LossBreakdown::new(g.scalar(t.recon).as_f64(), g.scalar(t.cos).as_f64()))
}

/// Composite terms for one image on an existing graph, generating all dynamic
/// weights from `sp`. Used for gradient checks.
#[allow(clippy::too_many_arguments)]
pub fn composite_terms<T: Float>(
    g: &mut Graph<T>,
    student: &DofaNet,
    sp: &Bound,
    teacher: &TeacherNet,
    tp: &Bound,
    x: &SpectralImage,
    plan: &MaskPlan,
    proxy: &SpectralImage,
    recon_on_all_patches: bool,
) -> Result<SampleTerms> {
    let weights = student.generate(g, sp, &x.wavelengths)?;
    let rgb = student.enc_generator.forward(g, sp, &proxy.wavelengths)?;
    let image = x.data.cast();
    let proxy_t = proxy.data.cast();
    let input = SampleInputs { image: &image, plan, proxy: &proxy_t };
    sample_terms(g, student, sp, teacher, tp, &weights, &rgb, &input, recon_on_all_patches)
}

// ----- generator warm start ---------------------------------------------------

fn check_generator_target<T: Float>(generator: &WeightGenerator, teacher: &DynamicKernel<T>, lambdas: &WavelengthList) -> Result<()> {
    let s = teacher.kernel.shape();
    let p = generator.cfg.patch_size;
    if s[0] != generator.cfg.out_dim || s[1] != lambdas.len() || s[2] != p || s[3] != p || teacher.bias.numel() != s[0] {
        return Err(Error::Shape(format!(
            "teacher kernel {:?} / bias {:?} vs generator output [{}, {}, {p}, {p}]",
            s,
            teacher.bias.shape(),
            generator.cfg.out_dim,
            lambdas.len()
        )));
    }
    Ok(())
}

/// Graph form of the warm-start loss: MSE of the generated kernel against the
/// teacher's plus MSE of the biases.
pub fn generator_init_term<T: Float>(
    g: &mut Graph<T>,
    p: &Bound,
    generator: &WeightGenerator,
    teacher: &DynamicKernel<T>,
    lambdas: &WavelengthList,
) -> Result<Var> {
    check_generator_target(generator, teacher, lambdas)?;
    let out = generator.forward(g, p, lambdas)?;
    let rows = g.constant(teacher.to_rows());
    let bias = g.constant(teacher.bias.clone());
    let dw = g.sub(out.weight_rows, rows)?;
    let dw = g.mul(dw, dw)?;
    let kernel_term = g.mean(dw);
    let db = g.sub(out.bias, bias)?;
    let db = g.mul(db, db)?;
    let bias_term = g.mean(db);
    g.add(kernel_term, bias_term)
}

pub fn generator_init_loss<T: Float>(
    generator: &WeightGenerator,
    store: &ParamStore<T>,
    teacher: &DynamicKernel<T>,
    lambdas: &WavelengthList,
) -> Result<f64> {
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let loss = generator_init_term(&mut g, &p, generator, teacher, lambdas)?;
    Ok(g.scalar(loss).as_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_sample;
    use crate::hypernet::generate_weights;
    use crate::model::random_mask;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn proxy_selects_rgb_bands() {
        let s2 = modality("sentinel2").unwrap();
        let x = synth_sample(&s2, 32, 32, 1, 10, &mut rng(1)).unwrap();
        let p = make_proxy(&x, &s2, &mut rng(2)).unwrap();
        assert_eq!(p.data.shape(), &[3, 32, 32]);
        assert_eq!(p.channel(0), x.channel(2));
        assert_eq!(p.channel(1), x.channel(1));
        assert_eq!(p.channel(2), x.channel(0));
        assert_eq!(p.wavelengths, WavelengthList::rgb());
    }

    #[test]
    fn sar_proxy_repeats_one_channel() {
        let s1 = modality("sentinel1").unwrap();
        let x = synth_sample(&s1, 32, 32, 0, 10, &mut rng(1)).unwrap();
        let mut seen = [false; 2];
        for seed in 0..20 {
            let p = make_proxy(&x, &s1, &mut rng(seed)).unwrap();
            assert_eq!(p.channel(0), p.channel(1));
            assert_eq!(p.channel(1), p.channel(2));
            let src = if p.channel(0) == x.channel(0) { 0 } else { 1 };
            assert_eq!(p.channel(0), x.channel(src));
            seen[src] = true;
        }
        assert!(seen[0] && seen[1]);
    }

    #[test]
    fn naip_proxy_is_identity() {
        let naip = modality("naip").unwrap();
        let x = synth_sample(&naip, 32, 32, 4, 10, &mut rng(3)).unwrap();
        assert_eq!(make_proxy(&x, &naip, &mut rng(0)).unwrap().data, x.data);
    }

    #[test]
    fn proxy_needs_rgb_or_sar() {
        let mut gf = modality("gaofen").unwrap();
        let x = synth_sample(&gf, 16, 16, 0, 2, &mut rng(0)).unwrap();
        gf.rgb_indices = None;
        assert!(make_proxy(&x, &gf, &mut rng(0)).is_err());
    }

    fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut r = rng(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn reconstruction_anchors() {
        let target = random_tensor(&[4, 6], 1);
        let plan = random_mask(4, 0.75, 0).unwrap();
        assert_eq!(reconstruction_loss(&target, &target, &plan).unwrap(), 0.0);
        let shifted = target.map(|v| v + 1.0);
        assert!((reconstruction_loss(&shifted, &target, &plan).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_matches_loop_and_graph() {
        let pred = random_tensor(&[16, 12], 2);
        let target = random_tensor(&[16, 12], 3);
        let plan = random_mask(16, 0.75, 5).unwrap();
        let mut acc = 0.0;
        for &i in &plan.mask_indices {
            for j in 0..12 {
                acc += (pred.get(&[i, j]) - target.get(&[i, j])).powi(2);
            }
        }
        let expected = acc / (plan.mask_indices.len() * 12) as f64;
        assert!((reconstruction_loss(&pred, &target, &plan).unwrap() - expected).abs() < 1e-6);

        let mut g = Graph::new();
        let pv = g.constant(pred.clone());
        let l = reconstruction_term(&mut g, pv, &target, Some(&plan)).unwrap();
        assert!((g.scalar(l) - expected).abs() < 1e-12);

        let mut shuffled = plan.clone();
        shuffled.mask_indices.reverse();
        assert!((reconstruction_loss(&pred, &target, &shuffled).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let t = random_tensor(&[2, 3], 0);
        let plan = MaskPlan::from_keep(2, vec![0, 1]).unwrap();
        assert!(matches!(reconstruction_loss(&t, &t, &plan), Err(Error::Mask(_))));
    }

    #[test]
    fn distillation_anchors() {
        let eye = Tensor::<f64>::eye(3);
        let zero = Tensor::<f64>::zeros(&[3]);
        let a = [1.0, 2.0, -0.5];
        let d = |t: &[f64]| distillation_loss(&a, t, &eye, &zero).unwrap();
        assert!((d(&a) + 1.0).abs() < 1e-8);
        assert!(d(&[2.0, -1.0, 0.0]).abs() < 1e-12);
        assert!((d(&[-1.0, -2.0, 0.5]) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn total_is_recon_minus_cos() {
        let b = LossBreakdown::new(0.37, -0.21);
        assert_eq!(b.total, 0.37 - -0.21);
    }

    #[test]
    fn composite_runs_and_is_consistent() {
        let cfg = ModelConfig::desk();
        let model = DofaModel::<f32>::new(&cfg, 1).unwrap();
        let teacher = TeacherModel::<f32>::new(&cfg, 2).unwrap();
        let s1 = modality("sentinel1").unwrap();
        let x = synth_sample(&s1, 32, 32, 0, 10, &mut rng(4)).unwrap();
        let b = composite_loss(&x, &model, &teacher, &mut rng(5)).unwrap();
        assert!(b.recon_mse >= 0.0 && b.distill_cos.abs() <= 1.0);
        assert_eq!(b.total, b.recon_mse - b.distill_cos);
        assert_eq!(b, composite_loss(&x, &model, &teacher, &mut rng(5)).unwrap());
    }

    #[test]
    fn generator_init_loss_is_zero_on_own_output() {
        let cfg = ModelConfig::desk();
        let model = DofaModel::<f64>::new(&cfg, 1).unwrap();
        let rgb = WavelengthList::rgb();
        let k = generate_weights(&rgb, &model.net.enc_generator, &model.store).unwrap();
        assert_eq!(generator_init_loss(&model.net.enc_generator, &model.store, &k, &rgb).unwrap(), 0.0);
        let bad = DynamicKernel { kernel: Tensor::zeros(&[8, 3, 16, 16]), bias: Tensor::zeros(&[8]) };
        assert!(generator_init_loss(&model.net.enc_generator, &model.store, &bad, &rgb).is_err());
    }
}
