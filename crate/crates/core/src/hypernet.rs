//! Wavelength-conditioned weight generation.
//!
//! Each input channel is described only by its center wavelength. The
//! wavelengths are lifted with a sine-cosine encoding, refined by a residual
//! two-layer MLP, mixed with learnable query tokens by one transformer layer,
//! and finally mapped to a `P x P x D` block of projection weights per channel.
//! The same parameters therefore serve any number of channels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{trunc_normal, Bound, Init, Linear, ParamId, ParamStore, TransformerBlock, TransformerBlockConfig};
use crate::tensor::{Float, Tensor};

/// Wavelength assigned to every SAR channel, in micrometers.
pub const SAR_WAVELENGTH: f64 = 3.75;

/// Red, green and blue center wavelengths (µm), in that channel order.
pub const RGB_WAVELENGTHS: [f64; 3] = [0.64, 0.56, 0.48];

/// Center wavelengths of an image's channels, in micrometers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WavelengthList(Vec<f64>);

impl WavelengthList {
    /// Rejects empty lists and any value that is not finite and positive.
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::Wavelength("at least one channel is required".into()));
        }
        if let Some((i, v)) = lambdas.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Wavelength(format!("channel {i} has wavelength {v}")));
        }
        Ok(Self(lambdas))
    }

    pub fn rgb() -> Self {
        Self(RGB_WAVELENGTHS.to_vec())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Channels reordered so that output channel `i` is input channel `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self(perm.iter().map(|&i| self.0[i]).collect())
    }
}

impl TryFrom<Vec<f64>> for WavelengthList {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WavelengthList> for Vec<f64> {
    fn from(w: WavelengthList) -> Self {
        w.0
    }
}

/// `out[i, 2k] = sin(l_i / 10000^(2k/dim))`, `out[i, 2k+1] = cos(...)`.
///
/// Only finiteness is checked, so corner cases such as `l = 0` can be probed.
pub fn encode_wavelengths<T: Float>(lambdas: &[f64], dim: usize) -> Result<Tensor<T>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Config(format!("wavelength encoding width must be even, got {dim}")));
    }
    if let Some(v) = lambdas.iter().find(|v| !v.is_finite()) {
        return Err(Error::Wavelength(format!("non-finite wavelength {v}")));
    }
    let mut data = Vec::with_capacity(lambdas.len() * dim);
    for &l in lambdas {
        for k in 0..dim / 2 {
            let arg = l / 10000f64.powf((2 * k) as f64 / dim as f64);
            data.push(T::from_f64_lossy(arg.sin()));
            data.push(T::from_f64_lossy(arg.cos()));
        }
    }
    Tensor::new(vec![lambdas.len(), dim], data)
}

/// Where a generator's output is consumed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorRole {
    /// Patch embedding: kernel `[D, C, P, P]` plus one bias of size `D`
    /// read from the bias token.
    Embedding,
    /// Reconstruction head: `[D_dec, C*P*P]` projection with one bias block of
    /// `P*P` per channel read from the wavelength tokens.
    Reconstruction,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub wave_dim: usize,
    pub num_queries: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
    pub patch_size: usize,
    /// Embedding width `D` (or `D_dec` for a reconstruction head).
    pub out_dim: usize,
    pub role: GeneratorRole,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.wave_dim % 2 != 0 {
            return Err(Error::Config(format!("wave_dim {} must be even", self.wave_dim)));
        }
        self.block_config().validate()?;
        if self.patch_size == 0 || self.out_dim == 0 {
            return Err(Error::Config("patch_size and out_dim must be positive".into()));
        }
        Ok(())
    }

    fn block_config(&self) -> TransformerBlockConfig {
        TransformerBlockConfig {
            embed_dim: self.wave_dim,
            num_heads: self.num_heads,
            mlp_ratio: self.mlp_ratio,
            depth: 1,
        }
    }

    pub fn patch_area(&self) -> usize {
        self.patch_size * self.patch_size
    }
}

/// Parameters of one weight generator.
#[derive(Clone, Debug)]
pub struct WeightGenerator {
    pub cfg: GeneratorConfig,
    pub fc1: Linear,
    pub fc2: Linear,
    pub query_tokens: ParamId,
    pub bias_token: ParamId,
    pub encoder: TransformerBlock,
    pub fc_weight: Linear,
    pub fc_bias: Linear,
}

/// Generated weights as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct GeneratedWeights {
    /// `[C*P*P, out_dim]`; row `c*P*P + p*P + q` holds the weights that pixel
    /// `(p, q)` of channel `c` contributes to each output feature.
    pub weight_rows: Var,
    /// `[out_dim]` for embedding, `[C*P*P]` for reconstruction.
    pub bias: Var,
}

impl WeightGenerator {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, cfg: GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let dl = cfg.wave_dim;
        let init = Init::TruncNormal;
        let fc1 = Linear::new(store, &format!("{name}.fc1"), dl, dl, init, rng);
        let fc2 = Linear::new(store, &format!("{name}.fc2"), dl, dl, init, rng);
        let query_tokens = store.add(format!("{name}.query_tokens"), trunc_normal(&[cfg.num_queries, dl], 0.02, rng), false);
        let bias_token = store.add(format!("{name}.bias_token"), trunc_normal(&[1, dl], 0.02, rng), false);
        let encoder = TransformerBlock::new(store, &format!("{name}.encoder"), &cfg.block_config(), init, rng);
        let fc_weight = Linear::new(store, &format!("{name}.fc_weight"), dl, cfg.patch_area() * cfg.out_dim, init, rng);
        let bias_width = match cfg.role {
            GeneratorRole::Embedding => cfg.out_dim,
            GeneratorRole::Reconstruction => cfg.patch_area(),
        };
        let fc_bias = Linear::new(store, &format!("{name}.fc_bias"), dl, bias_width, init, rng);
        Ok(Self { cfg, fc1, fc2, query_tokens, bias_token, encoder, fc_weight, fc_bias })
    }

    /// Records weight generation for `lambdas` on the graph.
    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, lambdas: &WavelengthList) -> Result<GeneratedWeights> {
        let c = lambdas.len();
        let area = self.cfg.patch_area();
        let enc = g.constant(encode_wavelengths(lambdas.as_slice(), self.cfg.wave_dim)?);
        let h = self.fc1.forward(g, p, enc)?;
        let h = g.relu(h);
        let h = self.fc2.forward(g, p, h)?;
        let h = g.relu(h);
        let refined = g.add(h, enc)?;

        let seq = g.concat_rows(&[refined, p.get(self.query_tokens), p.get(self.bias_token)])?;
        let mixed = self.encoder.forward(g, p, seq)?;
        let wave_out = g.slice_rows(mixed, 0, c)?;
        let wave_out = g.add(wave_out, refined)?;

        let m_w = self.fc_weight.forward(g, p, wave_out)?;
        let weight_rows = g.reshape(m_w, &[c * area, self.cfg.out_dim])?;
        let bias = match self.cfg.role {
            GeneratorRole::Embedding => {
                let last = c + self.cfg.num_queries;
                let bias_out = g.slice_rows(mixed, last, last + 1)?;
                let b = self.fc_bias.forward(g, p, bias_out)?;
                g.reshape(b, &[self.cfg.out_dim])?
            }
            GeneratorRole::Reconstruction => {
                let b = self.fc_bias.forward(g, p, wave_out)?;
                g.reshape(b, &[c * area])?
            }
        };
        Ok(GeneratedWeights { weight_rows, bias })
    }

    /// Every parameter owned by this generator.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![
            self.fc1.weight,
            self.fc1.bias,
            self.fc2.weight,
            self.fc2.bias,
            self.query_tokens,
            self.bias_token,
        ];
        let b = &self.encoder;
        for lin in [&b.attn.q, &b.attn.k, &b.attn.v, &b.attn.proj, &b.mlp.fc1, &b.mlp.fc2] {
            ids.push(lin.weight);
            ids.push(lin.bias);
        }
        ids.extend([b.norm1.gamma, b.norm1.beta, b.norm2.gamma, b.norm2.beta]);
        ids.extend([self.fc_weight.weight, self.fc_weight.bias, self.fc_bias.weight, self.fc_bias.bias]);
        ids
    }
}

/// Patch-embedding weights generated for one wavelength list.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicKernel<T: Float = f32> {
    /// `[D, C, P, P]`
    pub kernel: Tensor<T>,
    /// `[D]`
    pub bias: Tensor<T>,
}

impl<T: Float> DynamicKernel<T> {
    /// Builds the convolution kernel from `[C*P*P, D]` weight rows.
    pub fn from_rows(rows: &Tensor<T>, bias: Tensor<T>, channels: usize, patch: usize) -> Result<Self> {
        let (r, d) = rows.dims2()?;
        let area = patch * patch;
        if r != channels * area {
            return Err(Error::Shape(format!("{r} weight rows for {channels} channels of {patch}x{patch}")));
        }
        let mut kernel = Tensor::zeros(&[d, channels, patch, patch]);
        let src = rows.data();
        let dst = kernel.data_mut();
        for row in 0..r {
            // row = c*area + p*patch + q; kernel offset = ((o*C + c)*area + p*patch + q)
            for o in 0..d {
                dst[o * channels * area + row] = src[row * d + o];
            }
        }
        Ok(Self { kernel, bias })
    }

    pub fn channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    /// `[C*P*P, D]` matrix view of the kernel, the inverse of [`Self::from_rows`].
    pub fn to_rows(&self) -> Tensor<T> {
        let s = self.kernel.shape();
        let (d, rows) = (s[0], s[1] * s[2] * s[3]);
        let mut out = Tensor::zeros(&[rows, d]);
        for o in 0..d {
            for row in 0..rows {
                out.data_mut()[row * d + o] = self.kernel.data()[o * rows + row];
            }
        }
        out
    }
}

/// Generates the patch-embedding kernel for `lambdas` outside of training.
pub fn generate_weights<T: Float>(
    lambdas: &WavelengthList,
    generator: &WeightGenerator,
    store: &ParamStore<T>,
) -> Result<DynamicKernel<T>> {
    if generator.cfg.role != GeneratorRole::Embedding {
        return Err(Error::Config("generate_weights needs an embedding generator".into()));
    }
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let out = generator.forward(&mut g, &p, lambdas)?;
    DynamicKernel::from_rows(
        g.value(out.weight_rows),
        g.value(out.bias).clone(),
        lambdas.len(),
        generator.cfg.patch_size,
    )
}

/// Generates the reconstruction head for `lambdas`: weight `[D_dec, C*P*P]`
/// and bias `[C*P*P]`, with channel `c` occupying columns `c*P*P..(c+1)*P*P`.
pub fn generate_decoder_weights<T: Float>(
    lambdas: &WavelengthList,
    generator: &WeightGenerator,
    store: &ParamStore<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if generator.cfg.role != GeneratorRole::Reconstruction {
        return Err(Error::Config("generate_decoder_weights needs a reconstruction generator".into()));
    }
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let out = generator.forward(&mut g, &p, lambdas)?;
    Ok((g.value(out.weight_rows).transpose2()?, g.value(out.bias).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn generator(role: GeneratorRole, patch: usize, out_dim: usize) -> (ParamStore<f64>, WeightGenerator) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = GeneratorConfig { wave_dim: 32, num_queries: 4, num_heads: 4, mlp_ratio: 2.0, patch_size: patch, out_dim, role };
        let gen = WeightGenerator::new(&mut store, "gen", cfg, &mut rng).unwrap();
        (store, gen)
    }

    #[test]
    fn zero_wavelength_encodes_to_sin_cos_of_zero() {
        let v: Tensor<f64> = encode_wavelengths(&[0.0], 8).unwrap();
        for k in 0..4 {
            assert_eq!(v.get(&[0, 2 * k]), 0.0);
            assert_eq!(v.get(&[0, 2 * k + 1]), 1.0);
        }
    }

    #[test]
    fn sar_wavelength_first_entry() {
        let v: Tensor<f64> = encode_wavelengths(&[SAR_WAVELENGTH], 128).unwrap();
        // sin(3.75) = -0.571561318...
        assert!((v.get(&[0, 0]) - (-0.571_561_318_742_344_4)).abs() < 1e-12);
        assert!((v.get(&[0, 0]) - (-0.5716)).abs() < 1e-4);
    }

    #[test]
    fn duplicate_wavelengths_give_identical_rows() {
        let v: Tensor<f64> = encode_wavelengths(&[0.56, 1.61, 0.56], 16).unwrap();
        assert_eq!(v.rows(0, 1).unwrap(), v.rows(2, 3).unwrap());
    }

    #[test]
    fn odd_width_and_non_finite_are_rejected() {
        assert!(matches!(encode_wavelengths::<f32>(&[1.0], 7), Err(Error::Config(_))));
        assert!(matches!(encode_wavelengths::<f32>(&[f64::NAN], 8), Err(Error::Wavelength(_))));
    }

    #[test]
    fn wavelength_list_validation() {
        assert!(WavelengthList::new(vec![]).is_err());
        assert!(WavelengthList::new(vec![0.5, 0.0]).is_err());
        assert!(WavelengthList::new(vec![0.5, -1.0]).is_err());
        assert!(WavelengthList::new(vec![f64::INFINITY]).is_err());
        assert!(WavelengthList::new(vec![SAR_WAVELENGTH, SAR_WAVELENGTH]).is_ok());
    }

    #[test]
    fn kernel_and_bias_shapes() {
        let (store, gen) = generator(GeneratorRole::Embedding, 4, 8);
        let k = generate_weights(&WavelengthList::rgb(), &gen, &store).unwrap();
        assert_eq!(k.kernel.shape(), &[8, 3, 4, 4]);
        assert_eq!(k.bias.shape(), &[8]);
        assert_eq!(k.to_rows(), {
            let rows = k.to_rows();
            DynamicKernel::from_rows(&rows, k.bias.clone(), 3, 4).unwrap().to_rows()
        });
    }

    #[test]
    fn decoder_shapes() {
        let (store, gen) = generator(GeneratorRole::Reconstruction, 4, 6);
        let (w, b) = generate_decoder_weights(&WavelengthList::new(vec![3.75, 3.75]).unwrap(), &gen, &store).unwrap();
        assert_eq!(w.shape(), &[6, 32]);
        assert_eq!(b.shape(), &[32]);
    }

    #[test]
    fn roles_are_checked() {
        let (store, gen) = generator(GeneratorRole::Reconstruction, 2, 4);
        assert!(generate_weights(&WavelengthList::rgb(), &gen, &store).is_err());
    }

    #[test]
    fn bit_identical_on_repeat() {
        let (store, gen) = generator(GeneratorRole::Embedding, 2, 4);
        let l = WavelengthList::new(vec![0.49, 0.842, 2.19]).unwrap();
        assert_eq!(generate_weights(&l, &gen, &store).unwrap(), generate_weights(&l, &gen, &store).unwrap());
    }
}
