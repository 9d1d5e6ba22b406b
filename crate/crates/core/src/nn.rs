//! Parameters and transformer building blocks.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autograd::{Graph, Gradients, Var};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// A named trainable tensor with its gradient buffer.
#[derive(Clone, Debug)]
pub struct Parameter<T: Float = f32> {
    pub name: String,
    pub value: Arc<Tensor<T>>,
    pub grad: Tensor<T>,
    /// Whether decoupled weight decay applies (false for biases, norms, tokens).
    pub decay: bool,
}

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Owns every parameter of a model, keyed by unique dot-separated names.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Float = f32> {
    params: Vec<Parameter<T>>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, decay: bool) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name, value: Arc::new(value), grad, decay });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    /// Mutable access to a value; clones the tensor if a graph still shares it.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter {} has shape {:?}, got {:?}",
                p.name,
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = Arc::new(value);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Registers every parameter as a graph leaf.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        Bound { vars: self.params.iter().map(|p| g.leaf(p.value.clone(), trainable)).collect() }
    }

    /// Adds the gradients found in `grads` to the parameter grad buffers.
    pub fn accumulate_grads(&mut self, bound: &Bound, grads: &Gradients<T>) {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            if let Some(g) = grads.get(v) {
                for (o, &x) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *o += x;
                }
            }
        }
    }

    /// Same parameters in another precision; gradients are reset.
    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: Arc::new(p.value.cast()),
                    grad: Tensor::zeros(p.value.shape()),
                    decay: p.decay,
                })
                .collect(),
        }
    }
}

/// Graph leaves for every parameter of a store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

// ----- initialization ------------------------------------------------------

/// Normal(0, std) samples, redrawn outside two standard deviations.
pub fn trunc_normal<T: Float>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = normal.sample(rng);
            if z.abs() <= 2.0 {
                break T::from_f64_lossy(z * std);
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("trunc_normal shape")
}

/// Glorot/Xavier uniform for a `[fan_in, fan_out]` matrix.
pub fn xavier_uniform<T: Float>(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a).expect("xavier bounds");
    let data = (0..fan_in * fan_out).map(|_| T::from_f64_lossy(dist.sample(rng))).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("xavier shape")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    TruncNormal,
    Xavier,
}

// ----- layers -------------------------------------------------------------

/// `y = x W + b`, `W` stored as `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let w = match init {
            Init::TruncNormal => trunc_normal(&[in_dim, out_dim], 0.02, rng),
            Init::Xavier => xavier_uniform(in_dim, out_dim, rng),
        };
        let weight = store.add(format!("{name}.weight"), w, true);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]), false);
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.linear(x, p.get(self.weight), p.get(self.bias))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.weight"), Tensor::full(&[dim], T::one()), false);
        let beta = store.add(format!("{name}.bias"), Tensor::zeros(&[dim]), false);
        Self { gamma, beta }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, p.get(self.gamma), p.get(self.beta), LAYER_NORM_EPS)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TransformerBlockConfig {
    pub embed_dim: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
    pub depth: usize,
}

impl TransformerBlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.num_heads
            )));
        }
        if !(self.mlp_ratio > 0.0) {
            return Err(Error::Config(format!("mlp_ratio must be positive, got {}", self.mlp_ratio)));
        }
        Ok(())
    }

    pub fn hidden_dim(&self) -> usize {
        ((self.embed_dim as f64) * self.mlp_ratio).round().max(1.0) as usize
    }
}

/// Multi-head scaled dot-product attention with separate q/k/v/output projections.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub proj: Linear,
    pub num_heads: usize,
}

impl Attention {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        num_heads: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, init, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, init, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, init, rng),
            proj: Linear::new(store, &format!("{name}.proj"), dim, dim, init, rng),
            num_heads,
        }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, q: Var, k: Var, v: Var) -> Result<Var> {
        let q = self.q.forward(g, p, q)?;
        let k = self.k.forward(g, p, k)?;
        let v = self.v.forward(g, p, v)?;
        let mixed = attend(g, q, k, v, self.num_heads)?;
        self.proj.forward(g, p, mixed)
    }
}

/// Per-head `softmax(q k^T / sqrt(d_head)) v`, heads concatenated along columns.
/// Inputs are already projected.
pub fn attend<T: Float>(g: &mut Graph<T>, q: Var, k: Var, v: Var, num_heads: usize) -> Result<Var> {
    let (_, d) = g.value(q).dims2()?;
    if num_heads == 0 || d % num_heads != 0 {
        return Err(Error::Shape(format!("{d} columns cannot be split into {num_heads} heads")));
    }
    if g.shape(k) != g.shape(v) || g.shape(k)[1] != d {
        return Err(Error::Shape(format!(
            "attention q {:?} k {:?} v {:?}",
            g.shape(q),
            g.shape(k),
            g.shape(v)
        )));
    }
    let dh = d / num_heads;
    let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
    let mut heads = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = g.slice_cols(q, lo, hi)?;
        let kh = g.slice_cols(k, lo, hi)?;
        let vh = g.slice_cols(v, lo, hi)?;
        let scores = g.matmul_t(qh, kh)?;
        let scores = g.scale(scores, scale);
        let weights = g.softmax_rows(scores)?;
        heads.push(g.matmul(weights, vh)?);
    }
    if heads.len() == 1 {
        Ok(heads[0])
    } else {
        g.concat_cols(&heads)
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, p, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, p, h)
    }
}

/// Pre-norm transformer block: `x + attn(ln(x))`, then `x + mlp(ln(x))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
    pub dim: usize,
}

impl TransformerBlock {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &TransformerBlockConfig,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let d = cfg.embed_dim;
        let hidden = cfg.hidden_dim();
        Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d),
            attn: Attention::new(store, &format!("{name}.attn"), d, cfg.num_heads, init, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d),
            mlp: Mlp {
                fc1: Linear::new(store, &format!("{name}.mlp.fc1"), d, hidden, init, rng),
                fc2: Linear::new(store, &format!("{name}.mlp.fc2"), hidden, d, init, rng),
            },
            dim: d,
        }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let (_, d) = g.value(x).dims2()?;
        if d != self.dim {
            return Err(Error::Shape(format!("block expects width {}, got {d}", self.dim)));
        }
        let h = self.norm1.forward(g, p, x)?;
        let a = self.attn.forward(g, p, h, h, h)?;
        let x = g.add(x, a)?;
        let h = self.norm2.forward(g, p, x)?;
        let m = self.mlp.forward(g, p, h)?;
        g.add(x, m)
    }

    /// Output projections of both residual branches.
    pub fn residual_outputs(&self) -> [&Linear; 2] {
        [&self.attn.proj, &self.mlp.fc2]
    }
}
