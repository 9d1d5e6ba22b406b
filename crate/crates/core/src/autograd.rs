//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and returns the
//! gradient of that scalar with respect to every node that requires one.
//! Leaves hold their tensors behind an `Arc`, so binding a parameter is free.
//!
//! Row-wise operations (`layer_norm`, `softmax_rows`, `gather_rows`, ...)
//! work on rank-2 tensors; `layer_norm` also accepts higher ranks and
//! normalizes over the last axis.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Softmax(Var),
    Reshape(Var),
    Transpose(Var),
    GatherRows { x: Var, index: Vec<usize> },
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    Mean(Var),
    Cosine { a: Var, b: Var, eps: T },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Operation tape. One graph is built per forward pass and dropped after
/// the backward pass.
pub struct Graph<T: Float = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{what}: {a:?} vs {b:?}"))
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value: Arc::new(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Shared leaf. `requires_grad` decides whether gradients are tracked.
    pub fn leaf(&mut self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(Arc::new(value), false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> T {
        let t = self.value(v);
        assert_eq!(t.numel(), 1, "scalar() on a tensor of shape {:?}", t.shape());
        t.data()[0]
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    // ----- linear algebra -------------------------------------------------

    /// `a [m,k] x b [k,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a [m,k] x b^T` where `b` is `[n,k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (br, bc) = self.dims2(b)?;
        let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = Tensor::zeros(&[m, n]);
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            false,
            self.value(b).data(),
            trans_b,
            T::zero(),
            out.data_mut(),
        );
        Ok(self.push(out, Op::MatMul { a, b, trans_b }, &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose2()?;
        Ok(self.push(out, Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = (*self.nodes[x.0].value).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// `x W + b` for `x [n, din]`, `w [din, dout]`, `b [dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    // ----- elementwise ----------------------------------------------------

    fn zip_with(&self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(what, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds `row` (length = last dim of `x`) to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let tx = self.value(x);
        let tr = self.value(row);
        let d = *tx.shape().last().unwrap_or(&0);
        if tr.numel() != d || d == 0 {
            return Err(shape_err("add_row", tx.shape(), tr.shape()));
        }
        let mut out = tx.clone();
        for chunk in out.data_mut().chunks_mut(d) {
            for (o, &r) in chunk.iter_mut().zip(tr.data()) {
                *o += r;
            }
        }
        Ok(self.push(out, Op::AddRow(x, row), &[x, row]))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x), &[x])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let c = T::from_f64_lossy(GELU_C);
        let a = T::from_f64_lossy(GELU_A);
        let half = T::from_f64_lossy(0.5);
        let out = self.value(x).map(|v| half * v * (T::one() + (c * (v + a * v * v * v)).tanh()));
        self.push(out, Op::Gelu(x), &[x])
    }

    // ----- normalization ----------------------------------------------------

    /// Normalizes over the last axis, then applies `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let d = *tx.shape().last().unwrap_or(&0);
        let (tg, tb) = (self.value(gamma), self.value(beta));
        if d == 0 || tg.numel() != d || tb.numel() != d {
            return Err(Error::Shape(format!(
                "layer_norm over {:?} with gamma {:?} beta {:?}",
                tx.shape(),
                tg.shape(),
                tb.shape()
            )));
        }
        let eps = T::from_f64_lossy(eps);
        let inv_d = T::one() / T::from_usize(d).unwrap();
        let rows = tx.numel() / d;
        let mut out = Tensor::zeros(tx.shape());
        let mut xhat = vec![T::zero(); tx.numel()];
        let mut rstd = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &tx.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            let o = &mut out.data_mut()[r * d..(r + 1) * d];
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                o[j] = tg.data()[j] * h + tb.data()[j];
            }
        }
        Ok(self.push(out, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta]))
    }

    /// Row-wise softmax of a rank-2 tensor.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(c.max(1)).take(r) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        Ok(self.push(out, Op::Softmax(x), &[x]))
    }

    // ----- indexing ---------------------------------------------------------

    /// Selects rows of a rank-2 tensor; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= r {
                return Err(Error::Shape(format!("row index {i} out of range for {r} rows")));
            }
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(vec![index.len(), c], data)?;
        Ok(self.push(out, Op::GatherRows { x, index: index.to_vec() }, &[x]))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let index: Vec<usize> = (start..end).collect();
        self.gather_rows(x, &index)
    }

    /// Repeats a single-row tensor `n` times.
    pub fn repeat_row(&mut self, x: Var, n: usize) -> Result<Var> {
        self.gather_rows(x, &vec![0; n])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = match parts.first() {
            Some(&p) => self.dims2(p)?.1,
            None => return Err(Error::Shape("concat_rows of nothing".into())),
        };
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, pc) = self.dims2(p)?;
            if pc != c {
                return Err(shape_err("concat_rows", self.shape(parts[0]), self.shape(p)));
            }
            data.extend_from_slice(self.value(p).data());
            rows += r;
        }
        let out = Tensor::new(vec![rows, c], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Columns `[start, end)` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        if start >= end || end > c {
            return Err(Error::Shape(format!("column range {start}..{end} of {c}")));
        }
        let w = end - start;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + end]);
        }
        let out = Tensor::new(vec![r, w], data)?;
        Ok(self.push(out, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = match parts.first() {
            Some(&p) => self.dims2(p)?.0,
            None => return Err(Error::Shape("concat_cols of nothing".into())),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims2(p)?;
            if pr != r {
                return Err(shape_err("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let out = Tensor::new(vec![r, total], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    // ----- reductions -------------------------------------------------------

    /// Mean over rows: `[r, c] -> [1, c]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        if r == 0 {
            return Err(Error::Shape("mean_rows of an empty matrix".into()));
        }
        let inv = T::one() / T::from_usize(r).unwrap();
        let mut out = Tensor::zeros(&[1, c]);
        for row in self.value(x).data().chunks(c) {
            for (o, &v) in out.data_mut().iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in out.data_mut() {
            *o *= inv;
        }
        Ok(self.push(out, Op::MeanRows(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / T::from_usize(t.numel().max(1)).unwrap());
        self.push(out, Op::Mean(x), &[x])
    }

    /// Cosine similarity of two equally sized tensors, flattened:
    /// `a.b / (|a| |b| + eps)`.
    pub fn cosine(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.numel() != tb.numel() {
            return Err(shape_err("cosine", ta.shape(), tb.shape()));
        }
        let eps = T::from_f64_lossy(eps);
        let dot: T = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).sum();
        let na = ta.data().iter().map(|&x| x * x).sum::<T>().sqrt();
        let nb = tb.data().iter().map(|&x| x * x).sum::<T>().sqrt();
        let out = Tensor::scalar(dot / (na * nb + eps));
        Ok(self.push(out, Op::Cosine { a, b, eps }, &[a, b]))
    }

    /// Mean softmax cross-entropy of `logits [n, k]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = self.dims2(logits)?;
        if labels.len() != n || n == 0 {
            return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
        }
        let z = self.value(logits).data();
        let mut probs = vec![T::zero(); n * k];
        let mut loss = T::zero();
        for i in 0..n {
            let row = &z[i * k..(i + 1) * k];
            let y = labels[i];
            if y >= k {
                return Err(Error::Shape(format!("label {y} out of range for {k} classes")));
            }
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let s: T = row.iter().map(|&v| (v - m).exp()).sum();
            for j in 0..k {
                probs[i * k + j] = (row[j] - m).exp() / s;
            }
            loss += s.ln() + m - row[y];
        }
        let out = Tensor::scalar(loss / T::from_usize(n).unwrap());
        Ok(self.push(out, Op::CrossEntropy { logits, labels: labels.to_vec(), probs }, &[logits]))
    }

    // ----- backward -----------------------------------------------------

    /// Gradients of the single-element node `loss` with respect to every
    /// node that requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backward_node(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, i: usize, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = dy.shape()[1];
                if needs(a) {
                    // da = dy * op(b)^T
                    let mut da = Tensor::zeros(&[m, k]);
                    T::gemm(m, n, k, T::one(), dy.data(), false, tb.data(), !trans_b, T::zero(), da.data_mut());
                    accumulate(grads, *a, da);
                }
                if needs(b) {
                    if *trans_b {
                        // b is [n,k]: db = dy^T a
                        let mut db = Tensor::zeros(&[n, k]);
                        T::gemm(n, m, k, T::one(), dy.data(), true, ta.data(), false, T::zero(), db.data_mut());
                        accumulate(grads, *b, db);
                    } else {
                        let mut db = Tensor::zeros(&[k, n]);
                        T::gemm(k, m, n, T::one(), ta.data(), true, dy.data(), false, T::zero(), db.data_mut());
                        accumulate(grads, *b, db);
                    }
                }
            }
            Op::Add(a, b) => {
                if needs(a) {
                    accumulate(grads, *a, dy.clone());
                }
                if needs(b) {
                    accumulate(grads, *b, dy.clone());
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    accumulate(grads, *a, dy.clone());
                }
                if needs(b) {
                    accumulate(grads, *b, dy.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if needs(a) {
                    accumulate(grads, *a, elementwise(dy, tb, |g, y| g * y));
                }
                if needs(b) {
                    accumulate(grads, *b, elementwise(dy, ta, |g, x| g * x));
                }
            }
            Op::AddRow(x, row) => {
                if needs(x) {
                    accumulate(grads, *x, dy.clone());
                }
                if needs(row) {
                    let tr = self.value(*row);
                    let d = tr.numel();
                    let mut dr = Tensor::zeros(tr.shape());
                    for chunk in dy.data().chunks(d) {
                        for (o, &g) in dr.data_mut().iter_mut().zip(chunk) {
                            *o += g;
                        }
                    }
                    accumulate(grads, *row, dr);
                }
            }
            Op::Scale(x, s) => {
                if needs(x) {
                    let s = *s;
                    accumulate(grads, *x, dy.map(|g| g * s));
                }
            }
            Op::Relu(x) => {
                if needs(x) {
                    let dx = elementwise(dy, self.value(*x), |g, v| if v > T::zero() { g } else { T::zero() });
                    accumulate(grads, *x, dx);
                }
            }
            Op::Gelu(x) => {
                if needs(x) {
                    let c = T::from_f64_lossy(GELU_C);
                    let a = T::from_f64_lossy(GELU_A);
                    let half = T::from_f64_lossy(0.5);
                    let three = T::from_f64_lossy(3.0);
                    let dx = elementwise(dy, self.value(*x), |g, v| {
                        let t = (c * (v + a * v * v * v)).tanh();
                        let d = half * (T::one() + t)
                            + half * v * (T::one() - t * t) * c * (T::one() + three * a * v * v);
                        g * d
                    });
                    accumulate(grads, *x, dx);
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let tg = self.value(*gamma);
                let d = tg.numel();
                let rows = dy.numel() / d;
                if needs(gamma) {
                    let mut dg = Tensor::zeros(tg.shape());
                    for r in 0..rows {
                        for j in 0..d {
                            dg.data_mut()[j] += dy.data()[r * d + j] * xhat[r * d + j];
                        }
                    }
                    accumulate(grads, *gamma, dg);
                }
                if needs(beta) {
                    let mut db = Tensor::zeros(self.value(*beta).shape());
                    for chunk in dy.data().chunks(d) {
                        for (o, &g) in db.data_mut().iter_mut().zip(chunk) {
                            *o += g;
                        }
                    }
                    accumulate(grads, *beta, db);
                }
                if needs(x) {
                    let inv_d = T::one() / T::from_usize(d).unwrap();
                    let mut dx = Tensor::zeros(dy.shape());
                    for r in 0..rows {
                        let mut mean_g = T::zero();
                        let mut mean_gx = T::zero();
                        for j in 0..d {
                            let gh = dy.data()[r * d + j] * tg.data()[j];
                            mean_g += gh;
                            mean_gx += gh * xhat[r * d + j];
                        }
                        mean_g *= inv_d;
                        mean_gx *= inv_d;
                        for j in 0..d {
                            let gh = dy.data()[r * d + j] * tg.data()[j];
                            dx.data_mut()[r * d + j] =
                                rstd[r] * (gh - mean_g - xhat[r * d + j] * mean_gx);
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Softmax(x) => {
                if needs(x) {
                    let y = &node.value;
                    let c = y.shape()[1];
                    let mut dx = Tensor::zeros(y.shape());
                    for ((dxr, yr), gr) in dx
                        .data_mut()
                        .chunks_mut(c)
                        .zip(y.data().chunks(c))
                        .zip(dy.data().chunks(c))
                    {
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..c {
                            dxr[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Reshape(x) => {
                if needs(x) {
                    let shape = self.shape(*x).to_vec();
                    accumulate(grads, *x, dy.clone().reshape(&shape).expect("reshape grad"));
                }
            }
            Op::Transpose(x) => {
                if needs(x) {
                    accumulate(grads, *x, dy.transpose2().expect("transpose grad"));
                }
            }
            Op::GatherRows { x, index } => {
                if needs(x) {
                    let shape = self.shape(*x).to_vec();
                    let c = shape[1];
                    let mut dx = Tensor::zeros(&shape);
                    for (k, &src) in index.iter().enumerate() {
                        let g = &dy.data()[k * c..(k + 1) * c];
                        for (o, &v) in dx.data_mut()[src * c..(src + 1) * c].iter_mut().zip(g) {
                            *o += v;
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::ConcatRows(parts) => {
                let c = dy.shape()[1];
                let mut offset = 0;
                for p in parts {
                    let r = self.shape(*p)[0];
                    if needs(p) {
                        let part = Tensor::new(vec![r, c], dy.data()[offset * c..(offset + r) * c].to_vec())
                            .expect("concat grad");
                        accumulate(grads, *p, part);
                    }
                    offset += r;
                }
            }
            Op::SliceCols { x, start } => {
                if needs(x) {
                    let shape = self.shape(*x).to_vec();
                    let (r, c) = (shape[0], shape[1]);
                    let w = dy.shape()[1];
                    let mut dx = Tensor::zeros(&shape);
                    for i in 0..r {
                        dx.data_mut()[i * c + start..i * c + start + w]
                            .copy_from_slice(&dy.data()[i * w..(i + 1) * w]);
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = (dy.shape()[0], dy.shape()[1]);
                let mut offset = 0;
                for p in parts {
                    let w = self.shape(*p)[1];
                    if needs(p) {
                        let mut part = Tensor::zeros(&[r, w]);
                        for i in 0..r {
                            part.data_mut()[i * w..(i + 1) * w]
                                .copy_from_slice(&dy.data()[i * total + offset..i * total + offset + w]);
                        }
                        accumulate(grads, *p, part);
                    }
                    offset += w;
                }
            }
            Op::MeanRows(x) => {
                if needs(x) {
                    let shape = self.shape(*x).to_vec();
                    let inv = T::one() / T::from_usize(shape[0]).unwrap();
                    let mut dx = Tensor::zeros(&shape);
                    for row in dx.data_mut().chunks_mut(shape[1]) {
                        for (o, &g) in row.iter_mut().zip(dy.data()) {
                            *o = g * inv;
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Sum(x) => {
                if needs(x) {
                    accumulate(grads, *x, Tensor::full(self.shape(*x), dy.data()[0]));
                }
            }
            Op::Mean(x) => {
                if needs(x) {
                    let n = T::from_usize(self.value(*x).numel()).unwrap();
                    accumulate(grads, *x, Tensor::full(self.shape(*x), dy.data()[0] / n));
                }
            }
            Op::Cosine { a, b, eps } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let dot: T = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).sum();
                let na = ta.data().iter().map(|&x| x * x).sum::<T>().sqrt();
                let nb = tb.data().iter().map(|&x| x * x).sum::<T>().sqrt();
                let den = na * nb + *eps;
                let g = dy.data()[0];
                let tiny = T::min_positive_value();
                // d/da [dot / (|a||b| + eps)] = b/den - dot * |b| a / (|a| den^2)
                let grad_of = |this: &Tensor<T>, other: &Tensor<T>, n_this: T, n_other: T| {
                    let coef = dot * n_other / (n_this.max(tiny) * den * den);
                    let data = this
                        .data()
                        .iter()
                        .zip(other.data())
                        .map(|(&x, &y)| g * (y / den - coef * x))
                        .collect();
                    Tensor::new(this.shape().to_vec(), data).expect("cosine grad")
                };
                if needs(a) {
                    accumulate(grads, *a, grad_of(ta, tb, na, nb));
                }
                if needs(b) {
                    accumulate(grads, *b, grad_of(tb, ta, nb, na));
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                if needs(logits) {
                    let shape = self.shape(*logits).to_vec();
                    let (n, k) = (shape[0], shape[1]);
                    let scale = dy.data()[0] / T::from_usize(n).unwrap();
                    let mut dz = Tensor::new(shape, probs.clone()).expect("ce grad");
                    for (i, &y) in labels.iter().enumerate() {
                        dz.data_mut()[i * k + y] -= T::one();
                    }
                    for v in dz.data_mut() {
                        *v *= scale;
                    }
                    accumulate(grads, *logits, dz);
                }
            }
        }
    }
}

fn elementwise<T: Float>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("elementwise shapes")
}

fn accumulate<T: Float>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (o, &x) in existing.data_mut().iter_mut().zip(g.data()) {
                *o += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T: Float> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of `v`, or `None` when `v` does not influence the loss or
    /// does not require a gradient.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}
