use std::sync::Arc;

use dofa_core::autograd::Graph;
use dofa_core::gradcheck::{grad_check, GradCheckOptions};
use dofa_core::nn::{Attention, Init, LayerNorm, ParamStore, TransformerBlock, TransformerBlockConfig, LAYER_NORM_EPS};
use dofa_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Mat = Vec<Vec<f64>>;

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, v).unwrap()
}

fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    t(shape, &v)
}

fn to_mat(x: &Tensor<f64>) -> Mat {
    let (r, c) = x.dims2().unwrap();
    (0..r).map(|i| x.data()[i * c..(i + 1) * c].to_vec()).collect()
}

fn ref_linear(x: &Mat, w: &Tensor<f64>, b: &Tensor<f64>) -> Mat {
    let (din, dout) = w.dims2().unwrap();
    x.iter()
        .map(|row| {
            (0..dout)
                .map(|j| b.data()[j] + (0..din).map(|i| row[i] * w.data()[i * dout + j]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn ref_layer_norm(x: &Mat, g: &Tensor<f64>, b: &Tensor<f64>) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(i, v)| (v - mu) / (var + LAYER_NORM_EPS).sqrt() * g.data()[i] + b.data()[i])
                .collect()
        })
        .collect()
}

fn ref_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn ref_attend(q: &Mat, k: &Mat, v: &Mat, heads: usize) -> Mat {
    let d = q[0].len();
    let dh = d / heads;
    let mut out = vec![vec![0.0; d]; q.len()];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for (i, qi) in q.iter().enumerate() {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| cols.clone().map(|c| qi[c] * kj[c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let w = ref_softmax(&scores);
            for c in cols.clone() {
                out[i][c] = w.iter().zip(v).map(|(a, vj)| a * vj[c]).sum();
            }
        }
    }
    out
}

fn ref_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
}

fn ref_block(x: &Mat, blk: &TransformerBlock, s: &ParamStore<f64>) -> Mat {
    let lin = |x: &Mat, l: &dofa_core::nn::Linear| ref_linear(x, s.value(l.weight), s.value(l.bias));
    let h = ref_layer_norm(x, s.value(blk.norm1.gamma), s.value(blk.norm1.beta));
    let a = &blk.attn;
    let mixed = ref_attend(&lin(&h, &a.q), &lin(&h, &a.k), &lin(&h, &a.v), a.num_heads);
    let x = add(x, &lin(&mixed, &a.proj));
    let h = ref_layer_norm(&x, s.value(blk.norm2.gamma), s.value(blk.norm2.beta));
    let hidden: Mat = lin(&h, &blk.mlp.fc1).into_iter().map(|r| r.into_iter().map(ref_gelu).collect()).collect();
    add(&x, &lin(&hidden, &blk.mlp.fc2))
}

fn max_diff(a: &Tensor<f64>, b: &Mat) -> f64 {
    to_mat(a).iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn eval_linear(x: &[f64], w: &[f64], b: &[f64], shape: (usize, usize, usize)) -> Vec<f64> {
    let (n, din, dout) = shape;
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[n, din], x));
    let w = g.constant(t(&[din, dout], w));
    let b = g.constant(t(&[dout], b));
    let y = g.linear(x, w, b).unwrap();
    g.value(y).to_f64_vec()
}

#[test]
fn linear_examples() {
    assert_eq!(eval_linear(&[1.0, 2.0], &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], (1, 2, 2)), vec![1.0, 2.0]);
    assert_eq!(eval_linear(&[0.0, 0.0], &[0.3, -2.0, 5.0, 1.5], &[3.0, 4.0], (1, 2, 2)), vec![3.0, 4.0]);
    assert_eq!(eval_linear(&[1.0, 1.0], &[2.0, 0.0, 0.0, 3.0], &[1.0, 1.0], (1, 2, 2)), vec![3.0, 4.0]);
}

#[test]
fn linear_rejects_mismatch() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[1, 3]));
    let w = g.constant(Tensor::zeros(&[2, 2]));
    let b = g.constant(Tensor::zeros(&[2]));
    assert!(g.linear(x, w, b).is_err());
    let w = g.constant(Tensor::zeros(&[3, 2]));
    let b = g.constant(Tensor::zeros(&[3]));
    assert!(g.linear(x, w, b).is_err());
}

fn eval_ln(x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1, d], x));
    let ga = g.constant(t(&[d], gamma));
    let be = g.constant(t(&[d], beta));
    let y = g.layer_norm(x, ga, be, LAYER_NORM_EPS).unwrap();
    g.value(y).to_f64_vec()
}

#[test]
fn layer_norm_examples() {
    assert_eq!(eval_ln(&[5.0; 4], &[1.0; 4], &[0.0; 4]), vec![0.0; 4]);
    let y = eval_ln(&[1.0, -1.0], &[1.0; 2], &[0.0; 2]);
    assert!((y[0] - 1.0).abs() < 1e-5 && (y[1] + 1.0).abs() < 1e-5, "{y:?}");
    assert_eq!(eval_ln(&[0.3, -4.0, 9.0], &[0.0; 3], &[7.0; 3]), vec![7.0; 3]);
}

#[test]
fn layer_norm_rejects_width_mismatch() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[2, 3]));
    let ga = g.constant(Tensor::zeros(&[4]));
    let be = g.constant(Tensor::zeros(&[4]));
    assert!(g.layer_norm(x, ga, be, LAYER_NORM_EPS).is_err());
}

fn attention(dim: usize, heads: usize, seed: u64) -> (ParamStore<f64>, Attention) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attn = Attention::new(&mut store, "attn", dim, heads, Init::Xavier, &mut rng);
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.value(id).shape().to_vec();
        store.set(id, rand_tensor(&shape, &mut rng)).unwrap();
    }
    (store, attn)
}

fn run_attention(store: &ParamStore<f64>, attn: &Attention, q: &Tensor<f64>, kv: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let q = g.constant(q.clone());
    let kv = g.constant(kv.clone());
    let y = attn.forward(&mut g, &p, q, kv, kv).unwrap();
    g.value(y).clone()
}

#[test]
fn single_token_attention_is_projected_value() {
    let (store, attn) = attention(8, 2, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let q = rand_tensor(&[1, 8], &mut rng);
    let kv = rand_tensor(&[1, 8], &mut rng);
    let y = run_attention(&store, &attn, &q, &kv);
    let v = ref_linear(&to_mat(&kv), store.value(attn.v.weight), store.value(attn.v.bias));
    let want = ref_linear(&v, store.value(attn.proj.weight), store.value(attn.proj.bias));
    assert!(max_diff(&y, &want) < 1e-12);
}

#[test]
fn identical_tokens_give_identical_outputs() {
    let (store, attn) = attention(8, 4, 3);
    let row: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
    let x = t(&[5, 8], &row.repeat(5));
    let y = to_mat(&run_attention(&store, &attn, &x, &x));
    for r in &y[1..] {
        for (a, b) in r.iter().zip(&y[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_matches_brute_force() {
    let (store, attn) = attention(8, 2, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&[3, 8], &mut rng);
    let y = run_attention(&store, &attn, &x, &x);
    let lin = |l: &dofa_core::nn::Linear, m: &Mat| ref_linear(m, store.value(l.weight), store.value(l.bias));
    let m = to_mat(&x);
    let mixed = ref_attend(&lin(&attn.q, &m), &lin(&attn.k, &m), &lin(&attn.v, &m), 2);
    assert!(max_diff(&y, &lin(&attn.proj, &mixed)) < 1e-6);
}

#[test]
fn indivisible_heads_rejected() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[2, 6]));
    assert!(dofa_core::nn::attend(&mut g, x, x, x, 4).is_err());
    let cfg = TransformerBlockConfig { embed_dim: 6, num_heads: 4, mlp_ratio: 4.0, depth: 1 };
    assert!(cfg.validate().is_err());
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, cols in 1usize..9, seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&[rows, cols], &mut rng).map(|v| v * scale);
        let mut g = Graph::<f64>::new();
        let x = g.constant(x);
        let y = g.softmax_rows(x).unwrap();
        for r in to_mat(g.value(y)) {
            prop_assert!(r.iter().all(|&v| v >= 0.0));
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn block_keeps_shape(n in 1usize..7, seed in any::<u64>()) {
        let (store, blk) = block(seed, false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x = rand_tensor(&[n, 16], &mut rng);
        let y = run_block(&store, &blk, &x);
        prop_assert_eq!(y.shape(), &[n, 16]);
    }
}

fn block(seed: u64, zero_outputs: bool) -> (ParamStore<f64>, TransformerBlock) {
    let cfg = TransformerBlockConfig { embed_dim: 16, num_heads: 4, mlp_ratio: 2.0, depth: 1 };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blk = TransformerBlock::new(&mut store, "blk", &cfg, Init::Xavier, &mut rng);
    // randomize everything, including norms and biases
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.value(id).shape().to_vec();
        store.set(id, rand_tensor(&shape, &mut rng)).unwrap();
    }
    if zero_outputs {
        for l in blk.residual_outputs() {
            store.set(l.weight, Tensor::zeros(store.value(l.weight).shape())).unwrap();
            store.set(l.bias, Tensor::zeros(store.value(l.bias).shape())).unwrap();
        }
    }
    (store, blk)
}

fn run_block(store: &ParamStore<f64>, blk: &TransformerBlock, x: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let x = g.constant(x.clone());
    let y = blk.forward(&mut g, &p, x).unwrap();
    g.value(y).clone()
}

#[test]
fn zeroed_residual_outputs_are_identity() {
    let (store, blk) = block(7, true);
    let x = rand_tensor(&[5, 16], &mut ChaCha8Rng::seed_from_u64(8));
    assert_eq!(run_block(&store, &blk, &x), x);
}

#[test]
fn block_matches_reference() {
    for seed in 0..4 {
        let (store, blk) = block(seed, false);
        let x = rand_tensor(&[6, 16], &mut ChaCha8Rng::seed_from_u64(100 + seed));
        let y = run_block(&store, &blk, &x);
        assert!(max_diff(&y, &ref_block(&to_mat(&x), &blk, &store)) < 1e-6);
    }
}

#[test]
fn block_rejects_wrong_width() {
    let (store, blk) = block(0, false);
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let x = g.constant(Tensor::<f64>::zeros(&[2, 8]));
    assert!(blk.forward(&mut g, &p, x).is_err());
}

#[test]
fn forward_is_deterministic() {
    let (store, blk) = block(9, false);
    let x = rand_tensor(&[4, 16], &mut ChaCha8Rng::seed_from_u64(10));
    assert_eq!(run_block(&store, &blk, &x).data(), run_block(&store, &blk, &x).data());
}

#[test]
fn quadratic_grad_check() {
    let mut store = ParamStore::new();
    store.add("theta", t(&[1], &[3.0]), false);
    let r = grad_check(&mut store, &GradCheckOptions::default(), |g, p| {
        let th = p.vars()[0];
        let sq = g.mul(th, th)?;
        Ok(g.sum(sq))
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-9, "{r:?}");
}

#[test]
fn block_and_layer_norm_grad_check() {
    let (mut store, blk) = block(11, false);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = Arc::new(rand_tensor(&[4, 16], &mut rng));
    let readout = rand_tensor(&[4, 16], &mut rng);
    let r = grad_check(&mut store, &GradCheckOptions::default(), |g, p| {
        let x = g.leaf(x.clone(), false);
        let y = blk.forward(g, p, x)?;
        let c = g.constant(readout.clone());
        let y = g.mul(y, c)?;
        Ok(g.mean(y))
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");

    let mut store = ParamStore::new();
    let ln = LayerNorm::new(&mut store, "ln", 5);
    let w = rand_tensor(&[3, 5], &mut ChaCha8Rng::seed_from_u64(13));
    let r = grad_check(&mut store, &GradCheckOptions::default(), |g, p| {
        let x = g.constant(w.clone());
        let y = ln.forward(g, p, x)?;
        let c = g.constant(w.map(|v| v * 0.5 + 0.1));
        let y = g.mul(y, c)?;
        Ok(g.sum(y))
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}
