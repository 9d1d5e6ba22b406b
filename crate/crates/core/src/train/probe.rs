use std::f64::consts::PI;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{derived_rng, Stream};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::DofaModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeOptions {
    pub epochs: usize,
    /// Each rate is tried; the one with the best final validation accuracy wins.
    pub lrs: Vec<f64>,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self { epochs: 50, lrs: vec![0.01, 0.1, 1.0], momentum: 0.9, batch_size: 64, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lr: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub lr: f64,
    pub num_classes: usize,
    pub epochs: Vec<ProbeEpoch>,
    /// Top-1 accuracy on the validation set after the last epoch.
    pub val_accuracy: f64,
    /// `confusion[true][predicted]` on the validation set.
    pub confusion: Vec<Vec<usize>>,
    pub sweep: Vec<SweepPoint>,
    pub seconds: f64,
}

/// Shifts and scales every column to zero mean and unit variance using the
/// statistics of `train`, applied to both sets.
pub fn standardize(train: &mut [Vec<f64>], val: &mut [Vec<f64>]) {
    let Some(d) = train.first().map(Vec::len) else { return };
    let n = train.len() as f64;
    for j in 0..d {
        let mean = train.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = train.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var.sqrt() + 1e-6);
        for r in train.iter_mut().chain(val.iter_mut()) {
            r[j] = (r[j] - mean) * inv;
        }
    }
}

struct Linear {
    w: Vec<f64>, // [d, k]
    b: Vec<f64>,
    d: usize,
    k: usize,
}

impl Linear {
    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.b.clone();
        for (i, &xi) in x.iter().enumerate() {
            for (zj, &wij) in z.iter_mut().zip(&self.w[i * self.k..(i + 1) * self.k]) {
                *zj += xi * wij;
            }
        }
        z
    }

    /// Softmax probabilities and the cross-entropy of `label`.
    fn probs(&self, x: &[f64], label: usize) -> (Vec<f64>, f64) {
        let z = self.logits(x);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        (e.iter().map(|v| v / s).collect(), s.ln() + m - z[label])
    }

    fn evaluate(&self, xs: &[Vec<f64>], ys: &[usize]) -> (f64, f64, Vec<Vec<usize>>) {
        let mut confusion = vec![vec![0; self.k]; self.k];
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let (p, l) = self.probs(x, y);
            loss += l;
            let pred = argmax(&p);
            confusion[y][pred] += 1;
        }
        let correct: usize = (0..self.k).map(|c| confusion[c][c]).sum();
        (loss / xs.len() as f64, correct as f64 / xs.len() as f64, confusion)
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

struct Fit {
    epochs: Vec<ProbeEpoch>,
    confusion: Vec<Vec<usize>>,
}

/// Minibatch SGD with momentum and a per-step cosine decay of `lr`.
fn fit(train: (&[Vec<f64>], &[usize]), val: (&[Vec<f64>], &[usize]), k: usize, lr: f64, opts: &ProbeOptions) -> Fit {
    let d = train.0[0].len();
    let mut model = Linear { w: vec![0.0; d * k], b: vec![0.0; k], d, k };
    let (mut vw, mut vb) = (vec![0.0; d * k], vec![0.0; k]);
    let n = train.0.len();
    let bs = opts.batch_size.clamp(1, n);
    let steps_per_epoch = n.div_ceil(bs);
    let total = (steps_per_epoch * opts.epochs).max(1) as f64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::with_capacity(opts.epochs);
    let mut step = 0usize;
    for epoch in 0..opts.epochs {
        order.shuffle(&mut derived_rng(opts.seed, Stream::Probe, epoch as u64));
        for chunk in order.chunks(bs) {
            let rate = lr * 0.5 * (1.0 + (PI * step as f64 / total).cos());
            let mut gw = vec![0.0; d * k];
            let mut gb = vec![0.0; k];
            for &i in chunk {
                let (mut p, _) = model.probs(&train.0[i], train.1[i]);
                p[train.1[i]] -= 1.0;
                for (a, &xa) in train.0[i].iter().enumerate() {
                    for (g, &pj) in gw[a * k..(a + 1) * k].iter_mut().zip(&p) {
                        *g += xa * pj;
                    }
                }
                for (g, &pj) in gb.iter_mut().zip(&p) {
                    *g += pj;
                }
            }
            let inv = 1.0 / chunk.len() as f64;
            for ((w, v), g) in model.w.iter_mut().zip(&mut vw).zip(&gw) {
                *v = opts.momentum * *v + g * inv;
                *w -= rate * *v;
            }
            for ((b, v), g) in model.b.iter_mut().zip(&mut vb).zip(&gb) {
                *v = opts.momentum * *v + g * inv;
                *b -= rate * *v;
            }
            step += 1;
        }
        let (train_loss, train_accuracy, _) = model.evaluate(train.0, train.1);
        let (val_loss, val_accuracy, _) = model.evaluate(val.0, val.1);
        epochs.push(ProbeEpoch { epoch: epoch + 1, train_loss, train_accuracy, val_loss, val_accuracy });
    }
    let (_, _, confusion) = model.evaluate(val.0, val.1);
    debug_assert_eq!(model.d, d);
    Fit { epochs, confusion }
}

/// Linear classifier on frozen features, with a learning-rate sweep.
pub fn probe_on_features(
    mut train: Vec<Vec<f64>>,
    train_labels: &[usize],
    mut val: Vec<Vec<f64>>,
    val_labels: &[usize],
    opts: &ProbeOptions,
) -> Result<ProbeResult> {
    let started = Instant::now();
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("probe needs non-empty train and validation sets".into()));
    }
    if opts.epochs == 0 || opts.lrs.is_empty() {
        return Err(Error::Config("probe needs at least one epoch and one learning rate".into()));
    }
    let k = train_labels.iter().chain(val_labels).max().map_or(0, |&m| m + 1);
    standardize(&mut train, &mut val);
    let mut best: Option<(f64, Fit)> = None;
    let mut sweep = Vec::new();
    for &lr in &opts.lrs {
        let f = fit((&train, train_labels), (&val, val_labels), k, lr, opts);
        let acc = f.epochs.last().expect("epochs > 0").val_accuracy;
        sweep.push(SweepPoint { lr, val_accuracy: acc });
        if best.as_ref().is_none_or(|(_, b)| acc > b.epochs.last().unwrap().val_accuracy) {
            best = Some((lr, f));
        }
    }
    let (lr, f) = best.expect("at least one learning rate");
    Ok(ProbeResult {
        lr,
        num_classes: k,
        val_accuracy: f.epochs.last().unwrap().val_accuracy,
        epochs: f.epochs,
        confusion: f.confusion,
        sweep,
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn features(model: &DofaModel<f32>, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    let images: Vec<_> = data.images().collect();
    Ok(model
        .features_batch(&images)?
        .into_iter()
        .map(|f| f.into_iter().map(f64::from).collect())
        .collect())
}

/// Trains a linear classifier on mean-pooled features of the frozen encoder
/// and reports validation accuracy. The model is only read.
pub fn linear_probe(model: &DofaModel<f32>, train: &Dataset, val: &Dataset, opts: &ProbeOptions) -> Result<ProbeResult> {
    let train_labels = train.labels()?;
    let val_labels = val.labels()?;
    let started = Instant::now();
    let train_f = features(model, train)?;
    let val_f = features(model, val)?;
    let mut result = probe_on_features(train_f, &train_labels, val_f, &val_labels, opts)?;
    result.seconds = started.elapsed().as_secs_f64();
    Ok(result)
}
