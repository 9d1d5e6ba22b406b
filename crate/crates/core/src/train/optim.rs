use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Float, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Average the reconstruction error over every patch, not only masked ones.
    pub recon_on_all_patches: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            base_lr: 1.5e-4,
            weight_decay: 0.05,
            betas: [0.9, 0.95],
            eps: 1e-8,
            warmup_epochs: 5,
            total_epochs: 20,
            batch_size: 16,
            seed: 0,
            recon_on_all_patches: false,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("total_epochs and batch_size must be positive".into()));
        }
        if self.warmup_epochs >= self.total_epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} must be below total_epochs {}",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if !(self.base_lr > 0.0) || !(self.weight_decay >= 0.0) || !(self.eps > 0.0) {
            return Err(Error::Config("base_lr and eps must be positive, weight_decay non-negative".into()));
        }
        if self.betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::Config(format!("betas {:?} must lie in [0, 1)", self.betas)));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `base_lr`, then half-cosine decay to 0 at the end
/// of `total_epochs`. Steps past the end stay at 0.
pub fn lr_schedule(step: usize, steps_per_epoch: usize, cfg: &OptimConfig) -> f64 {
    let warmup = (cfg.warmup_epochs * steps_per_epoch) as f64;
    let total = (cfg.total_epochs * steps_per_epoch) as f64;
    let s = step as f64;
    if s < warmup {
        return cfg.base_lr * s / warmup;
    }
    let span = (total - warmup).max(1.0);
    let progress = ((s - warmup) / span).min(1.0);
    cfg.base_lr * 0.5 * (1.0 + (PI * progress).cos())
}

/// AdamW moments for every parameter of one store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T: Float = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Float> AdamW<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect::<Vec<_>>();
        Self { m: zeros(), v: zeros(), step: 0 }
    }

    /// One update from the accumulated gradients. Parameters flagged for
    /// decay are first scaled by `1 - lr * wd`.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64, cfg: &OptimConfig) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Shape(format!("optimizer tracks {} tensors, store has {}", self.m.len(), store.len())));
        }
        if let Some(p) = store.iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {}", p.name)));
        }
        self.step += 1;
        let t = self.step as i32;
        let [b1, b2] = cfg.betas;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let decay = T::from_f64_lossy(1.0 - lr * cfg.weight_decay);
        let (tb1, tb2) = (T::from_f64_lossy(b1), T::from_f64_lossy(b2));
        let (ob1, ob2) = (T::from_f64_lossy(1.0 - b1), T::from_f64_lossy(1.0 - b2));
        let step_size = T::from_f64_lossy(lr / c1);
        let inv_c2 = T::from_f64_lossy(1.0 / c2);
        let eps = T::from_f64_lossy(cfg.eps);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad.data();
            let value = std::sync::Arc::make_mut(&mut p.value);
            for (((w, &g), m), v) in value.data_mut().iter_mut().zip(grad).zip(m.data_mut()).zip(v.data_mut()) {
                if p.decay {
                    *w *= decay;
                }
                *m = tb1 * *m + ob1 * g;
                *v = tb2 * *v + ob2 * g * g;
                *w -= step_size * *m / ((*v * inv_c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> OptimConfig {
        OptimConfig { base_lr: 1.0, warmup_epochs: 2, total_epochs: 6, ..OptimConfig::default() }
    }

    #[test]
    fn schedule_anchors() {
        let c = cfg();
        assert_eq!(lr_schedule(0, 10, &c), 0.0);
        assert_eq!(lr_schedule(10, 10, &c), 0.5);
        assert_eq!(lr_schedule(20, 10, &c), 1.0);
        assert!((lr_schedule(40, 10, &c) - 0.5).abs() < 1e-15);
        assert!(lr_schedule(60, 10, &c).abs() < 1e-15);
        assert!(lr_schedule(75, 10, &c).abs() < 1e-15);
    }

    #[test]
    fn schedule_is_piecewise_monotone() {
        let c = cfg();
        let lrs: Vec<f64> = (0..=60).map(|s| lr_schedule(s, 10, &c)).collect();
        assert!(lrs[..=20].windows(2).all(|w| w[1] >= w[0]));
        assert!(lrs[20..].windows(2).all(|w| w[1] <= w[0]));
        // no jump larger than one warmup increment anywhere
        assert!(lrs.windows(2).all(|w| (w[1] - w[0]).abs() <= 0.05 + 1e-12));
    }

    fn scalar_store(theta: f64, decay: bool) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(theta), decay);
        s
    }

    fn set_grad(s: &mut ParamStore<f64>, g: f64) {
        s.iter_mut().next().unwrap().grad = Tensor::scalar(g);
    }

    #[test]
    fn one_step_matches_hand_update() {
        let c = OptimConfig { weight_decay: 0.1, ..OptimConfig::default() };
        let (theta, g, lr) = (0.7, 0.3, 1e-2);
        let mut s = scalar_store(theta, true);
        set_grad(&mut s, g);
        let mut opt = AdamW::new(&s);
        opt.step(&mut s, lr, &c).unwrap();
        let m = (1.0 - 0.9) * g;
        let v = (1.0 - 0.95) * g * g;
        let m_hat = m / (1.0 - 0.9);
        let v_hat = v / (1.0 - 0.95);
        let expected = theta * (1.0 - lr * 0.1) - lr * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((s.value(s.ids().next().unwrap()).data()[0] - expected).abs() < 1e-10);
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let c = OptimConfig { weight_decay: 0.0, ..OptimConfig::default() };
        let mut s = scalar_store(1.25, true);
        let mut opt = AdamW::new(&s);
        for _ in 0..3 {
            opt.step(&mut s, 0.1, &c).unwrap();
        }
        assert_eq!(s.value(s.ids().next().unwrap()).data()[0], 1.25);
    }

    #[test]
    fn decoupled_decay_shrinks() {
        let c = OptimConfig { weight_decay: 0.05, ..OptimConfig::default() };
        let mut s = scalar_store(2.0, true);
        let mut opt = AdamW::new(&s);
        opt.step(&mut s, 0.1, &c).unwrap();
        assert!((s.value(s.ids().next().unwrap()).data()[0] - 2.0 * (1.0 - 0.1 * 0.05)).abs() < 1e-15);

        let mut s = scalar_store(2.0, false);
        let mut opt = AdamW::new(&s);
        opt.step(&mut s, 0.1, &c).unwrap();
        assert_eq!(s.value(s.ids().next().unwrap()).data()[0], 2.0);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = scalar_store(1.0, true);
        set_grad(&mut s, f64::NAN);
        let mut opt = AdamW::new(&s);
        match opt.step(&mut s, 0.1, &OptimConfig::default()) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains('w')),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(OptimConfig::default().validate().is_ok());
        assert!(OptimConfig { warmup_epochs: 20, ..OptimConfig::default() }.validate().is_err());
        assert!(OptimConfig { batch_size: 0, ..OptimConfig::default() }.validate().is_err());
    }
}
