//! Finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, ParamStore};

/// Denominator floor for the relative error, so entries whose true gradient is
/// zero are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Which parameter entries get a finite-difference probe.
#[derive(Clone, Copy, Debug)]
pub enum Coords {
    All,
    /// At most `n` entries per parameter tensor, chosen with `seed`.
    PerTensor { n: usize, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub h: f64,
    pub coords: Coords,
    /// Multiplies the analytic gradient before comparison. Anything other
    /// than 1.0 is a fault-injection hook for testing the checker itself.
    pub analytic_scale: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { h: 1e-5, coords: Coords::All, analytic_scale: 1.0 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter name, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
    pub loss: f64,
}

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn eval<F>(store: &ParamStore<f64>, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = store.bind(&mut g, false);
    let loss = f(&mut g, &bound)?;
    let v = g.scalar(loss);
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("loss evaluated to {v}")));
    }
    Ok(v)
}

/// Compares the analytic gradient of the scalar built by `f` against central
/// differences `(f(p + h) - f(p - h)) / 2h` and returns the worst relative error.
///
/// `f` receives a fresh graph and the store's parameters bound as leaves; it
/// may bind other (frozen) stores itself. The store is restored on return.
pub fn grad_check<F>(store: &mut ParamStore<f64>, opts: &GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &Bound) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&opts.h) {
        return Err(Error::Config(format!("finite-difference step {} outside [1e-6, 1e-4]", opts.h)));
    }

    let (loss, analytic) = {
        let mut g = Graph::new();
        let bound = store.bind(&mut g, true);
        let loss = f(&mut g, &bound)?;
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss evaluated to {value}")));
        }
        let grads = g.backward(loss)?;
        let analytic: Vec<Vec<f64>> = store
            .ids()
            .map(|id| match grads.get(bound.get(id)) {
                Some(t) => t.data().to_vec(),
                None => vec![0.0; store.value(id).numel()],
            })
            .collect();
        (value, analytic)
    };

    let mut rng = match opts.coords {
        Coords::PerTensor { seed, .. } => ChaCha8Rng::seed_from_u64(seed),
        Coords::All => ChaCha8Rng::seed_from_u64(0),
    };
    let ids: Vec<_> = store.ids().collect();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0, loss };
    for (slot, id) in ids.into_iter().enumerate() {
        let numel = store.value(id).numel();
        let picks: Vec<usize> = match opts.coords {
            Coords::All => (0..numel).collect(),
            Coords::PerTensor { n, .. } if n >= numel => (0..numel).collect(),
            Coords::PerTensor { n, .. } => {
                let mut v = sample(&mut rng, numel, n).into_vec();
                v.sort_unstable();
                v
            }
        };
        for i in picks {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + opts.h;
            let plus = eval(store, &f);
            store.value_mut(id).data_mut()[i] = orig - opts.h;
            let minus = eval(store, &f);
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.h);
            let a = analytic[slot][i] * opts.analytic_scale;
            let err = relative_error(a, numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), i, a, numeric));
            }
        }
    }
    Ok(report)
}
