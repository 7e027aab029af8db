//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::graph::{Graph, Var};
use crate::autograd::params::ParamStore;
use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Check at most this many entries per tensor (sampled with `seed`).
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-6,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_abs_err: f64,
    /// `max |analytic - numeric|` over the checked entries, divided by the
    /// largest magnitude among both gradient vectors.
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }

    pub fn max_rel_err(&self) -> f64 {
        self.worst().map_or(0.0, |t| t.rel_err)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.tensors.iter().all(|t| t.rel_err < tolerance)
    }
}

/// Compares analytic gradients of `build`'s scalar output against central
/// differences for every parameter in `store`.
pub fn grad_check<T, F>(store: &mut ParamStore<T>, build: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<'_, T>) -> Result<Var>,
{
    let eval = |store: &ParamStore<T>| -> Result<f64> {
        let mut g = Graph::inference(store);
        let out = build(&mut g)?;
        Ok(g.scalar(out).to_f64_lossy())
    };
    let grads = {
        let mut g = Graph::new(store);
        let out = build(&mut g)?;
        g.backward(out)?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let ids: Vec<_> = store.ids().collect();
    let mut report = GradCheckReport::default();
    for id in ids {
        let len = store.value(id).len();
        let analytic: Vec<f64> = match grads.get(id) {
            Some(t) => t.data().iter().map(|v| v.to_f64_lossy()).collect(),
            None => vec![0.0; len],
        };
        let entries: Vec<usize> = match opts.max_entries {
            Some(m) if m < len => sample(&mut rng, len, m).into_vec(),
            _ => (0..len).collect(),
        };
        let mut numeric = Vec::with_capacity(entries.len());
        for &i in &entries {
            let orig = store.value(id).data()[i];
            let h = opts.step;
            store.value_mut(id).data_mut()[i] = T::from_f64_lossy(orig.to_f64_lossy() + h);
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[i] = T::from_f64_lossy(orig.to_f64_lossy() - h);
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            numeric.push((plus - minus) / (2.0 * h));
        }
        let mut max_abs = 0.0f64;
        let mut scale = 0.0f64;
        for (&i, &n) in entries.iter().zip(&numeric) {
            max_abs = max_abs.max((analytic[i] - n).abs());
            scale = scale.max(analytic[i].abs()).max(n.abs());
        }
        let rel = if scale > 0.0 { max_abs / scale } else { 0.0 };
        report.tensors.push(TensorCheck {
            name: store.name(id).to_string(),
            checked: entries.len(),
            max_abs_err: max_abs,
            rel_err: rel,
        });
    }
    Ok(report)
}
