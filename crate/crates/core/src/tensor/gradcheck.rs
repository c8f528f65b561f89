//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward pass, so it is
//! independent of every backward rule it checks.

use super::{Graph, ParamStore, Var};
use crate::error::Result;

/// Lower bound on the denominator of [`rel_error`], so an all-zero gradient
/// is compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

/// Normwise relative error of one tensor's gradient:
/// `max|a - n| / max(max|a|, max|n|, REL_FLOOR)`.
///
/// Scaling by the tensor's largest entry rather than per element keeps
/// entries that happen to sit near zero from amplifying rounding noise in
/// the numeric side.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(REL_FLOOR, f64::max);
    diff / scale
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub numel: usize,
    pub max_rel_error: f64,
    pub max_abs_grad: f64,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub params: Vec<ParamCheck>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn checked_elements(&self) -> usize {
        self.params.iter().map(|p| p.numel).sum()
    }
}

/// Compares reverse-mode gradients of `loss` against central differences with
/// step `h` for every element of every parameter in `store`.
///
/// `loss` must be a pure function of the store's values.
pub fn check<F>(store: &mut ParamStore, h: f64, mut loss: F) -> Result<GradReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    store.zero_grads();
    let mut g = Graph::new();
    let l = loss(&mut g, store)?;
    g.backward(l)?;
    store.accumulate_grads(&g)?;
    let analytic: Vec<Vec<f64>> = store
        .ids()
        .map(|id| {
            let t = store.get(id);
            t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let l = loss(&mut g, store)?;
        Ok(g.scalar(l))
    };

    let mut params = Vec::new();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).numel();
        let mut numeric = Vec::with_capacity(n);
        for i in 0..n {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + h;
            let fp = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig - h;
            let fm = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig;
            numeric.push((fp - fm) / (2.0 * h));
        }
        let a = &analytic[id.index()];
        params.push(ParamCheck {
            name: store.name(id).to_string(),
            numel: n,
            max_rel_error: rel_error(a, &numeric),
            max_abs_grad: a.iter().map(|v| v.abs()).fold(0.0, f64::max),
        });
    }
    store.zero_grads();
    Ok(GradReport { params })
}
