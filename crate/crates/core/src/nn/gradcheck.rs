//! Finite-difference verification of tape gradients.

use crate::error::Result;
use crate::nn::graph::{Graph, NodeId};
use crate::nn::params::ParamStore;

pub const FD_STEP: f64 = 1e-5;

/// Central-difference gradient of a scalar function of a flat vector.
pub fn finite_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut work = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = work[i];
        work[i] = orig + FD_STEP;
        let hi = f(&work);
        work[i] = orig - FD_STEP;
        let lo = f(&work);
        work[i] = orig;
        out.push((hi - lo) / (2.0 * FD_STEP));
    }
    out
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Checks every parameter coordinate of a scalar-valued composition
/// against central differences and returns the max relative error.
pub fn grad_check<F>(store: &mut ParamStore<f64>, mut f: F) -> Result<f64>
where
    F: FnMut(&ParamStore<f64>, &mut Graph<f64>) -> Result<NodeId>,
{
    store.zero_grads();
    let mut g = Graph::new();
    let loss = f(store, &mut g)?;
    g.backward(loss)?;
    g.apply_grads(store);

    let mut worst = 0.0f64;
    for idx in 0..store.len() {
        let analytic = store.grad(idx).data.clone();
        for coord in 0..analytic.len() {
            let orig = store.value(idx).data[coord];
            store.value_mut(idx).data[coord] = orig + FD_STEP;
            let mut graph = Graph::new();
            let loss = f(store, &mut graph)?;
            let hi = graph.value(loss).scalar_value();
            store.value_mut(idx).data[coord] = orig - FD_STEP;
            let mut graph = Graph::new();
            let loss = f(store, &mut graph)?;
            let lo = graph.value(loss).scalar_value();
            store.value_mut(idx).data[coord] = orig;
            let numeric = (hi - lo) / (2.0 * FD_STEP);
            let a = analytic[coord];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
