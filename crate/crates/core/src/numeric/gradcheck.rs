use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares backward gradients with fourth-order central differences over every input
/// coordinate and returns the largest relative error.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = inputs.iter().enumerate().map(|(i, t)| store.insert(&format!("x{i}"), t.clone())).collect();
    grad_check_store(
        &store,
        |g, s| {
            let nodes: Vec<NodeId> = ids.iter().map(|&id| g.param(s, id)).collect();
            f(g, &nodes)
        },
        eps,
        None,
    )
}

/// Finite-difference check over parameters of a store.
///
/// With `sample_per_tensor = Some((n, seed))` only `n` coordinates of each
/// tensor, drawn with `seed`, are perturbed.
pub fn grad_check_store<F>(store: &ParamStore<f64>, f: F, eps: f64, sample_per_tensor: Option<(usize, u64)>) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<NodeId>,
{
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let l = f(&mut g, s)?;
        Ok(g.value(l).item())
    };
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    let grads = g.backward(loss, store.len())?;
    let mut rng = sample_per_tensor.map(|(_, seed)| ChaCha8Rng::seed_from_u64(seed));
    let mut work = store.clone();
    let mut worst = 0.0f64;
    for id in store.ids() {
        let n = store.get(id).len();
        let coords: Vec<usize> = match (&mut rng, sample_per_tensor) {
            (Some(r), Some((k, _))) if k < n => sample(r, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for c in coords {
            let orig = store.get(id).data()[c];
            let mut at = |h: f64| -> Result<f64> {
                work.get_mut(id).data_mut()[c] = orig + h;
                eval(&work)
            };
            let (up, down) = (at(eps)?, at(-eps)?);
            let (up2, down2) = (at(2.0 * eps)?, at(-2.0 * eps)?);
            work.get_mut(id).data_mut()[c] = orig;
            let numeric = (8.0 * (up - down) - (up2 - down2)) / (12.0 * eps);
            let analytic = grads.get(id).map_or(0.0, |t| t.data()[c]);
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    Ok(worst)
}
