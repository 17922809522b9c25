//! Dense tensors, a reverse-mode tape, and the handful of neural-network
//! primitives the speaker-attributed recognizer is built from.

mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub mod nn;

pub use gradcheck::{grad_check, grad_check_store};
pub use graph::{Gradients, Graph, NodeId};
pub use optim::{adam_step, warmup_lr, AdamConfig, AdamState};
pub use params::{Checkpoint, CheckpointEntry, ParamId, ParamStore, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use tensor::{argmax, cosine, dot, norm, Real, Tensor};

use crate::error::{Error, Result};

/// Softmax of a vector with max subtraction.
pub fn softmax<T: Real>(v: &[T]) -> Result<Vec<T>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    let mut out = v.to_vec();
    let n = out.len();
    graph::softmax_in_place(&mut out, n);
    Ok(out)
}

/// `-ln p[target]` for a probability vector.
pub fn cross_entropy<T: Real>(p: &[T], target: usize) -> Result<T> {
    if target >= p.len() {
        return Err(Error::Index(format!("target {target} outside {} classes", p.len())));
    }
    Ok(-p[target].ln())
}

/// Gradient of `cross_entropy(softmax(logits), target)` with respect to the
/// logits, given the softmax output `p`.
pub fn cross_entropy_logit_grad<T: Real>(p: &[T], target: usize) -> Result<Vec<T>> {
    if target >= p.len() {
        return Err(Error::Index(format!("target {target} outside {} classes", p.len())));
    }
    Ok(p.iter().enumerate().map(|(i, &pi)| if i == target { pi - T::one() } else { pi }).collect())
}

/// Absolute sinusoidal position codes, `len x dim`.
pub fn positional_encoding<T: Real>(len: usize, dim: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let a = pos as f64 * rate;
            data[pos * dim + i] = T::of(if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    Tensor::matrix(len, dim, data).expect("positional encoding shape")
}
