//! Parameterized layers recorded onto a [`Graph`].

use rand::Rng;

use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParamStore};
use super::tensor::Real;
use crate::error::Result;

/// `x · W + b` with `W` stored `in x out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.insert_uniform(&format!("{name}.w"), &[d_in, d_out], d_in, rng);
        let b = bias.then(|| store.insert_const(&format!("{name}.b"), &[d_out], 0.0));
        Linear { w, b }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let w = g.param(s, self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(s, b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.insert_const(&format!("{name}.gain"), &[dim], 1.0),
            bias: store.insert_const(&format!("{name}.bias"), &[dim], 0.0),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let gain = g.param(s, self.gain);
        let bias = g.param(s, self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Multi-head attention with input and output projections. The key
/// projection has no bias: a key bias shifts every score of a query row
/// equally and cannot change the output.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, true, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, false, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, true, rng),
            out: Linear::new(store, &format!("{name}.o"), dim, dim, true, rng),
            heads,
        }
    }

    /// Attends from `query` rows over `memory` rows.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        query: NodeId,
        memory: NodeId,
        causal: bool,
    ) -> Result<NodeId> {
        let q = self.q.forward(g, s, query)?;
        let k = self.k.forward(g, s, memory)?;
        let v = self.v.forward(g, s, memory)?;
        let a = g.attention(q, k, v, self.heads, causal)?;
        self.out.forward(g, s, a)
    }
}

/// Position-wise two-layer network with GELU.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, true, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, true, rng),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let h = self.up.forward(g, s, x)?;
        let h = g.gelu(h);
        self.down.forward(g, s, h)
    }
}
