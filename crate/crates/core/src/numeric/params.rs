use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn new(i: usize) -> Self {
        ParamId(i)
    }

    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: BTreeMap<String, ParamId>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), index: BTreeMap::new() }
    }

    /// Registers a tensor; panics on a duplicate name.
    pub fn insert(&mut self, name: &str, t: Tensor<T>) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let id = ParamId(self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(t);
        self.index.insert(name.to_string(), id);
        id
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn insert_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.insert_uniform_bound(name, shape, bound, rng)
    }

    pub fn insert_uniform_bound(&mut self, name: &str, shape: &[usize], bound: f64, rng: &mut impl Rng) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::of(rng.random_range(-bound..=bound))).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("shape"))
    }

    pub fn insert_const(&mut self, name: &str, shape: &[usize], v: f64) -> ParamId {
        let n: usize = shape.iter().product();
        self.insert(name, Tensor::new(shape.to_vec(), vec![T::of(v); n]).expect("shape"))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            meta,
            params: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(n, t)| CheckpointEntry { name: n.clone(), shape: t.shape().to_vec(), data: t.to_f64_vec() })
                .collect(),
        }
    }

    /// Overwrites every parameter from a checkpoint with identical names
    /// and shapes; any difference is reported in the error.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        ck.check_header()?;
        let mut diffs = Vec::new();
        let mut seen = 0;
        for e in &ck.params {
            match self.id(&e.name) {
                None => diffs.push(format!("unexpected parameter {}", e.name)),
                Some(id) => {
                    seen += 1;
                    if self.get(id).shape() != e.shape.as_slice() {
                        diffs.push(format!("{}: checkpoint {:?}, model {:?}", e.name, e.shape, self.get(id).shape()));
                    }
                }
            }
        }
        if seen != self.len() {
            for n in &self.names {
                if !ck.params.iter().any(|e| &e.name == n) {
                    diffs.push(format!("missing parameter {n}"));
                }
            }
        }
        if !diffs.is_empty() {
            return Err(Error::Checkpoint(diffs.join("; ")));
        }
        for e in &ck.params {
            let id = self.index[&e.name];
            let data = e.data.iter().map(|&v| T::of(v)).collect();
            self.tensors[id.0] = Tensor::new(e.shape.clone(), data)?;
        }
        Ok(())
    }
}

pub const CHECKPOINT_FORMAT: &str = "t2d-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Self-describing JSON parameter file: name, shape and values per tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub params: Vec<CheckpointEntry>,
}

impl Checkpoint {
    fn check_header(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "header {} v{} (expected {} v{})",
                self.format, self.version, CHECKPOINT_FORMAT, CHECKPOINT_VERSION
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        crate::io::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        ck.check_header()?;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_roundtrips_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::<f64>::new();
        s.insert_uniform("w", &[7, 5], 5, &mut rng);
        s.insert("tiny", Tensor::new(vec![3], vec![1e-300, -0.1 + 0.2, std::f64::consts::PI]).unwrap());
        let ck = s.to_checkpoint(serde_json::json!({"k": 1}));
        let text = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        let mut s2 = ParamStore::<f64>::new();
        s2.insert_const("w", &[7, 5], 0.0);
        s2.insert_const("tiny", &[3], 0.0);
        s2.load_checkpoint(&back).unwrap();
        for id in s.ids() {
            let a: Vec<u64> = s.get(id).data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = s2.get(id).data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn shape_mismatch_lists_the_difference() {
        let mut s = ParamStore::<f64>::new();
        s.insert_const("w", &[2, 2], 0.0);
        let ck = s.to_checkpoint(serde_json::Value::Null);
        let mut other = ParamStore::<f64>::new();
        other.insert_const("w", &[3, 2], 0.0);
        other.insert_const("extra", &[1], 0.0);
        let msg = other.load_checkpoint(&ck).unwrap_err().to_string();
        assert!(msg.contains("w: checkpoint [2, 2], model [3, 2]"), "{msg}");
        assert!(msg.contains("missing parameter extra"), "{msg}");
    }
}
