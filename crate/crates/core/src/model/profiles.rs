use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Real, Tensor};

/// Speaker embedding with its identity label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub id: String,
    pub vector: Vec<f64>,
}

/// Ordered set of `K >= 1` profiles with distinct ids and nonzero norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<SpeakerProfile>", into = "Vec<SpeakerProfile>")]
pub struct ProfileSet {
    profiles: Vec<SpeakerProfile>,
}

impl ProfileSet {
    pub fn new(profiles: Vec<SpeakerProfile>) -> Result<Self> {
        if profiles.is_empty() {
            return Err(Error::invalid("profile set is empty"));
        }
        let dim = profiles[0].vector.len();
        for (i, p) in profiles.iter().enumerate() {
            if p.vector.len() != dim {
                return Err(Error::Shape(format!("profile {} has dim {}, expected {dim}", p.id, p.vector.len())));
            }
            let n2: f64 = p.vector.iter().map(|v| v * v).sum();
            if !(n2 > 0.0) || !n2.is_finite() {
                return Err(Error::invalid(format!("profile {} has zero or non-finite norm", p.id)));
            }
            if profiles[..i].iter().any(|q| q.id == p.id) {
                return Err(Error::invalid(format!("duplicate profile id {}", p.id)));
            }
        }
        Ok(ProfileSet { profiles })
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.profiles[0].vector.len()
    }

    pub fn profiles(&self) -> &[SpeakerProfile] {
        &self.profiles
    }

    pub fn get(&self, k: usize) -> &SpeakerProfile {
        &self.profiles[k]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.profiles.iter().position(|p| p.id == id)
    }

    /// `K x f^d` matrix of raw profile vectors.
    pub fn matrix<T: Real>(&self) -> Tensor<T> {
        let data = self.profiles.iter().flat_map(|p| p.vector.iter().map(|&v| T::of(v))).collect();
        Tensor::matrix(self.len(), self.dim(), data).expect("profile matrix shape")
    }

    /// Same as [`matrix`](Self::matrix) with rows scaled to unit norm.
    pub fn unit_matrix<T: Real>(&self) -> Tensor<T> {
        let data = self
            .profiles
            .iter()
            .flat_map(|p| {
                let n = p.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
                p.vector.iter().map(move |&v| T::of(v / n))
            })
            .collect();
        Tensor::matrix(self.len(), self.dim(), data).expect("profile matrix shape")
    }

    /// Reorders profiles so that new position `i` holds old `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        if perm.len() != self.len() || perm.iter().any(|&p| p >= self.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid("not a permutation"));
        }
        Ok(ProfileSet { profiles: perm.iter().map(|&p| self.profiles[p].clone()).collect() })
    }
}

impl TryFrom<Vec<SpeakerProfile>> for ProfileSet {
    type Error = Error;
    fn try_from(v: Vec<SpeakerProfile>) -> Result<Self> {
        ProfileSet::new(v)
    }
}

impl From<ProfileSet> for Vec<SpeakerProfile> {
    fn from(p: ProfileSet) -> Self {
        p.profiles
    }
}
