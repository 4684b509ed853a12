//! Retrieval fusion: combine a query embedding with its retrieved memory.
//!
//! * [`MeanFusion`]: `z + chi(mean(V))`.
//! * [`MemoryAttention`]: a stack of attention layers, each computing
//!   `f = z + chi(softmax(<psi_q(f_prev), psi_k(m_j)> / sqrt(d)) V)` with the
//!   original query `z` as the residual at every layer.

mod mam;
mod mean;

pub use mam::{FusionTrace, MamCache, MamConfig, MemoryAttention};
pub use mean::{MeanCache, MeanFusion};

use crate::ann::Neighbor;
use crate::error::{Error, Result};
use crate::nn::Real;
use crate::store::MemoryStore;

/// Keys and values of the `k` neighbors of one query, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved<T> {
    pub ids: Vec<usize>,
    pub key_dim: usize,
    pub value_dim: usize,
    pub keys: Vec<T>,
    pub values: Vec<T>,
}

impl<T: Real> Retrieved<T> {
    pub fn new(ids: Vec<usize>, key_dim: usize, value_dim: usize, keys: Vec<T>, values: Vec<T>) -> Result<Self> {
        let k = ids.len();
        crate::error::ensure_dim(k * key_dim, keys.len())?;
        crate::error::ensure_dim(k * value_dim, values.len())?;
        Ok(Self {
            ids,
            key_dim,
            value_dim,
            keys,
            values,
        })
    }

    /// Copies the rows of `neighbors` out of `store`.
    pub fn gather(store: &MemoryStore, neighbors: &[Neighbor]) -> Result<Self> {
        let (kd, vd) = (store.key_dim(), store.value_dim());
        let mut keys = Vec::with_capacity(neighbors.len() * kd);
        let mut values = Vec::with_capacity(neighbors.len() * vd);
        for n in neighbors {
            if n.id >= store.len() {
                return Err(Error::InvalidArgument(format!(
                    "neighbor id {} outside store of {} rows",
                    n.id,
                    store.len()
                )));
            }
            keys.extend(store.key(n.id).iter().map(|&x| T::from_f32(x)));
            values.extend(store.value(n.id).iter().map(|&x| T::from_f32(x)));
        }
        Self::new(neighbors.iter().map(|n| n.id).collect(), kd, vd, keys, values)
    }

    pub fn k(&self) -> usize {
        self.ids.len()
    }

    pub fn key(&self, j: usize) -> &[T] {
        &self.keys[j * self.key_dim..(j + 1) * self.key_dim]
    }

    pub fn value(&self, j: usize) -> &[T] {
        &self.values[j * self.value_dim..(j + 1) * self.value_dim]
    }
}
