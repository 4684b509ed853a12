//! Top-k cosine retrieval over memory keys.
//!
//! [`ExactIndex`] is a brute-force scan; [`IvfIndex`] partitions keys with
//! spherical k-means and scans only the `n_probe` closest partitions.
//! Both rank by descending score and break ties by smaller id, so an IVF
//! query that probes every list reproduces the exact result bit for bit.

mod cache;
mod exact;
mod ivf;
mod kmeans;
mod topk;

pub use cache::{knn_digest, precompute_knn, KnnCache, CACHE_MAGIC, CACHE_VERSION};
pub use exact::ExactIndex;
pub use ivf::{default_n_lists, IvfIndex, DEFAULT_KMEANS_ITERS, IvfLayout, IVF_MAGIC, IVF_VERSION};
pub use kmeans::{spherical_kmeans, KMeansResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::MemoryStore;

/// One retrieved memory row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: usize,
    pub score: f32,
}

/// How many inverted lists a query visits. Ignored by the exact index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Probe {
    /// `max(1, n_lists / 16)`.
    #[default]
    Default,
    All,
    Lists(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryOptions {
    pub k: usize,
    pub probe: Probe,
    /// Memory row that must not be returned (a query's own row).
    pub exclude_id: Option<usize>,
}

impl QueryOptions {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            probe: Probe::Default,
            exclude_id: None,
        }
    }

    pub fn probe(mut self, probe: Probe) -> Self {
        self.probe = probe;
        self
    }

    pub fn exclude(mut self, id: Option<usize>) -> Self {
        self.exclude_id = id;
        self
    }
}

/// Anything that answers top-k queries over a store's keys.
pub trait Retriever: Sync {
    fn store(&self) -> &MemoryStore;

    /// Returns up to `opts.k` neighbors sorted by descending score.
    fn query(&self, q: &[f32], opts: &QueryOptions) -> Result<Vec<Neighbor>>;

    /// Stable description of the index and its resolved probe setting, hashed
    /// into k-NN cache digests.
    fn descriptor(&self, probe: Probe) -> String;
}

/// Dot product with a fixed accumulation order.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let (ra, rb) = (chunks_a.remainder(), chunks_b.remainder());
    for (x, y) in chunks_a.zip(chunks_b) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]) + tail
}

pub(crate) fn prepare_query(store: &MemoryStore, q: &[f32], k: usize) -> Result<Vec<f32>> {
    crate::error::ensure_dim(store.key_dim(), q.len())?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    crate::store::normalize(q)
}

/// Fraction of ids in `exact` that also appear in `approx`.
pub fn recall_at_k(approx: &[Neighbor], exact: &[Neighbor]) -> Result<f64> {
    if approx.len() != exact.len() {
        return Err(Error::DimensionMismatch {
            expected: exact.len(),
            got: approx.len(),
        });
    }
    if exact.is_empty() {
        return Err(Error::Empty("result list"));
    }
    let hits = approx
        .iter()
        .filter(|a| exact.iter().any(|e| e.id == a.id))
        .count();
    Ok(hits as f64 / exact.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(ids: &[usize]) -> Vec<Neighbor> {
        ids.iter().map(|&id| Neighbor { id, score: 0.0 }).collect()
    }

    #[test]
    fn recall_counts_shared_ids() {
        let e = ids(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        assert_eq!(recall_at_k(&e, &e).unwrap(), 1.0);
        assert_eq!(recall_at_k(&ids(&[10, 11, 12, 13, 14, 15, 16, 17, 18, 19]), &e).unwrap(), 0.0);
        let a = ids(&[0, 1, 2, 3, 4, 5, 6, 70, 80, 90]);
        assert!((recall_at_k(&a, &e).unwrap() - 0.7).abs() < 1e-12);
        assert!(recall_at_k(&ids(&[1]), &e).is_err());
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f32> = (0..19).map(|i| i as f32 * 0.5 - 3.0).collect();
        let b: Vec<f32> = (0..19).map(|i| 1.0 - i as f32 * 0.25).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
        assert!((f64::from(dot(&a, &b)) - naive).abs() < 1e-4);
    }
}
