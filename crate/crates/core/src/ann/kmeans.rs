//! Spherical k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::dot;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// `n_clusters * dim`, unit rows.
    pub centroids: Vec<f32>,
    /// Cluster of every input row, consistent with the final centroids.
    pub assignment: Vec<u32>,
    pub iterations: usize,
}

/// Clusters unit-norm rows of `data` into `n_clusters` groups by cosine
/// similarity. Output depends only on the inputs and `seed`.
pub fn spherical_kmeans(
    data: &[f32],
    dim: usize,
    n_clusters: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMeansResult> {
    let n = data.len() / dim.max(1);
    if n_clusters == 0 {
        return Err(Error::InvalidArgument("n_lists must be at least 1".into()));
    }
    if n_clusters > n {
        return Err(Error::InvalidArgument(format!(
            "n_lists ({n_clusters}) exceeds number of vectors ({n})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(data, dim, n, n_clusters, &mut rng);

    let mut prev: Option<Vec<u32>> = None;
    let mut iterations = 0;
    loop {
        let assignment = assign(data, dim, &centroids);
        let converged = prev.as_ref() == Some(&assignment);
        if converged || iterations >= max_iters {
            return Ok(KMeansResult {
                centroids,
                assignment,
                iterations,
            });
        }
        update(data, dim, &assignment, &mut centroids);
        prev = Some(assignment);
        iterations += 1;
    }
}

fn row(data: &[f32], dim: usize, i: usize) -> &[f32] {
    &data[i * dim..(i + 1) * dim]
}

fn seed_plus_plus(data: &[f32], dim: usize, n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(row(data, dim, first));
    // squared chord distance to the nearest chosen centroid: 2 - 2cos
    let mut dist: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| chord2(row(data, dim, i), row(&centroids, dim, 0)))
        .collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // every point coincides with a centroid already
            rng.random_range(0..n)
        };
        centroids.extend_from_slice(row(data, dim, pick));
        let newest = row(&centroids, dim, c).to_vec();
        dist.par_iter_mut().enumerate().for_each(|(i, d)| {
            let cand = chord2(row(data, dim, i), &newest);
            if cand < *d {
                *d = cand;
            }
        });
    }
    centroids
}

fn chord2(a: &[f32], b: &[f32]) -> f64 {
    (2.0 - 2.0 * f64::from(dot(a, b))).max(0.0)
}

/// Index of the most similar centroid, ties to the smaller index.
pub(crate) fn nearest(x: &[f32], centroids: &[f32], dim: usize) -> u32 {
    let mut best = 0u32;
    let mut best_score = f32::NEG_INFINITY;
    for (c, cent) in centroids.chunks_exact(dim).enumerate() {
        let s = dot(x, cent);
        if s > best_score {
            best_score = s;
            best = c as u32;
        }
    }
    best
}

fn assign(data: &[f32], dim: usize, centroids: &[f32]) -> Vec<u32> {
    data.par_chunks_exact(dim)
        .map(|x| nearest(x, centroids, dim))
        .collect()
}

fn update(data: &[f32], dim: usize, assignment: &[u32], centroids: &mut [f32]) {
    let k = centroids.len() / dim;
    let mut sums = vec![0.0f64; k * dim];
    for (x, &c) in data.chunks_exact(dim).zip(assignment) {
        let s = &mut sums[c as usize * dim..(c as usize + 1) * dim];
        for (acc, &v) in s.iter_mut().zip(x) {
            *acc += f64::from(v);
        }
    }
    for (c, s) in sums.chunks_exact(dim).enumerate() {
        let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        // empty or degenerate cluster keeps its previous centroid
        if norm > 0.0 {
            for (dst, &v) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(s) {
                *dst = (v / norm) as f32;
            }
        }
    }
}
