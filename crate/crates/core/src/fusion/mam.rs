//! Memory attention module with hand-derived backward pass.
//!
//! Scores use the factorization `<q, m_j W_k> = m_j . (W_k q)`, so a layer
//! costs `O(k d + d^2)` instead of projecting all `k` keys. The key map has no
//! bias: it would add the same constant to every score of a query, which the
//! softmax ignores, leaving a parameter whose gradient is identically zero.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Retrieved;
use crate::error::{ensure_dim, Error, Result};
use crate::nn::dense::{affine_acc, outer_acc, transpose_apply};
use crate::nn::{dot, softmax, softmax_backward, Dense, Param, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MamConfig {
    /// Query and key dimension.
    pub d: usize,
    /// Value dimension.
    pub d_prime: usize,
    pub num_layers: usize,
}

impl MamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d_prime == 0 || self.num_layers == 0 {
            return Err(Error::InvalidArgument(format!(
                "memory attention needs positive dims and layers, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MamLayer<T> {
    pub psi_q: Dense<T>,
    /// Key projection weights, `d x d`, applied as `m W`.
    pub psi_k: Param<T>,
    pub chi: Dense<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryAttention<T> {
    config: MamConfig,
    pub layers: Vec<MamLayer<T>>,
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    input: Vec<T>,
    q: Vec<T>,
    attn: Vec<T>,
    mixed: Vec<T>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct MamCache<T> {
    nn: Retrieved<T>,
    layers: Vec<LayerCache<T>>,
}

/// Per-layer attention over the retrieved neighbors of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionTrace {
    pub ids: Vec<usize>,
    pub layers: Vec<Vec<f64>>,
    pub refined: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TraceJson {
    ids: Vec<usize>,
    layers: Vec<Vec<f64>>,
    refined_norm: f64,
}

impl FusionTrace {
    pub fn refined_norm(&self) -> f64 {
        self.refined.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `{"ids": [...], "layers": [[w...], ...], "refined_norm": float}`
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(TraceJson {
            ids: self.ids.clone(),
            layers: self.layers.clone(),
            refined_norm: self.refined_norm(),
        })
        .expect("trace is always serializable")
    }
}

impl<T: Real> MemoryAttention<T> {
    /// `psi_q`/`psi_k` get uniform fan-in init; every `chi` starts at zero.
    pub fn new<R: Rng>(config: MamConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.num_layers)
            .map(|l| MamLayer {
                psi_q: Dense::uniform(&format!("mam.{l}.psi_q"), config.d, config.d, rng),
                psi_k: Param::uniform(
                    format!("mam.{l}.psi_k.w"),
                    &[config.d, config.d],
                    1.0 / (config.d as f64).sqrt(),
                    rng,
                ),
                chi: Dense::zeros(&format!("mam.{l}.chi"), config.d_prime, config.d),
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> MamConfig {
        self.config
    }

    fn check_inputs(&self, z: &[T], nn: &Retrieved<T>) -> Result<()> {
        ensure_dim(self.config.d, z.len())?;
        ensure_dim(self.config.d, nn.key_dim)?;
        ensure_dim(self.config.d_prime, nn.value_dim)?;
        if nn.k() == 0 {
            return Err(Error::Empty("retrieved neighbors"));
        }
        Ok(())
    }

    fn run(&self, z: &[T], nn: &Retrieved<T>, mut caches: Option<&mut Vec<LayerCache<T>>>) -> Result<(Vec<T>, Vec<Vec<T>>)> {
        self.check_inputs(z, nn)?;
        let d = self.config.d;
        let scale = T::one() / T::lit(d as f64).sqrt();
        let mut f = z.to_vec();
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut qk = vec![T::zero(); d];
        for layer in &self.layers {
            let q = layer.psi_q.forward(&f);
            transpose_apply(&layer.psi_k.value, &q, &mut qk, d);
            let scores: Vec<T> = (0..nn.k()).map(|j| dot(nn.key(j), &qk) * scale).collect();
            let attn = softmax(&scores)?;
            let mut mixed = vec![T::zero(); nn.value_dim];
            for (j, &a) in attn.iter().enumerate() {
                crate::nn::axpy(a, nn.value(j), &mut mixed);
            }
            let update = layer.chi.forward(&mixed);
            let next: Vec<T> = z.iter().zip(&update).map(|(&a, &b)| a + b).collect();
            if let Some(c) = caches.as_deref_mut() {
                c.push(LayerCache {
                    input: std::mem::replace(&mut f, next),
                    q,
                    attn: attn.clone(),
                    mixed,
                });
            } else {
                f = next;
            }
            weights.push(attn);
        }
        Ok((f, weights))
    }

    /// Refined embedding plus the cache for [`MemoryAttention::backward`].
    pub fn forward(&self, z: &[T], nn: &Retrieved<T>) -> Result<(Vec<T>, MamCache<T>)> {
        let mut layers = Vec::with_capacity(self.layers.len());
        let (out, _) = self.run(z, nn, Some(&mut layers))?;
        Ok((
            out,
            MamCache {
                nn: nn.clone(),
                layers,
            },
        ))
    }

    /// Attention weights at every layer, computed by the same path as `forward`.
    pub fn trace(&self, z: &[T], nn: &Retrieved<T>) -> Result<FusionTrace> {
        let (out, weights) = self.run(z, nn, None)?;
        Ok(FusionTrace {
            ids: nn.ids.clone(),
            layers: weights
                .into_iter()
                .map(|w| w.into_iter().map(T::as_f64).collect())
                .collect(),
            refined: out.into_iter().map(T::as_f64).collect(),
        })
    }

    /// Accumulates parameter gradients and returns `dL/dz`.
    pub fn backward(&mut self, cache: &MamCache<T>, d_out: &[T]) -> Result<Vec<T>> {
        let d = self.config.d;
        ensure_dim(d, d_out.len())?;
        ensure_dim(self.layers.len(), cache.layers.len())?;
        ensure_dim(d, cache.nn.key_dim)?;
        ensure_dim(self.config.d_prime, cache.nn.value_dim)?;
        let nn = &cache.nn;
        let scale = T::one() / T::lit(d as f64).sqrt();

        let mut dz = vec![T::zero(); d];
        let mut df = d_out.to_vec();
        let mut du = vec![T::zero(); self.config.d_prime];
        let mut g = vec![T::zero(); d];
        let mut dq = vec![T::zero(); d];
        let mut d_in = vec![T::zero(); d];

        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers).rev() {
            // f = z + chi(mixed)
            for (a, &b) in dz.iter_mut().zip(&df) {
                *a += b;
            }
            layer.chi.backward_params(&lc.mixed, &df);
            transpose_apply(&layer.chi.w.value, &df, &mut du, d);

            // mixed = sum_j a_j v_j
            let da: Vec<T> = (0..nn.k()).map(|j| dot(nn.value(j), &du)).collect();
            let ds: Vec<T> = softmax_backward(&lc.attn, &da)
                .into_iter()
                .map(|x| x * scale)
                .collect();

            // s_j = m_j . (W_k q)
            g.iter_mut().for_each(|x| *x = T::zero());
            for (j, &dsj) in ds.iter().enumerate() {
                crate::nn::axpy(dsj, nn.key(j), &mut g);
            }
            outer_acc(&g, &lc.q, &mut layer.psi_k.grad, d);
            dq.iter_mut().for_each(|x| *x = T::zero());
            affine_acc(&layer.psi_k.value, &g, &mut dq, d);

            // q = psi_q(input)
            layer.psi_q.backward_params(&lc.input, &dq);
            transpose_apply(&layer.psi_q.w.value, &dq, &mut d_in, d);
            std::mem::swap(&mut df, &mut d_in);
        }
        // the first layer's input is z itself
        for (a, &b) in dz.iter_mut().zip(&df) {
            *a += b;
        }
        Ok(dz)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers
            .iter()
            .flat_map(|l| {
                l.psi_q
                    .params()
                    .into_iter()
                    .chain(std::iter::once(&l.psi_k))
                    .chain(l.chi.params())
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let MamLayer { psi_q, psi_k, chi } = l;
                psi_q
                    .params_mut()
                    .into_iter()
                    .chain(std::iter::once(psi_k))
                    .chain(chi.params_mut())
            })
            .collect()
    }
}
