use super::Retrieved;
use crate::error::{ensure_dim, Error, Result};
use crate::nn::{Dense, Param, Real};

/// Unlearned average of retrieved values, mapped back to query space.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFusion<T> {
    pub chi: Dense<T>,
}

#[derive(Debug, Clone)]
pub struct MeanCache<T> {
    mean: Vec<T>,
}

impl<T: Real> MeanFusion<T> {
    /// `chi` starts at zero so the module is the identity on `z`.
    pub fn new(d: usize, d_prime: usize) -> Self {
        Self {
            chi: Dense::zeros("mean.chi", d_prime, d),
        }
    }

    pub fn forward(&self, z: &[T], nn: &Retrieved<T>) -> Result<(Vec<T>, MeanCache<T>)> {
        ensure_dim(self.chi.out_dim(), z.len())?;
        ensure_dim(self.chi.in_dim(), nn.value_dim)?;
        if nn.k() == 0 {
            return Err(Error::Empty("retrieved values"));
        }
        let mut mean = vec![T::zero(); nn.value_dim];
        for j in 0..nn.k() {
            for (m, &v) in mean.iter_mut().zip(nn.value(j)) {
                *m += v;
            }
        }
        let inv_k = T::one() / T::lit(nn.k() as f64);
        mean.iter_mut().for_each(|m| *m *= inv_k);
        let mapped = self.chi.forward(&mean);
        let out = z.iter().zip(&mapped).map(|(&a, &b)| a + b).collect();
        Ok((out, MeanCache { mean }))
    }

    /// Accumulates `chi` gradients; returns `dL/dz`.
    pub fn backward(&mut self, cache: &MeanCache<T>, d_out: &[T]) -> Vec<T> {
        self.chi.backward_params(&cache.mean, d_out);
        d_out.to_vec()
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.chi.params().to_vec()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.chi.params_mut().into_iter().collect()
    }
}
