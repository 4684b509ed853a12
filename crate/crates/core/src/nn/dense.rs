use rand::Rng;

use super::{Param, Real};
use crate::error::{ensure_dim, Result};

/// Affine map `y = x W + b` with `W` stored row-major as `in_dim x out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub w: Param<T>,
    pub b: Param<T>,
}

/// Gradients returned by [`dense_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads<T> {
    pub dw: Vec<T>,
    pub db: Vec<T>,
    pub dx: Vec<T>,
}

/// Batched forward pass; `x` is `batch x in_dim`, the result `batch x out_dim`.
pub fn dense_forward<T: Real>(w: &[T], b: &[T], x: &[T], in_dim: usize, out_dim: usize) -> Result<Vec<T>> {
    ensure_dim(in_dim * out_dim, w.len())?;
    ensure_dim(out_dim, b.len())?;
    if x.len() % in_dim != 0 {
        return Err(crate::Error::DimensionMismatch {
            expected: in_dim,
            got: x.len() % in_dim,
        });
    }
    let mut y = Vec::with_capacity(x.len() / in_dim * out_dim);
    for row in x.chunks_exact(in_dim) {
        let start = y.len();
        y.extend_from_slice(b);
        affine_acc(w, row, &mut y[start..], out_dim);
    }
    Ok(y)
}

/// Batched backward pass for cached input `x` and upstream gradient `dy`.
pub fn dense_backward<T: Real>(w: &[T], x: &[T], dy: &[T], in_dim: usize, out_dim: usize) -> Result<DenseGrads<T>> {
    ensure_dim(in_dim * out_dim, w.len())?;
    ensure_dim(x.len() / in_dim * out_dim, dy.len())?;
    let mut g = DenseGrads {
        dw: vec![T::zero(); w.len()],
        db: vec![T::zero(); out_dim],
        dx: vec![T::zero(); x.len()],
    };
    for ((xr, dyr), dxr) in x
        .chunks_exact(in_dim)
        .zip(dy.chunks_exact(out_dim))
        .zip(g.dx.chunks_exact_mut(in_dim))
    {
        outer_acc(xr, dyr, &mut g.dw, out_dim);
        for (acc, &d) in g.db.iter_mut().zip(dyr) {
            *acc += d;
        }
        transpose_apply(w, dyr, dxr, out_dim);
    }
    Ok(g)
}

/// `y += x W`
#[inline]
pub(crate) fn affine_acc<T: Real>(w: &[T], x: &[T], y: &mut [T], out_dim: usize) {
    for (&xi, wrow) in x.iter().zip(w.chunks_exact(out_dim)) {
        if xi != T::zero() {
            for (yj, &wij) in y.iter_mut().zip(wrow) {
                *yj += xi * wij;
            }
        }
    }
}

/// `dw += x^T dy` for a single row.
#[inline]
pub(crate) fn outer_acc<T: Real>(x: &[T], dy: &[T], dw: &mut [T], out_dim: usize) {
    for (&xi, grow) in x.iter().zip(dw.chunks_exact_mut(out_dim)) {
        for (g, &d) in grow.iter_mut().zip(dy) {
            *g += xi * d;
        }
    }
}

/// `dx = W dy` (overwrites `dx`).
#[inline]
pub(crate) fn transpose_apply<T: Real>(w: &[T], dy: &[T], dx: &mut [T], out_dim: usize) {
    for (dxi, wrow) in dx.iter_mut().zip(w.chunks_exact(out_dim)) {
        *dxi = super::dot(wrow, dy);
    }
}

impl<T: Real> Dense<T> {
    /// Weights from `U(-1/sqrt(in_dim), 1/sqrt(in_dim))`, zero bias.
    pub fn uniform<R: Rng>(name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            w: Param::uniform(format!("{name}.w"), &[in_dim, out_dim], bound, rng),
            b: Param::zeros(format!("{name}.b"), &[out_dim]),
        }
    }

    pub fn zeros(name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self {
            w: Param::zeros(format!("{name}.w"), &[in_dim, out_dim]),
            b: Param::zeros(format!("{name}.b"), &[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape[1]
    }

    /// Single-row forward pass. The caller guarantees `x.len() == in_dim`.
    pub fn forward(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.in_dim());
        let mut y = self.b.value.clone();
        affine_acc(&self.w.value, x, &mut y, self.out_dim());
        y
    }

    /// Accumulates parameter gradients for input `x` and returns `dL/dx`.
    pub fn backward(&mut self, x: &[T], dy: &[T]) -> Vec<T> {
        let out = self.out_dim();
        outer_acc(x, dy, &mut self.w.grad, out);
        for (g, &d) in self.b.grad.iter_mut().zip(dy) {
            *g += d;
        }
        let mut dx = vec![T::zero(); self.in_dim()];
        transpose_apply(&self.w.value, dy, &mut dx, out);
        dx
    }

    /// Like [`Dense::backward`] but skips the input gradient.
    pub fn backward_params(&mut self, x: &[T], dy: &[T]) {
        let out = self.out_dim();
        outer_acc(x, dy, &mut self.w.grad, out);
        for (g, &d) in self.b.grad.iter_mut().zip(dy) {
            *g += d;
        }
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.w, &mut self.b]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_map() {
        let w = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let x = vec![0.5, -2.0, 3.0, 1.0, 1.0, 1.0];
        assert_eq!(dense_forward(&w, &[0.0; 3], &x, 3, 3).unwrap(), x);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = Dense::<f64>::uniform("l", 4, 3, &mut rng);
        let x = vec![0.3; 8];
        let g = dense_backward(&layer.w.value, &x, &[0.0; 6], 4, 3).unwrap();
        assert!(g.dw.iter().chain(&g.db).chain(&g.dx).all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors() {
        assert!(dense_forward(&[1.0f64; 6], &[0.0; 3], &[1.0; 3], 2, 3).is_err());
        assert!(dense_forward(&[1.0f64; 6], &[0.0; 2], &[1.0; 2], 2, 3).is_err());
        assert!(dense_backward(&[1.0f64; 6], &[1.0; 2], &[1.0; 2], 2, 3).is_err());
    }

    /// Central differences of `L = sum(y * r)` for a fixed random `r`.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, n, batch) = (5, 3, 2);
        let mut layer = Dense::<f64>::uniform("l", m, n, &mut rng);
        for b in &mut layer.b.value {
            *b = rng.random_range(-1.0..1.0);
        }
        let x: Vec<f64> = (0..batch * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..batch * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |w: &[f64], b: &[f64], x: &[f64]| -> f64 {
            dense_forward(w, b, x, m, n).unwrap().iter().zip(&r).map(|(y, r)| y * r).sum()
        };
        let g = dense_backward(&layer.w.value, &x, &r, m, n).unwrap();
        let h = 1e-5;
        let rel = |a: f64, f: f64| (a - f).abs() / (a.abs() + f.abs()).max(1e-12);
        let mut worst: f64 = 0.0;
        for i in 0..layer.w.value.len() {
            let (mut p, mut q) = (layer.w.value.clone(), layer.w.value.clone());
            p[i] += h;
            q[i] -= h;
            let fd = (loss(&p, &layer.b.value, &x) - loss(&q, &layer.b.value, &x)) / (2.0 * h);
            worst = worst.max(rel(g.dw[i], fd));
        }
        for i in 0..n {
            let (mut p, mut q) = (layer.b.value.clone(), layer.b.value.clone());
            p[i] += h;
            q[i] -= h;
            let fd = (loss(&layer.w.value, &p, &x) - loss(&layer.w.value, &q, &x)) / (2.0 * h);
            worst = worst.max(rel(g.db[i], fd));
        }
        for i in 0..x.len() {
            let (mut p, mut q) = (x.clone(), x.clone());
            p[i] += h;
            q[i] -= h;
            let fd = (loss(&layer.w.value, &layer.b.value, &p) - loss(&layer.w.value, &layer.b.value, &q)) / (2.0 * h);
            worst = worst.max(rel(g.dx[i], fd));
        }
        assert!(worst < 1e-6, "max rel err {worst}");
    }

    #[test]
    fn single_row_methods_agree_with_batched() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut layer = Dense::<f64>::uniform("l", 4, 2, &mut rng);
        let x = [0.1, -0.4, 0.9, 0.2];
        let dy = [0.7, -1.3];
        assert_eq!(layer.forward(&x), dense_forward(&layer.w.value, &layer.b.value, &x, 4, 2).unwrap());
        let g = dense_backward(&layer.w.value, &x, &dy, 4, 2).unwrap();
        let dx = layer.backward(&x, &dy);
        assert_eq!(dx, g.dx);
        assert_eq!(layer.w.grad, g.dw);
        assert_eq!(layer.b.grad, g.db);
    }

    use rand::Rng;
}
