use super::Real;
use crate::error::{Error, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Real>(scores: &[T]) -> Result<Vec<T>> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    if scores.is_empty() {
        return Err(Error::Empty("softmax input"));
    }
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: T = out.iter().copied().sum();
    for o in &mut out {
        *o /= total;
    }
    Ok(out)
}

/// Gradient w.r.t. the scores given the softmax output `a` and `dL/da`.
pub fn softmax_backward<T: Real>(a: &[T], da: &[T]) -> Vec<T> {
    let inner = super::dot(a, da);
    a.iter().zip(da).map(|(&ai, &gi)| ai * (gi - inner)).collect()
}

/// Stable `log(softmax(x))`.
pub fn log_softmax<T: Real>(x: &[T]) -> Vec<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = x.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    x.iter().map(|&v| v - lse).collect()
}
