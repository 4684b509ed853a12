//! Classification losses: label-smoothed cross-entropy and logit adjustment.

use crate::error::{Error, Result};
use crate::nn::{log_softmax, Real};

/// `raw_c + tau * ln(count_c / N)`.
pub fn lace_logits(raw: &[f64], counts: &[usize], tau: f64) -> Result<Vec<f64>> {
    let offsets = lace_offsets(counts, tau)?;
    let total: usize = counts.iter().sum();
    // re-add the constant dropped by `lace_offsets` to get the textbook form
    let shift = if tau == 0.0 {
        0.0
    } else {
        let max = *counts.iter().max().expect("non-empty after lace_offsets");
        tau * (max as f64 / total as f64).ln()
    };
    Ok(raw.iter().zip(&offsets).map(|(r, o)| r + o + shift).collect())
}

/// Per-class logit offsets `tau * ln(count_c / max_count)`.
///
/// These differ from `tau * ln(count_c / N)` by a constant, which softmax
/// cross-entropy ignores. Anchoring at the largest class makes balanced
/// counts produce exact zeros, so adjusted training is bit-identical to plain
/// training in that case.
pub fn lace_offsets(counts: &[usize], tau: f64) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::Empty("class counts"));
    }
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be >= 0, got {tau}")));
    }
    if tau == 0.0 {
        return Ok(vec![0.0; counts.len()]);
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InvalidArgument(format!(
            "class {c} has no training examples; logit adjustment is undefined"
        )));
    }
    let max = *counts.iter().max().unwrap() as f64;
    Ok(counts.iter().map(|&n| tau * (n as f64 / max).ln()).collect())
}

/// Cross-entropy against the smoothed target (`1 - eps` on `label`,
/// `eps / (C - 1)` elsewhere). Returns the loss and `dL/dlogits`.
pub fn ce_label_smoothing<T: Real>(logits: &[T], label: usize, epsilon: f64) -> Result<(T, Vec<T>)> {
    let c = logits.len();
    if label >= c {
        return Err(Error::InvalidArgument(format!("label {label} out of range for {c} classes")));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon must be in [0, 1), got {epsilon}")));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let (on, off) = if c == 1 {
        (T::one(), T::zero())
    } else {
        (T::lit(1.0 - epsilon), T::lit(epsilon / (c - 1) as f64))
    };
    let logp = log_softmax(logits);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(c);
    for (i, &lp) in logp.iter().enumerate() {
        let t = if i == label { on } else { off };
        if t != T::zero() {
            loss -= t * lp;
        }
        grad.push(lp.exp() - t);
    }
    Ok((loss, grad))
}
